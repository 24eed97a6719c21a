//! AR(1) log-volatility: prior/likelihood algebra, the independence
//! Metropolis-Hastings path sampler, and the state-equation parameter updates.
//!
//! Derivatives are the exact ones of the stated log densities (checked by
//! finite differences in the tests).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, BandCholesky, TriBand};
use crate::stats::{inv_gamma, std_normal, std_normals, LN_2PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvState {
    pub h: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
    pub h0: f64,
}

impl SvState {
    pub fn new(h: Vec<f64>, rho: f64, sigma2: f64, h0: f64) -> Result<Self> {
        let s = SvState { h, rho, sigma2, h0 };
        s.validate()?;
        Ok(s)
    }

    /// Flat path at `level` with prior-mean parameters.
    pub fn constant(t: usize, level: f64) -> Self {
        SvState { h: vec![level; t], rho: 2.0 * 25.0 / 30.0 - 1.0, sigma2: 0.1, h0: level }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) || !(self.sigma2 > 0.0) || self.h.iter().any(|v| !v.is_finite()) || !self.h0.is_finite() {
            return Err(Error::invalid("SV state violates |rho| < 1, sigma2 > 0 or finite h"));
        }
        Ok(())
    }

    /// `√ω_t = exp(h_t / 2)`.
    pub fn sqrt_omega(&self) -> Vec<f64> {
        self.h.iter().map(|h| (0.5 * h).exp()).collect()
    }
}

/// Hyperparameters of the state-equation priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvPriors {
    /// `(ρ + 1)/2 ~ Beta(a, b)`.
    pub rho_a: f64,
    pub rho_b: f64,
    /// `σ² ~ IG(shape, scale)`.
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Default for SvPriors {
    fn default() -> Self {
        // IG(3, 0.2) has mean 0.1 and variance 0.01
        SvPriors { rho_a: 25.0, rho_b: 5.0, sigma2_shape: 3.0, sigma2_scale: 0.2 }
    }
}

/// Running sampler diagnostics for one equation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MhDiagnostics {
    pub proposals: u64,
    pub acceptances: u64,
    /// `newton_iterations[i]` counts mode searches that took `i + 1` iterations;
    /// the last bucket collects searches that hit the cap without converging.
    pub newton_iterations: Vec<u64>,
    pub newton_failures: u64,
    pub skipped: u64,
    pub band_fallbacks: u64,
    pub mode_gradient_norm: f64,
    pub rho_proposals: u64,
    pub rho_acceptances: u64,
    pub slice_updates: u64,
    pub slice_evaluations: u64,
}

impl MhDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            return f64::NAN;
        }
        self.acceptances as f64 / self.proposals as f64
    }

    /// Fraction of mode searches that converged within the iteration cap.
    pub fn newton_convergence_rate(&self) -> f64 {
        let total: u64 = self.newton_iterations.iter().sum();
        if total == 0 {
            return f64::NAN;
        }
        1.0 - self.newton_failures as f64 / total as f64
    }

    pub fn mean_newton_iterations(&self) -> f64 {
        let total: u64 = self.newton_iterations.iter().sum();
        if total == 0 {
            return f64::NAN;
        }
        self.newton_iterations.iter().enumerate().map(|(i, c)| (i + 1) as f64 * *c as f64).sum::<f64>() / total as f64
    }

    fn record_newton(&mut self, iterations: usize, converged: bool) {
        if self.newton_iterations.len() < NEWTON_MAX_ITER {
            self.newton_iterations.resize(NEWTON_MAX_ITER, 0);
        }
        self.newton_iterations[iterations.clamp(1, NEWTON_MAX_ITER) - 1] += 1;
        if !converged {
            self.newton_failures += 1;
        }
    }

    pub fn merge(&mut self, other: &MhDiagnostics) {
        self.proposals += other.proposals;
        self.acceptances += other.acceptances;
        if self.newton_iterations.len() < other.newton_iterations.len() {
            self.newton_iterations.resize(other.newton_iterations.len(), 0);
        }
        for (a, b) in self.newton_iterations.iter_mut().zip(&other.newton_iterations) {
            *a += b;
        }
        self.newton_failures += other.newton_failures;
        self.skipped += other.skipped;
        self.band_fallbacks += other.band_fallbacks;
        self.mode_gradient_norm = other.mode_gradient_norm;
        self.rho_proposals += other.rho_proposals;
        self.rho_acceptances += other.rho_acceptances;
        self.slice_updates += other.slice_updates;
        self.slice_evaluations += other.slice_evaluations;
    }
}

pub const NEWTON_TOL: f64 = 1e-4;
pub const NEWTON_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 20;
/// Banded steps before the mode search switches to the exact dense Hessian.
/// The band alone converges only linearly when `A⁻¹` has sizeable entries off
/// the band; the proposal keeps the band either way.
const BAND_ITERATIONS: usize = 10;

/// Prior precision `D'D / σ²` of the path given `h0`.
pub fn prior_precision(t: usize, rho: f64, sigma2: f64) -> TriBand {
    let mut band = TriBand::zeros(t);
    for i in 0..t {
        band.diag[i] = if i + 1 < t { (1.0 + rho * rho) / sigma2 } else { 1.0 / sigma2 };
    }
    for o in band.off.iter_mut() {
        *o = -rho / sigma2;
    }
    band
}

/// Log prior `log p(h | ρ, σ², h0)`, its gradient, and its (negative) Hessian band.
pub fn sv_log_prior(h: &[f64], rho: f64, sigma2: f64, h0: f64) -> (f64, Vec<f64>, TriBand) {
    let t = h.len();
    let mut ss = 0.0;
    let mut prev = h0;
    for &x in h {
        let e = x - rho * prev;
        ss += e * e;
        prev = x;
    }
    let logp = -0.5 * t as f64 * (LN_2PI + sigma2.ln()) - ss / (2.0 * sigma2);
    let prec = prior_precision(t, rho, sigma2);
    let mut grad: Vec<f64> = prec.mul_vec(h).into_iter().map(|v| -v).collect();
    if t > 0 {
        grad[0] += rho * h0 / sigma2;
    }
    (logp, grad, prec)
}

/// Precomputed pieces of `A = K_own + K_other + I` used by the volatility sampler.
#[derive(Debug, Clone)]
pub struct MarginalCovariance {
    pub inverse: DMatrix<f64>,
    pub logdet: f64,
}

impl MarginalCovariance {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (ch, _) = linalg::cholesky_jittered(a)?;
        let logdet = linalg::chol_logdet(&ch);
        let mut inverse = ch.inverse();
        inverse = (&inverse + inverse.transpose()) * 0.5;
        Ok(MarginalCovariance { inverse, logdet })
    }

    pub fn identity(t: usize) -> Self {
        MarginalCovariance { inverse: DMatrix::identity(t, t), logdet: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }
}

/// Likelihood pieces at a given path.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Negative Hessian truncated to its tridiagonal band.
    pub neg_hessian: TriBand,
    /// Cross term `¼ s ⊙ Ŷ`, used when the band needs a fallback.
    pub cross: Vec<f64>,
}

fn likelihood_core(h: &[f64], cov: &MarginalCovariance, y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let t = h.len();
    let yhat: Vec<f64> = y.iter().zip(h).map(|(y, h)| y * (-0.5 * h).exp()).collect();
    let s = &cov.inverse * DVector::from_column_slice(&yhat);
    let quad: f64 = yhat.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
    let sum_h: f64 = h.iter().sum();
    let value = -0.5 * t as f64 * LN_2PI - 0.5 * sum_h - 0.5 * cov.logdet - 0.5 * quad;
    (value, yhat, s.as_slice().to_vec())
}

/// `log N(Ỹ; 0, √Ω A √Ω)` only.
pub fn sv_log_likelihood_value(h: &[f64], cov: &MarginalCovariance, y: &[f64]) -> f64 {
    likelihood_core(h, cov, y).0
}

/// `log N(Ỹ; 0, √Ω A √Ω)` with gradient and tridiagonal negative Hessian.
pub fn sv_log_likelihood(h: &[f64], cov: &MarginalCovariance, y: &[f64]) -> LikelihoodEval {
    let t = h.len();
    let (value, yhat, s) = likelihood_core(h, cov, y);
    let gradient: Vec<f64> = (0..t).map(|i| -0.5 + 0.5 * s[i] * yhat[i]).collect();
    let p = &cov.inverse;
    let cross: Vec<f64> = (0..t).map(|i| 0.25 * s[i] * yhat[i]).collect();
    let mut band = TriBand::zeros(t);
    for i in 0..t {
        band.diag[i] = 0.25 * yhat[i] * yhat[i] * p[(i, i)] + cross[i];
        if i + 1 < t {
            band.off[i] = 0.25 * yhat[i] * p[(i, i + 1)] * yhat[i + 1];
        }
    }
    LikelihoodEval { value, gradient, neg_hessian: band, cross }
}

/// Exact log conditional posterior of the path (up to a constant in h).
pub fn log_posterior(state: &SvState, h: &[f64], cov: &MarginalCovariance, y: &[f64]) -> f64 {
    sv_log_likelihood_value(h, cov, y) + sv_log_prior(h, state.rho, state.sigma2, state.h0).0
}

/// Exact negative Hessian of the log posterior, dense.
fn dense_neg_hessian(h: &[f64], cov: &MarginalCovariance, y: &[f64], prior: &TriBand) -> DMatrix<f64> {
    let (_, yhat, s) = likelihood_core(h, cov, y);
    let mut m = DMatrix::from_fn(h.len(), h.len(), |i, k| 0.25 * yhat[i] * cov.inverse[(i, k)] * yhat[k]);
    for i in 0..h.len() {
        m[(i, i)] += 0.25 * s[i] * yhat[i];
    }
    m + prior.to_dense()
}

/// Banded precision of the Gaussian approximation at `h`, with fallbacks when
/// the likelihood band is indefinite. The second value reports a fallback.
fn approx_precision(lik: &LikelihoodEval, prior: &TriBand) -> (BandCholesky, bool) {
    if let Some(ch) = lik.neg_hessian.add(prior).cholesky() {
        return (ch, false);
    }
    let mut diag_only = TriBand::zeros(prior.len());
    for i in 0..prior.len() {
        diag_only.diag[i] = lik.neg_hessian.diag[i] - lik.cross[i] + lik.cross[i].max(0.0);
    }
    if let Some(ch) = diag_only.add(prior).cholesky() {
        return (ch, true);
    }
    (prior.cholesky().expect("AR(1) prior precision is positive definite"), true)
}

/// Gaussian proposal `N(mode, (LLᵀ)⁻¹)`.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub mode: Vec<f64>,
    pub chol: BandCholesky,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub fallback: bool,
}

impl Proposal {
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.mode).map(|(a, b)| a - b).collect();
        let u = self.chol.mul_upper(&d);
        let t = x.len() as f64;
        -0.5 * t * LN_2PI + 0.5 * self.chol.logdet() - 0.5 * u.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn draw(&self, z: &[f64]) -> Vec<f64> {
        let w = self.chol.solve_upper(z);
        self.mode.iter().zip(&w).map(|(m, w)| m + w).collect()
    }
}

/// Newton-Raphson for the mode of the exact posterior, started at `start`:
/// banded Hessian steps first, exact dense steps once those stall.
pub fn find_mode(state: &SvState, start: &[f64], cov: &MarginalCovariance, y: &[f64]) -> Proposal {
    let t = start.len();
    let mut h = start.to_vec();
    let mut obj = log_posterior(state, &h, cov, y);
    let mut converged = false;
    let mut iterations = 0;
    let mut any_fallback = false;
    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let lik = sv_log_likelihood(&h, cov, y);
        let (_, pg, prior_band) = sv_log_prior(&h, state.rho, state.sigma2, state.h0);
        let grad: Vec<f64> = lik.gradient.iter().zip(&pg).map(|(a, b)| a + b).collect();
        let (ch, fb) = approx_precision(&lik, &prior_band);
        any_fallback |= fb;
        let dense_step = (iterations > BAND_ITERATIONS)
            .then(|| dense_neg_hessian(&h, cov, y, &prior_band).cholesky())
            .flatten()
            .map(|c| c.solve(&DVector::from_column_slice(&grad)).as_slice().to_vec());
        let step = dense_step.unwrap_or_else(|| ch.solve(&grad));
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = h.iter().zip(&step).map(|(a, s)| a + scale * s).collect();
            let v = log_posterior(state, &cand, cov, y);
            if v.is_finite() && v >= obj - 1e-10 * obj.abs().max(1.0) {
                accepted = Some((cand, v));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            break;
        };
        let moved = cand.iter().zip(&h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        h = cand;
        obj = v;
        if moved < NEWTON_TOL {
            converged = true;
            break;
        }
    }
    let lik = sv_log_likelihood(&h, cov, y);
    let (_, pg, prior_band) = sv_log_prior(&h, state.rho, state.sigma2, state.h0);
    let gradient_norm = lik.gradient.iter().zip(&pg).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    let (chol, fb) = approx_precision(&lik, &prior_band);
    debug_assert_eq!(h.len(), t);
    Proposal { mode: h, chol, iterations, converged, gradient_norm, fallback: any_fallback || fb }
}

/// MH log acceptance ratio of moving `current → proposed` under proposal `q`.
pub fn log_acceptance_ratio(
    state: &SvState,
    current: &[f64],
    proposed: &[f64],
    q: &Proposal,
    cov: &MarginalCovariance,
    y: &[f64],
) -> f64 {
    log_posterior(state, proposed, cov, y) - log_posterior(state, current, cov, y) + q.log_density(current)
        - q.log_density(proposed)
}

/// Independence-MH update of the full path marginal of the GP components.
///
/// `y` is the response net of contemporaneous terms and intercept; `cov`
/// holds `A = K_own + K_other + I` at the current hyperparameters.
pub fn sample_h_independence_mh<R: Rng + ?Sized>(
    state: &SvState,
    cov: &MarginalCovariance,
    y: &[f64],
    rng: &mut R,
    diag: &mut MhDiagnostics,
) -> (SvState, bool) {
    let q = find_mode(state, &state.h, cov, y);
    diag.record_newton(q.iterations, q.converged);
    diag.mode_gradient_norm = q.gradient_norm;
    if q.fallback {
        diag.band_fallbacks += 1;
    }
    if q.mode.iter().any(|v| !v.is_finite()) {
        diag.skipped += 1;
        return (state.clone(), false);
    }
    let z = std_normals(rng, y.len());
    let proposed = q.draw(&z);
    let u: f64 = rng.random();
    diag.proposals += 1;
    let log_alpha = log_acceptance_ratio(state, &state.h, &proposed, &q, cov, y);
    if log_alpha.is_finite() && u.ln() < log_alpha {
        diag.acceptances += 1;
        let mut next = state.clone();
        next.h = proposed;
        (next, true)
    } else {
        (state.clone(), false)
    }
}

/// Cap on shrinkage steps of the slice update; the bracket collapses onto the
/// current path long before this in practice.
pub const SLICE_MAX_STEPS: usize = 200;

/// Elliptical slice update of the path with the AR(1) prior as the Gaussian
/// reference and the marginal GP likelihood as the slice function. Returns the
/// new state and the number of likelihood evaluations.
pub fn elliptical_slice_h<R: Rng + ?Sized>(
    state: &SvState,
    cov: &MarginalCovariance,
    y: &[f64],
    rng: &mut R,
) -> (SvState, usize) {
    let t = state.h.len();
    let mut prior_mean = Vec::with_capacity(t);
    let mut m = state.h0;
    for _ in 0..t {
        m *= state.rho;
        prior_mean.push(m);
    }
    let chol = prior_precision(t, state.rho, state.sigma2)
        .cholesky()
        .expect("AR(1) prior precision is positive definite");
    let nu = chol.solve_upper(&std_normals(rng, t));
    let u: f64 = rng.random();
    let threshold = sv_log_likelihood_value(&state.h, cov, y) + u.ln();
    let mut theta = rng.random::<f64>() * std::f64::consts::TAU;
    let (mut lo, mut hi) = (theta - std::f64::consts::TAU, theta);
    for evals in 1..=SLICE_MAX_STEPS {
        let (sn, cs) = theta.sin_cos();
        let cand: Vec<f64> =
            (0..t).map(|i| prior_mean[i] + (state.h[i] - prior_mean[i]) * cs + nu[i] * sn).collect();
        let v = sv_log_likelihood_value(&cand, cov, y);
        if v.is_finite() && v > threshold {
            let mut next = state.clone();
            next.h = cand;
            return (next, evals);
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + rng.random::<f64>() * (hi - lo);
    }
    (state.clone(), SLICE_MAX_STEPS)
}

fn rho_log_target(rho: f64, h: &[f64], sigma2: f64, h0: f64, priors: &SvPriors) -> f64 {
    if !(rho.abs() < 1.0) {
        return f64::NEG_INFINITY;
    }
    let x = 0.5 * (rho + 1.0);
    let prior = (priors.rho_a - 1.0) * x.ln() + (priors.rho_b - 1.0) * (1.0 - x).ln();
    let mut ss = 0.0;
    let mut prev = h0;
    for &v in h {
        let e = v - rho * prev;
        ss += e * e;
        prev = v;
    }
    // h0 ~ N(0, σ²/(1−ρ²))
    let init = 0.5 * (1.0 - rho * rho).ln() - (1.0 - rho * rho) * h0 * h0 / (2.0 * sigma2);
    prior - ss / (2.0 * sigma2) + init
}

/// Gibbs/MH update of `(σ², ρ, h0)` given the path. Returns the new state and
/// whether the ρ proposal was accepted.
pub fn sample_sv_params<R: Rng + ?Sized>(
    state: &SvState,
    priors: &SvPriors,
    rho_step: f64,
    rng: &mut R,
) -> (SvState, bool) {
    let h = &state.h;
    let t = h.len() as f64;
    let rho = state.rho;
    // σ² | h, ρ, h0
    let mut ss = 0.0;
    let mut prev = state.h0;
    for &v in h {
        let e = v - rho * prev;
        ss += e * e;
        prev = v;
    }
    ss += (1.0 - rho * rho) * state.h0 * state.h0;
    let sigma2 = inv_gamma(rng, priors.sigma2_shape + (t + 1.0) / 2.0, priors.sigma2_scale + 0.5 * ss)
        .clamp(1e-12, 1e12);
    // ρ | h, σ², h0 by random-walk MH
    let cand = rho + rho_step * std_normal(rng);
    let cur_lp = rho_log_target(rho, h, sigma2, state.h0, priors);
    let cand_lp = rho_log_target(cand, h, sigma2, state.h0, priors);
    let u: f64 = rng.random();
    let accepted = cand_lp.is_finite() && u.ln() < cand_lp - cur_lp;
    let rho = if accepted { cand } else { rho };
    // h0 | h1, ρ, σ²: N(0, σ²/(1−ρ²)) prior times N(h1; ρ h0, σ²) gives N(ρ h1, σ²)
    let h1 = h.first().copied().unwrap_or(0.0);
    let h0 = rho * h1 + sigma2.sqrt() * std_normal(rng);
    (SvState { h: h.clone(), rho, sigma2, h0 }, accepted)
}

/// Conjugate draw of a constant variance `ω ~ IG(a0 + T/2, b0 + ½ ỹᵀ A⁻¹ ỹ)`.
pub fn sample_homoskedastic_variance<R: Rng + ?Sized>(
    cov: &MarginalCovariance,
    y: &[f64],
    prior_shape: f64,
    prior_scale: f64,
    rng: &mut R,
) -> f64 {
    let yv = DVector::from_column_slice(y);
    let quad = yv.dot(&(&cov.inverse * &yv));
    inv_gamma(rng, prior_shape + 0.5 * y.len() as f64, prior_scale + 0.5 * quad).clamp(1e-300, 1e300)
}

/// Simulate an AR(1) log-volatility path `h_1..h_T` from `h0`.
pub fn simulate_ar1<R: Rng + ?Sized>(t: usize, rho: f64, sigma2: f64, h0: f64, rng: &mut R) -> Vec<f64> {
    let sd = sigma2.sqrt();
    let mut prev = h0;
    (0..t)
        .map(|_| {
            prev = rho * prev + sd * std_normal(rng);
            prev
        })
        .collect()
}
