//! Collapsed MCMC for the GP-VAR, run equation by equation.
//!
//! Each sweep of equation `j` performs, in order:
//! 1. contemporaneous coefficients (and intercept),
//! 2. the log-volatility path marginal of `f` and `g`,
//! 3. `f`, 4. `g` with its grand mean removed,
//! 5.–6. the own- and other-lag kernel hyperparameters,
//! 7. the volatility state-equation parameters,
//! 8. the horseshoe scales.
//!
//! Step 2 reads the kernel indices left by the previous sweep; moving it after
//! 5–6 would break the collapsed structure.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::{EquationDiagnostics, EquationDraws, PosteriorDraws};
use crate::error::{Error, Result};
use crate::gp::gp_log_marginal_for_grid;
use crate::horseshoe::{prior_variance_vector, sample_horseshoe_scales, HorseshoeState};
use crate::kernels::{build_grid, median_heuristic, GridConfig, KernelGrid, KernelKind};
use crate::linalg;
use crate::panel::{build_lag_design, LagDesign, TimePanel};
use crate::stats::{self, std_normals, stream_rng, streams};
use crate::sv::{self, MarginalCovariance, MhDiagnostics, SvPriors, SvState};

/// Prior variance of the optional intercept.
pub const INTERCEPT_PRIOR_VARIANCE: f64 = 100.0;
const RHO_STEP_INIT: f64 = 0.05;
const RHO_ADAPT_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolatilityMode {
    /// AR(1) log-volatility sampled by independence MH.
    Stochastic,
    /// One constant variance per equation with an inverse-Gamma prior.
    Homoskedastic,
    /// `h ≡ 0`, i.e. unit error variance.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total sweeps, burn-in included.
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    pub p: usize,
    pub grid: GridConfig,
    pub include_intercept: bool,
    pub own_kernel: KernelKind,
    pub other_kernel: KernelKind,
    pub volatility: VolatilityMode,
    pub sv_priors: SvPriors,
    /// Inverse-Gamma `(shape, scale)` for the homoskedastic variance.
    pub homoskedastic_prior: (f64, f64),
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        SamplerConfig {
            n_iter: 10_000,
            n_burn: 5_000,
            thin: 2,
            seed,
            p: 5,
            grid: GridConfig::default(),
            include_intercept: false,
            own_kernel: KernelKind::SquaredExponential,
            other_kernel: KernelKind::SquaredExponential,
            volatility: VolatilityMode::Stochastic,
            sv_priors: SvPriors::default(),
            homoskedastic_prior: (0.001, 0.001),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.n_burn {
            return Err(Error::invalid("n_iter must exceed n_burn"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.p == 0 {
            return Err(Error::invalid("lag order must be at least 1"));
        }
        self.grid.validate()
    }

    /// Retained draws: `(n_iter − n_burn) / thin`.
    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.n_burn) / self.thin
    }

    fn is_retained(&self, iter: usize) -> bool {
        iter >= self.n_burn && (iter - self.n_burn + 1) % self.thin == 0
    }
}

/// Latent quantities of one equation.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationState {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub q_row: Vec<f64>,
    pub sv: SvState,
    pub grid_own: usize,
    pub grid_other: usize,
    pub horseshoe: HorseshoeState,
    pub intercept: Option<f64>,
}

impl EquationState {
    pub fn m(&self) -> Vec<f64> {
        self.f.iter().zip(&self.g).map(|(a, b)| a + b).collect()
    }
}

/// Kernel grids of one equation; `other` is `None` when `M = 1`.
#[derive(Debug, Clone)]
pub struct EquationGrids {
    pub own: KernelGrid,
    pub other: Option<KernelGrid>,
}

impl EquationGrids {
    /// `K_own + K_other + I` at the given grid indices.
    pub fn kernel_sum_plus_identity(&self, own: usize, other: usize) -> DMatrix<f64> {
        let mut a = self.own.kernel_matrix(own);
        if let Some(g) = &self.other {
            a += g.kernel_matrix(other);
        }
        for i in 0..a.nrows() {
            a[(i, i)] += 1.0;
        }
        a
    }
}

fn component_grid(kind: KernelKind, rows: &DMatrix<f64>, scales: &DVector<f64>, cfg: &GridConfig) -> Result<KernelGrid> {
    match kind {
        KernelKind::SquaredExponential => {
            let kb = median_heuristic(rows)?;
            build_grid(kind, rows, scales.as_slice(), kb, cfg)
        }
        KernelKind::Linear => build_grid(kind, rows, &vec![1.0; rows.ncols()], f64::NAN, cfg),
        KernelKind::LinearPersistence => {
            build_grid(kind, &DMatrix::zeros(rows.nrows(), 0), &[], f64::NAN, cfg)
        }
    }
}

/// Grids for equation `j`.
pub fn build_equation_grids(design: &LagDesign, j: usize, config: &SamplerConfig) -> Result<EquationGrids> {
    let own = component_grid(config.own_kernel, &design.own[j], &design.scale_own[j], &config.grid)?;
    let other = if design.other[j].ncols() > 0 {
        Some(component_grid(config.other_kernel, &design.other[j], &design.scale_other[j], &config.grid)?)
    } else {
        None
    };
    Ok(EquationGrids { own, other })
}

/// Immutable inputs of one equation's sampler.
#[derive(Debug, Clone)]
pub struct EquationContext {
    pub j: usize,
    pub y: Vec<f64>,
    /// Responses of the preceding equations, one vector per column.
    pub contemporaneous: Vec<Vec<f64>>,
    pub grids: EquationGrids,
}

impl EquationContext {
    pub fn new(design: &LagDesign, j: usize, grids: EquationGrids) -> Self {
        let contemporaneous = (0..j)
            .map(|k| design.contemporaneous[j].column(k).iter().cloned().collect())
            .collect();
        EquationContext { j, y: design.response[j].as_slice().to_vec(), contemporaneous, grids }
    }

    pub fn t(&self) -> usize {
        self.y.len()
    }
}

/// Sampler steps in sweep order, reported to observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStep {
    Contemporaneous,
    Volatility,
    OwnFunction,
    OtherFunction,
    OwnHyperparameters,
    OtherHyperparameters,
    VolatilityParameters,
    Shrinkage,
}

/// Receives the state after every step (test hook).
pub trait SweepObserver {
    fn on_step(&mut self, step: SweepStep, state: &EquationState);
}

impl SweepObserver for () {
    fn on_step(&mut self, _: SweepStep, _: &EquationState) {}
}

/// Draw an index from unnormalized log weights by inverse transform.
pub fn sample_index<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numerical("all hyperparameter ordinates are -inf"));
    }
    let w: Vec<f64> = log_weights.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(w.iter().rposition(|v| *v > 0.0).unwrap_or(0))
}

/// Draw `N(P⁻¹ b, P⁻¹)` for a precision `P`.
fn draw_from_precision<R: Rng + ?Sized>(precision: &DMatrix<f64>, b: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let (ch, _) = linalg::cholesky_jittered(precision)?;
    let mean = ch.solve(b);
    let z = DVector::from_vec(std_normals(rng, b.len()));
    // x = mean + L⁻ᵀ z
    let l = ch.l();
    let w = l.transpose().solve_upper_triangular(&z).ok_or_else(|| Error::numerical("singular precision"))?;
    Ok(mean + w)
}

/// Weighted regression draw of `(q_row, intercept)` given the residual
/// `Y − f − g`, weights `1/ω_t`, and prior variances.
pub fn sample_q_row<R: Rng + ?Sized>(
    columns: &[Vec<f64>],
    residual: &[f64],
    omega: &[f64],
    prior_variances: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = columns.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let t = residual.len();
    let mut prec = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for a in 0..n {
        for c in 0..=a {
            let mut s = 0.0;
            for i in 0..t {
                s += columns[a][i] * columns[c][i] / omega[i];
            }
            prec[(a, c)] = s;
            prec[(c, a)] = s;
        }
        b[a] = (0..t).map(|i| columns[a][i] * residual[i] / omega[i]).sum();
        prec[(a, a)] += 1.0 / prior_variances[a];
    }
    Ok(draw_from_precision(&prec, &b, rng)?.as_slice().to_vec())
}

/// Restricted draw: project `g*` so that `ιᵀ g = 0` given the posterior covariance
/// through `v_iota = V̄ ι`. Returns `None` when `ιᵀ V̄ ι` is numerically zero.
pub fn project_zero_mean(g_star: &[f64], v_iota: &[f64]) -> Option<Vec<f64>> {
    let denom: f64 = v_iota.iter().sum();
    if !(denom.abs() >= 1e-14) {
        return None;
    }
    let s: f64 = g_star.iter().sum();
    let c = s / denom;
    Some(g_star.iter().zip(v_iota).map(|(g, v)| g - v * c).collect())
}

/// Mutable sampler for one equation.
pub struct EquationSampler<'a> {
    pub ctx: &'a EquationContext,
    pub config: &'a SamplerConfig,
    pub state: EquationState,
    pub rng: ChaCha8Rng,
    pub diagnostics: MhDiagnostics,
    pub g_projection_skips: u64,
    pub rho_step: f64,
    rho_window: (u64, u64),
    pub iteration: usize,
}

impl<'a> EquationSampler<'a> {
    pub fn new(ctx: &'a EquationContext, config: &'a SamplerConfig) -> Self {
        let t = ctx.t();
        let j = ctx.j;
        let level = match config.volatility {
            VolatilityMode::Off => 0.0,
            _ => stats::variance(&ctx.y).max(1e-12).ln(),
        };
        let state = EquationState {
            f: vec![0.0; t],
            g: vec![0.0; t],
            q_row: vec![0.0; j],
            sv: SvState::constant(t, level),
            grid_own: ctx.grids.own.center_index(),
            grid_other: ctx.grids.other.as_ref().map(|g| g.center_index()).unwrap_or(0),
            horseshoe: HorseshoeState::new(j),
            intercept: config.include_intercept.then_some(0.0),
        };
        EquationSampler {
            ctx,
            config,
            state,
            rng: stream_rng(config.seed, streams::EQUATION + j as u64),
            diagnostics: MhDiagnostics::default(),
            g_projection_skips: 0,
            rho_step: RHO_STEP_INIT,
            rho_window: (0, 0),
            iteration: 0,
        }
    }

    /// Factorized every sweep, so the cost of a draw does not depend on how
    /// concentrated the posterior over grid pairs happens to be.
    fn marginal_covariance(&self) -> Result<MarginalCovariance> {
        let a = self.ctx.grids.kernel_sum_plus_identity(self.state.grid_own, self.state.grid_other);
        MarginalCovariance::new(&a)
    }

    /// `Y − Σ q_k Y_k − intercept`.
    fn net_response(&self) -> Vec<f64> {
        let mut r = self.ctx.y.clone();
        for (q, col) in self.state.q_row.iter().zip(&self.ctx.contemporaneous) {
            for (ri, c) in r.iter_mut().zip(col) {
                *ri -= q * c;
            }
        }
        if let Some(c) = self.state.intercept {
            for ri in r.iter_mut() {
                *ri -= c;
            }
        }
        r
    }

    pub fn sweep(&mut self, observer: &mut dyn SweepObserver) -> Result<()> {
        let t = self.ctx.t();
        // 1. contemporaneous coefficients and intercept
        let mut columns: Vec<Vec<f64>> = self.ctx.contemporaneous.clone();
        let mut prior = prior_variance_vector(&self.state.horseshoe);
        if self.state.intercept.is_some() {
            columns.push(vec![1.0; t]);
            prior.push(INTERCEPT_PRIOR_VARIANCE);
        }
        if !columns.is_empty() {
            let resid: Vec<f64> = (0..t).map(|i| self.ctx.y[i] - self.state.f[i] - self.state.g[i]).collect();
            let omega: Vec<f64> = self.state.sv.h.iter().map(|h| h.exp()).collect();
            let mut coefs = sample_q_row(&columns, &resid, &omega, &prior, &mut self.rng)?;
            if self.state.intercept.is_some() {
                self.state.intercept = coefs.pop();
            }
            self.state.q_row = coefs;
        }
        observer.on_step(SweepStep::Contemporaneous, &self.state);

        // 2. volatilities, marginal of f and g, at the current kernel indices
        let y_net = self.net_response();
        match self.config.volatility {
            VolatilityMode::Stochastic => {
                let cov = self.marginal_covariance()?;
                let (next, _) = sv::sample_h_independence_mh(&self.state.sv, &cov, &y_net, &mut self.rng, &mut self.diagnostics);
                self.state.sv = next;
                // exact local move: the independence proposal alone cannot leave
                // states deep in the right tail of the log-volatility posterior
                let (next, evals) = sv::elliptical_slice_h(&self.state.sv, &cov, &y_net, &mut self.rng);
                self.diagnostics.slice_updates += 1;
                self.diagnostics.slice_evaluations += evals as u64;
                self.state.sv = next;
            }
            VolatilityMode::Homoskedastic => {
                let cov = self.marginal_covariance()?;
                let (a0, b0) = self.config.homoskedastic_prior;
                let w = sv::sample_homoskedastic_variance(&cov, &y_net, a0, b0, &mut self.rng);
                self.state.sv.h = vec![w.ln(); t];
            }
            VolatilityMode::Off => {}
        }
        observer.on_step(SweepStep::Volatility, &self.state);
        let sqrt_omega = self.state.sv.sqrt_omega();

        // 3. f
        let own = &self.ctx.grids.own;
        let scaled: Vec<f64> = (0..t).map(|i| (y_net[i] - self.state.g[i]) / sqrt_omega[i]).collect();
        let mean = own.apply_smoother(self.state.grid_own, &scaled);
        let noise = own.apply_posterior_factor(self.state.grid_own, &std_normals(&mut self.rng, t));
        self.state.f = (0..t).map(|i| sqrt_omega[i] * (mean[i] + noise[i])).collect();
        observer.on_step(SweepStep::OwnFunction, &self.state);

        // 4. g with the grand mean removed
        if let Some(other) = &self.ctx.grids.other {
            let scaled: Vec<f64> = (0..t).map(|i| (y_net[i] - self.state.f[i]) / sqrt_omega[i]).collect();
            let mean = other.apply_smoother(self.state.grid_other, &scaled);
            let noise = other.apply_posterior_factor(self.state.grid_other, &std_normals(&mut self.rng, t));
            let g_star: Vec<f64> = (0..t).map(|i| sqrt_omega[i] * (mean[i] + noise[i])).collect();
            let v_iota: Vec<f64> = other
                .apply_smoother(self.state.grid_other, &sqrt_omega)
                .iter()
                .zip(&sqrt_omega)
                .map(|(v, s)| v * s)
                .collect();
            self.state.g = match project_zero_mean(&g_star, &v_iota) {
                Some(g) => g,
                None => {
                    self.g_projection_skips += 1;
                    g_star
                }
            };
        }
        observer.on_step(SweepStep::OtherFunction, &self.state);

        // 5.–6. kernel hyperparameters
        let lo = gp_log_marginal_for_grid(own, &sqrt_omega, &self.state.f);
        self.state.grid_own = sample_index(&lo, &mut self.rng)?;
        observer.on_step(SweepStep::OwnHyperparameters, &self.state);
        if let Some(other) = &self.ctx.grids.other {
            let lo = gp_log_marginal_for_grid(other, &sqrt_omega, &self.state.g);
            self.state.grid_other = sample_index(&lo, &mut self.rng)?;
        }
        observer.on_step(SweepStep::OtherHyperparameters, &self.state);

        // 7. state-equation parameters
        if self.config.volatility == VolatilityMode::Stochastic {
            let (next, acc) = sv::sample_sv_params(&self.state.sv, &self.config.sv_priors, self.rho_step, &mut self.rng);
            self.state.sv = next;
            self.diagnostics.rho_proposals += 1;
            self.rho_window.0 += 1;
            if acc {
                self.diagnostics.rho_acceptances += 1;
                self.rho_window.1 += 1;
            }
            if self.iteration < self.config.n_burn && self.rho_window.0 as usize >= RHO_ADAPT_EVERY {
                let rate = self.rho_window.1 as f64 / self.rho_window.0 as f64;
                if rate < 0.25 {
                    self.rho_step *= 0.8;
                } else if rate > 0.45 {
                    self.rho_step *= 1.25;
                }
                self.rho_step = self.rho_step.clamp(1e-4, 0.5);
                self.rho_window = (0, 0);
            }
        }
        observer.on_step(SweepStep::VolatilityParameters, &self.state);

        // 8. shrinkage
        if !self.state.q_row.is_empty() {
            self.state.horseshoe = sample_horseshoe_scales(&self.state.q_row, &self.state.horseshoe, &mut self.rng);
        }
        observer.on_step(SweepStep::Shrinkage, &self.state);
        self.iteration += 1;
        Ok(())
    }
}

/// Run one equation for `config.n_iter` sweeps and collect the retained draws.
pub fn run_equation(
    ctx: &EquationContext,
    config: &SamplerConfig,
) -> Result<(EquationDraws, EquationDiagnostics)> {
    let mut sampler = EquationSampler::new(ctx, config);
    let mut draws = EquationDraws::with_capacity(ctx.t(), ctx.j, config.n_retained(), config.include_intercept);
    let start = Instant::now();
    for it in 0..config.n_iter {
        sampler.sweep(&mut ()).map_err(|e| Error::Equation {
            equation: ctx.j + 1,
            sweep: it + 1,
            source: Box::new(e),
        })?;
        if config.is_retained(it) {
            draws.push(&sampler.state);
        }
    }
    let diag = EquationDiagnostics {
        mh: sampler.diagnostics,
        g_projection_skips: sampler.g_projection_skips,
        rho_step: sampler.rho_step,
        kappa_bar_own: Some(ctx.grids.own.kappa_bar).filter(|v| v.is_finite()),
        kappa_bar_other: ctx.grids.other.as_ref().map(|g| g.kappa_bar).filter(|v| v.is_finite()),
        sampling_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((draws, diag))
}

/// Build the design and grids, then sample all equations in parallel.
pub fn estimate(panel: &TimePanel, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let design = build_lag_design(panel, config.p)?;
    let m = panel.n_vars();
    let results: Vec<(EquationDraws, EquationDiagnostics)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let grids = build_equation_grids(&design, j, config).map_err(|e| Error::Equation {
                equation: j + 1,
                sweep: 0,
                source: Box::new(e),
            })?;
            let ctx = EquationContext::new(&design, j, grids);
            run_equation(&ctx, config)
        })
        .collect::<Result<_>>()?;
    let (equations, diagnostics) = results.into_iter().unzip();
    Ok(PosteriorDraws {
        config: config.clone(),
        panel: panel.clone(),
        equations,
        diagnostics,
    })
}

/// Rebuild the lag design and grids of a finished estimation.
pub fn rebuild_contexts(draws: &PosteriorDraws) -> Result<(LagDesign, Vec<EquationContext>)> {
    let design = build_lag_design(&draws.panel, draws.config.p)?;
    let ctxs = (0..design.n_vars)
        .into_par_iter()
        .map(|j| Ok(EquationContext::new(&design, j, build_equation_grids(&design, j, &draws.config)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((design, ctxs))
}
