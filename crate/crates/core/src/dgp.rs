//! Synthetic data: the three-equation nonlinear benchmark process and plain
//! linear VARs used as oracles.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::linalg::solve_unit_lower;
use crate::panel::{Period, TimePanel};
use crate::stats::{self, inv_gamma, std_normal, stream_rng, streams};

pub const DGP_VARS: usize = 3;
pub const DGP_LAGS: usize = 5;
/// Observations with `t ≤ BREAK_PERIOD` follow the first regime of equation 2.
pub const BREAK_PERIOD: usize = 100;
pub const BURN_IN: usize = 20;
pub const EXPLOSION_BOUND: f64 = 1e6;
pub const MAX_ATTEMPTS: u64 = 50;

const RW_SD: f64 = 0.01;
const OMEGA_TILDE_0: f64 = 0.01;
const Q_SD: f64 = 0.1;

fn start_date() -> Period {
    Period { year: 1960, quarter: 1 }
}

/// One simulated data set with its latent truths. Rows are periods `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpRealization {
    pub y: DMatrix<f64>,
    pub true_f: DMatrix<f64>,
    pub true_g: DMatrix<f64>,
    pub true_m: DMatrix<f64>,
    pub true_omega: DMatrix<f64>,
    /// Heavy-tail mixing variables `λ_jt` (`ω = λ ω̃`).
    pub true_lambda: DMatrix<f64>,
    /// Strictly lower-triangular contemporaneous matrix.
    pub true_q: DMatrix<f64>,
    /// `true_phis[k][(i, j)] = φ_{ij,k+1}`.
    pub true_phis: Vec<DMatrix<f64>>,
    pub seed: u64,
    /// Sub-seed attempt that produced a non-explosive path.
    pub attempt: u64,
}

impl DgpRealization {
    pub fn n_periods(&self) -> usize {
        self.y.nrows()
    }

    /// Observations as a panel with quarterly dates starting 1960Q1 (not demeaned).
    pub fn panel(&self) -> Result<TimePanel> {
        TimePanel::from_levels(self.y.clone(), start_date())
    }
}

struct Coefficients {
    phis: Vec<DMatrix<f64>>,
    q: DMatrix<f64>,
}

fn draw_coefficients<R: Rng + ?Sized>(rng: &mut R) -> Coefficients {
    let mut phis: Vec<DMatrix<f64>> = (1..=DGP_LAGS)
        .map(|k| {
            let sd = 0.3 / k as f64;
            DMatrix::from_fn(DGP_VARS, DGP_VARS, |_, _| sd * std_normal(rng))
        })
        .collect();
    phis[0][(0, 0)] = 0.8;
    phis[0][(1, 1)] = 0.65;
    let mut q = DMatrix::zeros(DGP_VARS, DGP_VARS);
    for j in 1..DGP_VARS {
        for k in 0..j {
            q[(j, k)] = Q_SD * std_normal(rng);
        }
    }
    Coefficients { phis, q }
}

/// `(f, g)` of every equation at observation time `t` (1-based; `t ≤ 0` is burn-in),
/// with `lag(k, i)` returning `y_{i, t−k}`.
pub fn conditional_mean(phis: &[DMatrix<f64>], t: i64, lag: impl Fn(usize, usize) -> f64) -> ([f64; 3], [f64; 3]) {
    let early = t <= BREAK_PERIOD as i64;
    let f1: f64 = (1..=DGP_LAGS).map(|k| phis[k - 1][(0, 0)] * lag(k, 0)).sum();
    let f2 = if early {
        (1..=DGP_LAGS).map(|k| phis[k - 1][(1, 1)] * lag(k, 1)).sum()
    } else {
        phis[0][(1, 1)] * lag(1, 1)
    };
    let g2 = if early {
        0.0
    } else {
        (1..=DGP_LAGS)
            .map(|k| phis[k - 1][(1, 0)] * lag(k, 0) + phis[k - 1][(1, 2)] * lag(k, 2))
            .sum()
    };
    let f3 = equation3_own(&[lag(1, 2), lag(2, 2), lag(3, 2), lag(4, 2), lag(5, 2)]);
    let g3 = (1.0 / 18.0) * (FRAC_PI_2 * lag(1, 0) * lag(1, 1)).sin()
        + (2.0 / 9.0) * (lag(2, 0) - 1.0).powi(2)
        + lag(3, 0) / 18.0
        + lag(5, 1) / 18.0;
    ([f1, f2, f3], [0.0, g2, g3])
}

/// Own-lag function of equation 3 at `(y_{t−1}, …, y_{t−5})`.
pub fn equation3_own(l: &[f64; 5]) -> f64 {
    (1.0 / 12.0) * (FRAC_PI_2 * l[0] * l[1]).sin() + (1.0 / 3.0) * (l[2] - 1.0).powi(2) + l[3] / 12.0 + l[4] / 12.0
}

fn simulate_attempt(t_obs: usize, seed: u64, attempt: u64) -> Option<DgpRealization> {
    let mut rng = stream_rng(seed, streams::DGP + attempt);
    let coef = draw_coefficients(&mut rng);
    let total = DGP_LAGS + BURN_IN + t_obs;
    let mut y = DMatrix::<f64>::zeros(total, DGP_VARS);
    let mut f = DMatrix::<f64>::zeros(total, DGP_VARS);
    let mut g = DMatrix::<f64>::zeros(total, DGP_VARS);
    let mut om = DMatrix::<f64>::zeros(total, DGP_VARS);
    let mut lam = DMatrix::<f64>::zeros(total, DGP_VARS);
    let mut h_tilde = [OMEGA_TILDE_0.ln(); DGP_VARS];
    let q_rows: Vec<Vec<f64>> = (0..DGP_VARS).map(|j| (0..j).map(|k| coef.q[(j, k)]).collect()).collect();
    for r in DGP_LAGS..total {
        let t = r as i64 - (DGP_LAGS + BURN_IN) as i64 + 1;
        let (fr, gr) = conditional_mean(&coef.phis, t, |k, i| y[(r - k, i)]);
        let mut b = [0.0; DGP_VARS];
        for j in 0..DGP_VARS {
            h_tilde[j] += RW_SD * std_normal(&mut rng);
            let lambda = if j == 0 { inv_gamma(&mut rng, 1.5, 1.5) } else { 1.0 };
            let omega = lambda * h_tilde[j].exp();
            let eps = omega.sqrt() * std_normal(&mut rng);
            b[j] = fr[j] + gr[j] + eps;
            f[(r, j)] = fr[j];
            g[(r, j)] = gr[j];
            om[(r, j)] = omega;
            lam[(r, j)] = lambda;
        }
        let yr = solve_unit_lower(&q_rows, &b);
        for j in 0..DGP_VARS {
            if !yr[j].is_finite() || yr[j].abs() > EXPLOSION_BOUND {
                return None;
            }
            y[(r, j)] = yr[j];
        }
    }
    let keep = DGP_LAGS + BURN_IN;
    let tail = |m: &DMatrix<f64>| m.rows(keep, t_obs).into_owned();
    let true_f = tail(&f);
    let true_g = tail(&g);
    Some(DgpRealization {
        y: tail(&y),
        true_m: &true_f + &true_g,
        true_f,
        true_g,
        true_omega: tail(&om),
        true_lambda: tail(&lam),
        true_q: coef.q,
        true_phis: coef.phis,
        seed,
        attempt,
    })
}

/// Simulate `t_obs` observations of the benchmark process without the length
/// precondition of [`simulate_dgp`]. Random numbers are consumed period by period,
/// so a shorter run is an exact prefix of a longer one with the same seed.
pub fn simulate_dgp_path(t_obs: usize, seed: u64) -> Result<DgpRealization> {
    if t_obs == 0 {
        return Err(Error::invalid("need at least one observation"));
    }
    (0..MAX_ATTEMPTS)
        .find_map(|a| simulate_attempt(t_obs, seed, a))
        .ok_or_else(|| Error::numerical(format!("process exploded in all {MAX_ATTEMPTS} attempts")))
}

/// Simulate the benchmark process; the regime break must fall inside the sample.
pub fn simulate_dgp(t_obs: usize, seed: u64) -> Result<DgpRealization> {
    if t_obs < 120 {
        return Err(Error::invalid(format!("T = {t_obs} too short, need at least 120")));
    }
    simulate_dgp_path(t_obs, seed)
}

/// Correlation between the posterior median of `m_j` and the truth, per equation.
pub fn recovery_metrics(draws: &PosteriorDraws, truth: &DgpRealization) -> Result<Vec<f64>> {
    let t_eff = draws.t_eff();
    let t = truth.n_periods();
    if draws.n_vars() != truth.true_m.ncols() || t_eff > t {
        return Err(Error::invalid("draws do not match the realization"));
    }
    (0..draws.n_vars())
        .map(|j| {
            let est = draws.median_m(j);
            let tru: Vec<f64> = truth.true_m.column(j).iter().skip(t - t_eff).cloned().collect();
            stats::pearson(&est, &tru)
                .ok_or_else(|| Error::invalid(format!("constant series in equation {}", j + 1)))
        })
        .collect()
}

/// Across-replication mean and SD (n − 1) per equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub replications: Vec<Vec<f64>>,
}

impl RecoverySummary {
    pub fn new(replications: Vec<Vec<f64>>) -> Result<Self> {
        let m = replications.first().map(|r| r.len()).ok_or_else(|| Error::invalid("no replications"))?;
        let col = |j: usize| replications.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let mean = (0..m).map(|j| stats::mean(&col(j))).collect();
        let sd = (0..m)
            .map(|j| if replications.len() > 1 { stats::std_dev(&col(j)) } else { 0.0 })
            .collect();
        Ok(RecoverySummary { mean, sd, replications })
    }
}

/// Error variances of a linear VAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VarNoise {
    /// Constant structural variances.
    Gaussian { omega: Vec<f64> },
    /// `h_jt = μ_j + ρ (h_{j,t−1} − μ_j) + σ u_t`.
    StochasticVolatility { mean: Vec<f64>, rho: f64, sigma: f64 },
}

/// `y_t = Σ_k A_k y_{t−k} + (I − Q)⁻¹ ε_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearVarSpec {
    pub a: Vec<DMatrix<f64>>,
    /// Strictly lower-triangular.
    pub q: DMatrix<f64>,
    pub noise: VarNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearVarSim {
    pub y: DMatrix<f64>,
    /// Structural conditional means `(I − Q) Σ A_k y_{t−k}`.
    pub true_m: DMatrix<f64>,
    pub omega: DMatrix<f64>,
}

impl LinearVarSim {
    pub fn panel(&self) -> Result<TimePanel> {
        TimePanel::from_levels(self.y.clone(), start_date())
    }
}

/// Largest eigenvalue modulus of the companion matrix.
pub fn companion_spectral_radius(a: &[DMatrix<f64>]) -> f64 {
    let m = a[0].nrows();
    let p = a.len();
    let mut c = DMatrix::zeros(m * p, m * p);
    for (k, ak) in a.iter().enumerate() {
        c.view_mut((0, k * m), (m, m)).copy_from(ak);
    }
    for i in m..m * p {
        c[(i, i - m)] = 1.0;
    }
    c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

const LINEAR_BURN_IN: usize = 100;

pub fn simulate_linear_var(spec: &LinearVarSpec, t_obs: usize, seed: u64) -> Result<LinearVarSim> {
    let p = spec.a.len();
    if p == 0 || t_obs == 0 {
        return Err(Error::invalid("need at least one lag and one observation"));
    }
    let m = spec.a[0].nrows();
    if spec.a.iter().any(|a| a.nrows() != m || a.ncols() != m) || spec.q.nrows() != m || spec.q.ncols() != m {
        return Err(Error::invalid("coefficient matrices must all be M × M"));
    }
    for j in 0..m {
        for k in j..m {
            if spec.q[(j, k)] != 0.0 {
                return Err(Error::invalid("Q must be strictly lower triangular"));
            }
        }
    }
    let rad = companion_spectral_radius(&spec.a);
    if rad >= 1.0 {
        return Err(Error::invalid(format!("companion spectral radius {rad:.4} ≥ 1")));
    }
    let (h_mean, rho, sigma) = match &spec.noise {
        VarNoise::Gaussian { omega } => {
            if omega.len() != m || omega.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::invalid("need one positive variance per variable"));
            }
            (omega.iter().map(|w| w.ln()).collect::<Vec<_>>(), 0.0, 0.0)
        }
        VarNoise::StochasticVolatility { mean, rho, sigma } => {
            if mean.len() != m || !(rho.abs() < 1.0) || !(*sigma >= 0.0) {
                return Err(Error::invalid("invalid stochastic volatility specification"));
            }
            (mean.clone(), *rho, *sigma)
        }
    };
    let q_rows: Vec<Vec<f64>> = (0..m).map(|j| (0..j).map(|k| spec.q[(j, k)]).collect()).collect();
    let mut rng = stream_rng(seed, streams::DGP);
    let total = p + LINEAR_BURN_IN + t_obs;
    let mut y = DMatrix::<f64>::zeros(total, m);
    let mut mu = DMatrix::<f64>::zeros(total, m);
    let mut om = DMatrix::<f64>::zeros(total, m);
    let mut h = h_mean.clone();
    for r in p..total {
        let mut reduced = vec![0.0; m];
        for (k, ak) in spec.a.iter().enumerate() {
            for i in 0..m {
                for c in 0..m {
                    reduced[i] += ak[(i, c)] * y[(r - k - 1, c)];
                }
            }
        }
        let mut eps = vec![0.0; m];
        for j in 0..m {
            h[j] = h_mean[j] + rho * (h[j] - h_mean[j]) + sigma * std_normal(&mut rng);
            om[(r, j)] = h[j].exp();
            eps[j] = om[(r, j)].sqrt() * std_normal(&mut rng);
        }
        let shock = solve_unit_lower(&q_rows, &eps);
        for j in 0..m {
            y[(r, j)] = reduced[j] + shock[j];
            let contemporaneous: f64 = (0..j).map(|k| spec.q[(j, k)] * reduced[k]).sum();
            mu[(r, j)] = reduced[j] - contemporaneous;
        }
    }
    let keep = p + LINEAR_BURN_IN;
    Ok(LinearVarSim {
        y: y.rows(keep, t_obs).into_owned(),
        true_m: mu.rows(keep, t_obs).into_owned(),
        omega: om.rows(keep, t_obs).into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn equation3_at_unit_lags() {
        assert_relative_eq!(equation3_own(&[1.0; 5]), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn structure_of_realization() {
        let d = simulate_dgp(200, 1).unwrap();
        assert_eq!(d.y.shape(), (200, 3));
        assert!(d.true_g.column(0).iter().all(|v| *v == 0.0));
        assert_eq!(d.true_m, &d.true_f + &d.true_g);
        assert!(d.y.iter().all(|v| v.is_finite()));
        assert_eq!(d.true_phis[0][(0, 0)], 0.8);
        assert_eq!(d.true_phis[0][(1, 1)], 0.65);
        for j in 0..3 {
            for k in j..3 {
                assert_eq!(d.true_q[(j, k)], 0.0);
            }
        }
        // g2 switches on exactly after the break
        assert!(d.true_g.column(1).iter().take(BREAK_PERIOD).all(|v| *v == 0.0));
        assert!(d.true_g.column(1).iter().skip(BREAK_PERIOD).any(|v| *v != 0.0));
        assert!(simulate_dgp(100, 1).is_err());
    }

    #[test]
    fn shorter_run_is_a_prefix() {
        let long = simulate_dgp(200, 11).unwrap();
        let short = simulate_dgp_path(99, 11).unwrap();
        assert_eq!(short.y, long.y.rows(0, 99).into_owned());
        assert!(short.true_g.column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn volatility_increments_and_tails() {
        let d = simulate_dgp(5000, 3).unwrap();
        // equations 2 and 3 have λ = 1, so log ω is the random walk itself
        let lw: Vec<f64> = d.true_omega.column(1).iter().map(|w| w.ln()).collect();
        let inc: Vec<f64> = lw.windows(2).map(|w| w[1] - w[0]).collect();
        assert!((stats::std_dev(&inc) - 0.01).abs() < 0.001);
        // equation 1 has no contemporaneous terms; scale out ω̃ and keep λ
        let z: Vec<f64> = (0..5000)
            .map(|t| {
                let tilde = d.true_omega[(t, 0)] / d.true_lambda[(t, 0)];
                (d.y[(t, 0)] - d.true_m[(t, 0)]) / tilde.sqrt()
            })
            .collect();
        assert!(stats::kurtosis(&z) > 4.0);
        assert!(d.true_lambda.column(1).iter().chain(d.true_lambda.column(2).iter()).all(|l| *l == 1.0));
    }

    #[test]
    fn white_noise_when_a_is_zero() {
        let spec = LinearVarSpec {
            a: vec![DMatrix::zeros(2, 2)],
            q: DMatrix::zeros(2, 2),
            noise: VarNoise::Gaussian { omega: vec![1.0, 4.0] },
        };
        let s = simulate_linear_var(&spec, 20_000, 2).unwrap();
        assert!((stats::variance(&s.y.column(0).iter().cloned().collect::<Vec<_>>()) - 1.0).abs() < 0.05);
        assert!((stats::variance(&s.y.column(1).iter().cloned().collect::<Vec<_>>()) - 4.0).abs() < 0.2);
        assert!(s.true_m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ar1_autocorrelation() {
        let spec = LinearVarSpec {
            a: vec![DMatrix::from_element(1, 1, 0.8)],
            q: DMatrix::zeros(1, 1),
            noise: VarNoise::Gaussian { omega: vec![1.0] },
        };
        let s = simulate_linear_var(&spec, 5000, 4).unwrap();
        let x: Vec<f64> = s.y.column(0).iter().cloned().collect();
        let r = stats::pearson(&x[1..], &x[..x.len() - 1]).unwrap();
        assert!((r - 0.8).abs() < 0.05);
    }

    #[test]
    fn explosive_rejected() {
        let spec = LinearVarSpec {
            a: vec![DMatrix::from_element(1, 1, 1.01)],
            q: DMatrix::zeros(1, 1),
            noise: VarNoise::Gaussian { omega: vec![1.0] },
        };
        assert!(simulate_linear_var(&spec, 10, 1).is_err());
        assert_relative_eq!(companion_spectral_radius(&spec.a), 1.01, epsilon = 1e-12);
    }

    #[test]
    fn structural_means_match_contemporaneous_form() {
        let spec = LinearVarSpec {
            a: vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3])],
            q: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.4, 0.0]),
            noise: VarNoise::StochasticVolatility { mean: vec![0.0, -1.0], rho: 0.9, sigma: 0.3 },
        };
        let s = simulate_linear_var(&spec, 50, 8).unwrap();
        // y_2 − q y_1 − m_2 is the structural shock, with variance ω_2
        for t in 1..50 {
            let e2 = s.y[(t, 1)] - 0.4 * s.y[(t, 0)] - s.true_m[(t, 1)];
            let e1 = s.y[(t, 0)] - s.true_m[(t, 0)];
            assert!(e1.is_finite() && e2.is_finite());
            let m1 = 0.5 * s.y[(t - 1, 0)] + 0.1 * s.y[(t - 1, 1)];
            assert_relative_eq!(s.true_m[(t, 0)], m1, epsilon = 1e-12);
        }
    }
}
