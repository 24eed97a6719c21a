//! Iterated posterior predictive simulation and log predictive scoring.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::gp::PredictiveFactor;
use crate::linalg::{self, cholesky_jittered};
use crate::panel::{lag_regressors, Period, TimePanel};
use crate::sampler::{estimate, rebuild_contexts, EquationContext, SamplerConfig, VolatilityMode};
use crate::stats::{self, log_sum_exp, std_normals, stream_rng, LN_2PI};

/// Fewest valid predictive draws accepted by the density evaluators.
pub const MIN_SCORING_DRAWS: usize = 50;
/// Non-finite forecast draws tolerated before an origin is abandoned.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

type SharedChol = Arc<Cholesky<f64, Dyn>>;

/// Evenly spaced subset of `0..n` with at most `max` elements.
pub fn subsample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(k) if k > 0 && k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

/// Shared `chol(K_own + K_other + I)` per equation and grid-index pair.
pub struct Predictor<'a> {
    pub draws: &'a PosteriorDraws,
    pub ctxs: &'a [EquationContext],
    cache: Vec<HashMap<(usize, usize), SharedChol>>,
}

impl<'a> Predictor<'a> {
    /// Factorize every kernel pair used by the draws in `subset`.
    pub fn new(draws: &'a PosteriorDraws, ctxs: &'a [EquationContext], subset: &[usize]) -> Result<Self> {
        if ctxs.len() != draws.n_vars() {
            return Err(Error::invalid("context count does not match the number of equations"));
        }
        let mut cache = Vec::with_capacity(ctxs.len());
        for (j, ctx) in ctxs.iter().enumerate() {
            let eq = &draws.equations[j];
            let mut pairs: Vec<(usize, usize)> = subset.iter().map(|&d| (eq.grid_own[d], eq.grid_other[d])).collect();
            pairs.sort_unstable();
            pairs.dedup();
            let factors = pairs
                .par_iter()
                .map(|&(a, b)| {
                    let k = ctx.grids.kernel_sum_plus_identity(a, b);
                    Ok(((a, b), Arc::new(cholesky_jittered(&k)?.0)))
                })
                .collect::<Result<Vec<_>>>()?;
            cache.push(factors.into_iter().collect());
        }
        Ok(Predictor { draws, ctxs, cache })
    }

    /// Per-draw predictive state of all equations.
    pub fn for_draw(&self, d: usize) -> Result<DrawPredictor<'_>> {
        let mut eqs = Vec::with_capacity(self.ctxs.len());
        for (j, ctx) in self.ctxs.iter().enumerate() {
            let e = &self.draws.equations[j];
            let key = (e.grid_own[d], e.grid_other[d]);
            let chol = self.cache[j]
                .get(&key)
                .ok_or_else(|| Error::invalid(format!("draw {d} of equation {} not in predictor subset", j + 1)))?
                .clone();
            let q = e.q.row(d).to_vec();
            let c = e.intercept_at(d);
            let sqrt_omega: Vec<f64> = e.h.row(d).iter().map(|h| (0.5 * h).exp()).collect();
            let mut y_adj = ctx.y.clone();
            for (qk, col) in q.iter().zip(&ctx.contemporaneous) {
                for (r, v) in y_adj.iter_mut().zip(col) {
                    *r -= qk * v;
                }
            }
            for r in y_adj.iter_mut() {
                *r -= c;
            }
            eqs.push(EquationPredictor {
                ctx,
                own: key.0,
                other: key.1,
                factor: PredictiveFactor::from_cholesky(chol, &sqrt_omega, &y_adj)?,
                q,
                c,
                rho: e.rho[d],
                sigma2: e.sigma2[d],
            });
        }
        Ok(DrawPredictor { eqs, p: self.draws.config.p, volatility: self.draws.config.volatility })
    }
}

struct EquationPredictor<'a> {
    ctx: &'a EquationContext,
    own: usize,
    other: usize,
    factor: PredictiveFactor,
    q: Vec<f64>,
    c: f64,
    rho: f64,
    sigma2: f64,
}

/// One period of a simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub y: Vec<f64>,
    pub h: Vec<f64>,
    /// `c_j + m̄_j`: structural-form mean before contemporaneous terms.
    pub mean: Vec<f64>,
    /// `V̄_j + ω_j`.
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Scratch {
    k: Vec<f64>,
    k_other: Vec<f64>,
    solve: Vec<f64>,
}

pub struct DrawPredictor<'a> {
    eqs: Vec<EquationPredictor<'a>>,
    p: usize,
    volatility: VolatilityMode,
}

impl DrawPredictor<'_> {
    pub fn n_vars(&self) -> usize {
        self.eqs.len()
    }

    /// Standard normals consumed per step: volatility, function and shock, per equation.
    pub fn normals_per_step(&self) -> usize {
        3 * self.eqs.len()
    }

    /// `(I − Q)⁻¹ x`.
    pub fn solve_structural(&self, x: &[f64]) -> Vec<f64> {
        let q: Vec<Vec<f64>> = self.eqs.iter().map(|e| e.q.clone()).collect();
        linalg::solve_unit_lower(&q, x)
    }

    /// Log volatility at the next period given the previous one and a standard normal.
    fn next_h(&self, j: usize, h_prev: f64, z: f64) -> f64 {
        match self.volatility {
            VolatilityMode::Stochastic => {
                let e = &self.eqs[j];
                e.rho * h_prev + e.sigma2.sqrt() * z
            }
            VolatilityMode::Homoskedastic | VolatilityMode::Off => h_prev,
        }
    }

    /// Simulate the period at 1-based time `position` from `lags` (most recent first).
    pub fn step(
        &self,
        lags: &[Vec<f64>],
        h_prev: &[f64],
        position: usize,
        normals: &[f64],
        scratch: &mut Scratch,
    ) -> Result<StepOutput> {
        let m = self.eqs.len();
        debug_assert_eq!(normals.len(), 3 * m);
        let mut out = StepOutput { y: vec![0.0; m], h: vec![0.0; m], mean: vec![0.0; m], var: vec![0.0; m] };
        for (j, e) in self.eqs.iter().enumerate() {
            let h = self.next_h(j, h_prev[j], normals[j]);
            let omega = h.exp();
            let s = omega.sqrt();
            let (x_own, x_other) = lag_regressors(lags, j, self.p);
            let t = e.ctx.t();
            scratch.k.resize(t, 0.0);
            let mut kss = e.ctx.grids.own.cross_covariance_into(e.own, &x_own, position, &mut scratch.k);
            if let Some(g) = &e.ctx.grids.other {
                scratch.k_other.resize(t, 0.0);
                kss += g.cross_covariance_into(e.other, &x_other, position, &mut scratch.k_other);
                for (a, b) in scratch.k.iter_mut().zip(&scratch.k_other) {
                    *a += b;
                }
            }
            let (mbar, vbar) = e.factor.moments_with(&scratch.k, kss, s, &mut scratch.solve)?;
            let mut y = e.c + mbar + vbar.sqrt() * normals[m + j] + s * normals[2 * m + j];
            for (qk, yk) in e.q.iter().zip(&out.y) {
                y += qk * yk;
            }
            out.y[j] = y;
            out.h[j] = h;
            out.mean[j] = e.c + mbar;
            out.var[j] = vbar + omega;
        }
        Ok(out)
    }

    /// Reduced-form Gaussian of a step given its structural moments:
    /// `((I − Q)⁻¹ mean, (I − Q)⁻¹ diag(var) (I − Q)⁻ᵀ)`.
    pub fn reduced_form(&self, step: &StepOutput) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.eqs.len();
        let mu = self.solve_structural(&step.mean);
        let mut b = DMatrix::zeros(m, m);
        for c in 0..m {
            let mut e = vec![0.0; m];
            e[c] = 1.0;
            let col = self.solve_structural(&e);
            for r in 0..m {
                b[(r, c)] = col[r] * step.var[c].sqrt();
            }
        }
        (mu, &b * b.transpose())
    }
}

/// History of the last `p` observed rows ending at panel row `end`, most recent first.
pub fn history(panel: &TimePanel, end: usize, p: usize) -> Vec<Vec<f64>> {
    (0..p).map(|i| panel.row(end - i)).collect()
}

/// Predictive simulations for horizons `1..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDraws {
    pub n_vars: usize,
    pub horizon: usize,
    /// `n_valid × horizon × M`, draw-major then horizon.
    pub paths: Vec<f64>,
    /// Per valid draw: one-step reduced-form mean.
    pub one_step_mean: Vec<Vec<f64>>,
    /// Per valid draw: one-step reduced-form covariance, row-major `M × M`.
    pub one_step_cov: Vec<Vec<f64>>,
    /// Posterior draw index behind each valid path.
    pub draw_index: Vec<usize>,
    pub excluded: usize,
}

impl ForecastDraws {
    pub fn n_valid(&self) -> usize {
        self.draw_index.len()
    }

    /// Simulated `y_{T+h}` of valid draw `i`, `h` 1-based.
    pub fn path(&self, i: usize, h: usize) -> &[f64] {
        let m = self.n_vars;
        let o = (i * self.horizon + h - 1) * m;
        &self.paths[o..o + m]
    }

    pub fn values(&self, h: usize, var: usize) -> Vec<f64> {
        (0..self.n_valid()).map(|i| self.path(i, h)[var]).collect()
    }

    pub fn mean(&self, h: usize) -> Vec<f64> {
        (0..self.n_vars).map(|v| stats::mean(&self.values(h, v))).collect()
    }

    /// Mean of the Rao-Blackwellized one-step mixture.
    pub fn one_step_mixture_mean(&self) -> Vec<f64> {
        (0..self.n_vars)
            .map(|v| stats::mean(&self.one_step_mean.iter().map(|m| m[v]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn one_step_covariance(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_vars, self.n_vars, &self.one_step_cov[i])
    }
}

/// Simulate one path from a draw predictor starting after the state at 1-based
/// time `origin_position`.
pub fn simulate_path(
    pred: &DrawPredictor<'_>,
    mut lags: Vec<Vec<f64>>,
    mut h: Vec<f64>,
    origin_position: usize,
    normals: &[Vec<f64>],
    scratch: &mut Scratch,
) -> Result<Vec<StepOutput>> {
    let mut out = Vec::with_capacity(normals.len());
    for (s, z) in normals.iter().enumerate() {
        let step = pred.step(&lags, &h, origin_position + s + 1, z, scratch)?;
        if step.y.iter().chain(&step.h).any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite forecast at step {}", s + 1)));
        }
        lags.pop();
        lags.insert(0, step.y.clone());
        h.clone_from(&step.h);
        out.push(step);
    }
    Ok(out)
}

/// Iterate the posterior predictive forward from the end of the estimation sample.
///
/// Each posterior draw uses its own random stream `stream + d`, so results do not
/// depend on scheduling, and the first `h` steps do not depend on `horizon`.
pub fn simulate_forecast(
    draws: &PosteriorDraws,
    ctxs: &[EquationContext],
    horizon: usize,
    max_draws: Option<usize>,
    seed: u64,
    stream: u64,
) -> Result<ForecastDraws> {
    if horizon == 0 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    let subset = subsample_indices(draws.n_draws(), max_draws);
    let predictor = Predictor::new(draws, ctxs, &subset)?;
    let panel = &draws.panel;
    let p = draws.config.p;
    let last = panel.n_periods() - 1;
    let t_eff = draws.t_eff();
    let m = draws.n_vars();
    let results: Vec<Result<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>>> = subset
        .par_iter()
        .map(|&d| {
            let pred = predictor.for_draw(d)?;
            let mut rng = stream_rng(seed, stream + d as u64);
            let normals: Vec<Vec<f64>> = (0..horizon).map(|_| std_normals(&mut rng, pred.normals_per_step())).collect();
            let h0: Vec<f64> = (0..m).map(|j| draws.equations[j].h.row(d)[t_eff - 1]).collect();
            let mut scratch = Scratch::default();
            match simulate_path(&pred, history(panel, last, p), h0, t_eff, &normals, &mut scratch) {
                Ok(steps) => {
                    let (mu, cov) = pred.reduced_form(&steps[0]);
                    let flat: Vec<f64> = steps.iter().flat_map(|s| s.y.iter().cloned()).collect();
                    let cov_rows: Vec<f64> = cov.transpose().as_slice().to_vec();
                    Ok(Some((flat, mu, cov_rows)))
                }
                Err(e) if e.is_numerical() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut fc = ForecastDraws {
        n_vars: m,
        horizon,
        paths: Vec::with_capacity(subset.len() * horizon * m),
        one_step_mean: Vec::new(),
        one_step_cov: Vec::new(),
        draw_index: Vec::new(),
        excluded: 0,
    };
    for (r, &d) in results.into_iter().zip(&subset) {
        match r? {
            Some((flat, mu, cov)) => {
                fc.paths.extend(flat);
                fc.one_step_mean.push(mu);
                fc.one_step_cov.push(cov);
                fc.draw_index.push(d);
            }
            None => fc.excluded += 1,
        }
    }
    if fc.excluded as f64 > MAX_EXCLUDED_FRACTION * subset.len() as f64 {
        return Err(Error::numerical(format!(
            "{} of {} forecast draws were non-finite",
            fc.excluded,
            subset.len()
        )));
    }
    Ok(fc)
}

fn gaussian_logpdf_subset(mu: &[f64], cov: &DMatrix<f64>, x: &[f64], vars: &[usize]) -> Result<f64> {
    let k = vars.len();
    let s = DMatrix::from_fn(k, k, |a, b| cov[(vars[a], vars[b])]);
    let (ch, _) = cholesky_jittered(&s)?;
    let mut r: Vec<f64> = vars.iter().map(|&v| x[v] - mu[v]).collect();
    linalg::solve_lower_in_place(ch.l_dirty(), &mut r);
    let quad: f64 = r.iter().map(|v| v * v).sum();
    Ok(-0.5 * (k as f64 * LN_2PI + linalg::chol_logdet(&ch) + quad))
}

/// Log density at `x` of a uniform mixture of Gaussians, marginalized to `vars`.
pub fn gaussian_mixture_logpdf(means: &[Vec<f64>], covs: &[DMatrix<f64>], x: &[f64], vars: &[usize]) -> Result<f64> {
    if means.is_empty() {
        return Err(Error::invalid("empty mixture"));
    }
    let terms = means
        .iter()
        .zip(covs)
        .map(|(mu, cov)| gaussian_logpdf_subset(mu, cov, x, vars))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&terms) - (means.len() as f64).ln())
}

/// Per-variable Silverman bandwidth `0.9 min(sd, IQR/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let sd = stats::std_dev(x);
    let iqr = stats::quantile(x, 0.75) - stats::quantile(x, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

/// Product-Gaussian kernel density over the rows of `samples` (one `Vec` per variable).
pub fn kde_logpdf(samples: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    let n = samples.first().map(|s| s.len()).unwrap_or(0);
    if n == 0 {
        return Err(Error::invalid("empty sample"));
    }
    let bw = samples
        .iter()
        .map(|s| {
            let b = silverman_bandwidth(s);
            if b > 0.0 && b.is_finite() {
                Ok(b)
            } else {
                Err(Error::numerical("degenerate kernel density bandwidth"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let terms: Vec<f64> = (0..n)
        .map(|i| samples.iter().zip(&bw).zip(x).map(|((s, b), xv)| stats::normal_logpdf(*xv, s[i], b * b)).sum())
        .collect();
    Ok(log_sum_exp(&terms) - (n as f64).ln())
}

/// Log predictive likelihood of `realized` (length `M`) at horizon `h`, over `variables`.
pub fn log_predictive_likelihood(fc: &ForecastDraws, realized: &[f64], variables: &[usize], h: usize) -> Result<f64> {
    if h == 0 || h > fc.horizon {
        return Err(Error::invalid(format!("horizon {h} outside 1..={}", fc.horizon)));
    }
    if realized.len() != fc.n_vars || realized.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("realized vector must be finite with one entry per variable"));
    }
    if variables.is_empty() || variables.iter().any(|&v| v >= fc.n_vars) {
        return Err(Error::invalid("variable subset out of range"));
    }
    if fc.n_valid() < MIN_SCORING_DRAWS {
        return Err(Error::invalid(format!(
            "{} valid predictive draws, need at least {MIN_SCORING_DRAWS}",
            fc.n_valid()
        )));
    }
    if h == 1 {
        let covs: Vec<DMatrix<f64>> = (0..fc.n_valid()).map(|i| fc.one_step_covariance(i)).collect();
        gaussian_mixture_logpdf(&fc.one_step_mean, &covs, realized, variables)
    } else {
        let samples: Vec<Vec<f64>> = variables.iter().map(|&v| fc.values(h, v)).collect();
        let x: Vec<f64> = variables.iter().map(|&v| realized[v]).collect();
        kde_logpdf(&samples, &x)
    }
}

/// A named model configuration entering a backtest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub config: SamplerConfig,
}

/// Log score of one model at one origin, horizon and variable subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginScore {
    pub model: String,
    pub origin: Period,
    pub horizon: usize,
    pub subset: String,
    pub lpl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginFailure {
    pub model: String,
    pub origin: Period,
    pub message: String,
}

/// Cumulative score of a model and its log predictive Bayes factor against the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub subset: String,
    pub horizon: usize,
    pub lpl: f64,
    pub lpbf: f64,
    pub n_origins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub benchmark: String,
    pub rows: Vec<ScoreRow>,
    pub per_origin: Vec<OriginScore>,
    pub failures: Vec<OriginFailure>,
}

impl ScoreTable {
    /// Aggregate origin scores. Only origins scored by every model enter the sums,
    /// so LPBFs compare like with like.
    pub fn from_scores(benchmark: &str, models: &[String], per_origin: Vec<OriginScore>, failures: Vec<OriginFailure>) -> Result<Self> {
        if !models.iter().any(|m| m == benchmark) {
            return Err(Error::invalid(format!("benchmark {benchmark:?} is not among the models")));
        }
        let mut keys: Vec<(usize, String)> = per_origin.iter().map(|s| (s.horizon, s.subset.clone())).collect();
        keys.sort();
        keys.dedup();
        let mut rows = Vec::new();
        for (h, subset) in keys {
            let mut origins: Vec<Period> = per_origin
                .iter()
                .filter(|s| s.horizon == h && s.subset == subset)
                .map(|s| s.origin)
                .collect();
            origins.sort();
            origins.dedup();
            let common: Vec<Period> = origins
                .into_iter()
                .filter(|o| {
                    models.iter().all(|m| {
                        per_origin.iter().any(|s| &s.model == m && s.horizon == h && s.subset == subset && s.origin == *o)
                    })
                })
                .collect();
            let total = |model: &str| -> f64 {
                common
                    .iter()
                    .map(|o| {
                        per_origin
                            .iter()
                            .find(|s| s.model == model && s.horizon == h && s.subset == subset && s.origin == *o)
                            .map(|s| s.lpl)
                            .unwrap_or(0.0)
                    })
                    .sum()
            };
            let bench = total(benchmark);
            for m in models {
                let lpl = total(m);
                let lpbf = if m == benchmark { 0.0 } else { lpl - bench };
                rows.push(ScoreRow { model: m.clone(), subset: subset.clone(), horizon: h, lpl, lpbf, n_origins: common.len() });
            }
        }
        Ok(ScoreTable { benchmark: benchmark.to_string(), rows, per_origin, failures })
    }

    pub fn row(&self, model: &str, subset: &str, horizon: usize) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.model == model && r.subset == subset && r.horizon == horizon)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "variable", "horizon", "lpl", "lpbf", "n_origins"])?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.subset.clone(),
                r.horizon.to_string(),
                format!("{:e}", r.lpl),
                format!("{:e}", r.lpbf),
                r.n_origins.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Subset label of the joint score.
pub const JOINT: &str = "joint";

/// Score one forecast against the realized panel rows after the origin.
pub fn score_forecast(
    fc: &ForecastDraws,
    panel: &TimePanel,
    origin_row: usize,
    model: &str,
) -> Result<Vec<OriginScore>> {
    let origin = panel.dates[origin_row];
    let all: Vec<usize> = (0..fc.n_vars).collect();
    let mut out = Vec::new();
    for h in 1..=fc.horizon {
        let r = origin_row + h;
        if r >= panel.n_periods() {
            break;
        }
        let realized = panel.row(r);
        let mut push = |subset: String, vars: &[usize]| -> Result<()> {
            let lpl = log_predictive_likelihood(fc, &realized, vars, h)?;
            out.push(OriginScore { model: model.to_string(), origin, horizon: h, subset, lpl });
            Ok(())
        };
        push(JOINT.to_string(), &all)?;
        if fc.n_vars > 1 {
            for v in 0..fc.n_vars {
                push(panel.variable_names[v].clone(), &[v])?;
            }
        }
    }
    Ok(out)
}

/// Settings of an expanding-window forecast evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Number of training periods at the first origin.
    pub first_origin: usize,
    /// Last origin (training periods), defaults to `T − 1`.
    pub last_origin: Option<usize>,
    pub horizon: usize,
    pub max_draws: Option<usize>,
    pub seed: u64,
}

/// Expanding-window estimation, forecasting and scoring of several models.
pub fn recursive_backtest(
    panel: &TimePanel,
    models: &[ModelSpec],
    benchmark: &str,
    bt: &BacktestConfig,
) -> Result<ScoreTable> {
    if bt.first_origin < 40 {
        return Err(Error::invalid("the first origin must leave at least 40 training periods"));
    }
    let last = bt.last_origin.unwrap_or(panel.n_periods() - 1).min(panel.n_periods() - 1);
    if bt.first_origin > last {
        return Err(Error::invalid("no forecast origins between the first origin and the sample end"));
    }
    let names: Vec<String> = models.iter().map(|m| m.name.clone()).collect();
    let tasks: Vec<(usize, usize)> = (bt.first_origin..=last)
        .flat_map(|n| (0..models.len()).map(move |k| (n, k)))
        .collect();
    let results: Vec<std::result::Result<Vec<OriginScore>, OriginFailure>> = tasks
        .par_iter()
        .map(|&(n, k)| {
            let spec = &models[k];
            let run = || -> Result<Vec<OriginScore>> {
                let train = panel.truncated(n)?;
                let draws = estimate(&train, &spec.config)?;
                let (_, ctxs) = rebuild_contexts(&draws)?;
                let stream = crate::stats::streams::BACKTEST + ((n as u64) << 24);
                let fc = simulate_forecast(&draws, &ctxs, bt.horizon, bt.max_draws, bt.seed, stream)?;
                score_forecast(&fc, panel, n - 1, &spec.name)
            };
            run().map_err(|e| OriginFailure { model: spec.name.clone(), origin: panel.dates[n - 1], message: e.to_string() })
        })
        .collect();
    let mut per_origin = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => per_origin.extend(s),
            Err(f) => failures.push(f),
        }
    }
    ScoreTable::from_scores(benchmark, &names, per_origin, failures)
}
