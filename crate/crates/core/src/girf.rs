//! Generalized impulse responses by paired simulation of shocked and baseline
//! predictive paths.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::forecast::{simulate_path, subsample_indices, Predictor, Scratch};
use crate::panel::{Period, TimePanel};
use crate::sampler::{estimate, rebuild_contexts, EquationContext, SamplerConfig};
use crate::stats::{self, std_normals, stream_rng, streams};

/// Fewest replications per origin and draw.
pub const MIN_REPLICATIONS: usize = 100;
/// Share of dropped replications above which an origin is flagged.
pub const MAX_DROPPED_FRACTION: f64 = 0.05;

/// Structural shock to equation `target` of `size` time-`t` standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockSpec {
    pub target: usize,
    pub size: f64,
}

impl ShockSpec {
    pub fn new(target: usize, size: f64) -> Result<Self> {
        if !size.is_finite() || size == 0.0 {
            return Err(Error::invalid("shock size must be finite and nonzero"));
        }
        Ok(ShockSpec { target, size })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GirfConfig {
    /// Last horizon; responses cover `0..=horizon`.
    pub horizon: usize,
    pub n_rep: usize,
    /// Bound on `draws × origins × n_rep`; posterior draws are thinned to meet it.
    pub max_paths: usize,
    /// Optional cap on the posterior draws used, applied before `max_paths`.
    pub max_draws: Option<usize>,
    pub seed: u64,
    /// Share eps and future normals between the shocked and baseline paths.
    pub common_random_numbers: bool,
}

impl GirfConfig {
    pub fn new(horizon: usize, seed: u64) -> Self {
        GirfConfig { horizon, n_rep: 200, max_paths: 10_000_000, max_draws: None, seed, common_random_numbers: true }
    }

    fn validate(&self) -> Result<()> {
        if self.n_rep < MIN_REPLICATIONS {
            return Err(Error::invalid(format!("n_rep must be at least {MIN_REPLICATIONS}")));
        }
        if self.max_paths == 0 {
            return Err(Error::invalid("max_paths must be positive"));
        }
        Ok(())
    }
}

/// Posterior summary of one response coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirfSummary {
    pub variable: usize,
    pub horizon: usize,
    pub q16: f64,
    pub q50: f64,
    pub q84: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirfResult {
    pub shock: ShockSpec,
    pub n_vars: usize,
    pub horizon: usize,
    pub n_rep: usize,
    /// Response rows of the estimation sample used as shock dates.
    pub origins: Vec<usize>,
    pub origin_dates: Vec<Period>,
    pub draw_index: Vec<usize>,
    /// `origins × draws × (horizon + 1) × M`.
    pub deltas: Vec<f64>,
    /// Dropped replications per origin, summed over draws.
    pub dropped: Vec<usize>,
    pub flagged: Vec<bool>,
}

impl GirfResult {
    fn block(&self) -> usize {
        (self.horizon + 1) * self.n_vars
    }

    /// Response of draw `di` (position in `draw_index`) at origin `o` (position in `origins`).
    pub fn delta(&self, o: usize, di: usize) -> &[f64] {
        let b = self.block();
        let start = (o * self.draw_index.len() + di) * b;
        &self.deltas[start..start + b]
    }

    /// Multiply every response by `k` (mirroring and size normalization).
    pub fn scaled(&self, k: f64) -> GirfResult {
        let mut out = self.clone();
        out.deltas.iter_mut().for_each(|v| *v *= k);
        out
    }

    /// Per-draw average over `origins` (positions), then quantiles across draws.
    pub fn summarize(&self, origins: &[usize]) -> Result<Vec<GirfSummary>> {
        if origins.is_empty() {
            return Err(Error::invalid("no origins to summarize"));
        }
        let nd = self.draw_index.len();
        let b = self.block();
        let mut avg = vec![0.0; nd * b];
        for di in 0..nd {
            for &o in origins {
                for (a, v) in avg[di * b..(di + 1) * b].iter_mut().zip(self.delta(o, di)) {
                    *a += v;
                }
            }
        }
        avg.iter_mut().for_each(|v| *v /= origins.len() as f64);
        let mut out = Vec::with_capacity(b);
        for h in 0..=self.horizon {
            for v in 0..self.n_vars {
                let mut x: Vec<f64> = (0..nd).map(|di| avg[di * b + h * self.n_vars + v]).collect();
                x.sort_by(f64::total_cmp);
                out.push(GirfSummary {
                    variable: v,
                    horizon: h,
                    q16: stats::quantile_sorted(&x, 0.16),
                    q50: stats::quantile_sorted(&x, 0.5),
                    q84: stats::quantile_sorted(&x, 0.84),
                    mean: stats::mean(&x),
                    sd: stats::std_dev(&x),
                });
            }
        }
        Ok(out)
    }

    /// Summary averaged over every origin.
    pub fn average(&self) -> Result<Vec<GirfSummary>> {
        self.summarize(&(0..self.origins.len()).collect::<Vec<_>>())
    }

    /// Median averaged response of `variable` over horizons `0..=H`.
    pub fn median_path(&self, variable: usize) -> Result<Vec<f64>> {
        Ok(self.average()?.into_iter().filter(|s| s.variable == variable).map(|s| s.q50).collect())
    }
}

/// Long-format CSV: `origin_group, variable, horizon, quantile, value`.
pub fn write_girf_csv<W: Write>(groups: &[(String, Vec<GirfSummary>)], names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["origin_group", "variable", "horizon", "quantile", "value"])?;
    for (group, rows) in groups {
        for s in rows {
            let name = names.get(s.variable).cloned().unwrap_or_else(|| format!("y{}", s.variable + 1));
            for (label, v) in [("q16", s.q16), ("q50", s.q50), ("q84", s.q84), ("mean", s.mean)] {
                w.write_record([group.clone(), name.clone(), s.horizon.to_string(), label.to_string(), format!("{v:.17e}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Responses to `shock` at each origin (response rows of the estimation sample).
///
/// Shocked and baseline paths share the contemporaneous shocks of the other
/// equations and every later random number, so their difference isolates the
/// shock. Each (draw, origin) pair has its own random stream.
pub fn compute_girf(
    draws: &PosteriorDraws,
    ctxs: &[EquationContext],
    shock: ShockSpec,
    origins: &[usize],
    cfg: &GirfConfig,
) -> Result<GirfResult> {
    cfg.validate()?;
    let m = draws.n_vars();
    if shock.target >= m {
        return Err(Error::invalid(format!("shock target {} outside 1..{m}", shock.target + 1)));
    }
    if origins.is_empty() {
        return Err(Error::invalid("at least one origin is required"));
    }
    let t_eff = draws.t_eff();
    if let Some(&bad) = origins.iter().find(|&&r| r >= t_eff) {
        return Err(Error::invalid(format!("origin {bad} outside the estimation sample (0..{t_eff})")));
    }
    let per_draw = origins.len() * cfg.n_rep;
    let max_draws = (cfg.max_paths / per_draw).max(1).min(cfg.max_draws.unwrap_or(usize::MAX));
    let subset = subsample_indices(draws.n_draws(), Some(max_draws));
    let predictor = Predictor::new(draws, ctxs, &subset)?;
    let p = draws.config.p;
    let panel = &draws.panel;
    let hz = cfg.horizon;
    let block = (hz + 1) * m;
    let j = shock.target;

    let per_draw_results: Vec<Result<(Vec<f64>, Vec<usize>)>> = subset
        .par_iter()
        .map(|&d| {
            let pred = predictor.for_draw(d)?;
            let mut scratch = Scratch::default();
            let mut out = vec![0.0; origins.len() * block];
            let mut dropped = vec![0usize; origins.len()];
            for (oi, &r) in origins.iter().enumerate() {
                let mut rng = stream_rng(cfg.seed, streams::GIRF + ((d as u64) << 20) + r as u64);
                let h_t: Vec<f64> = (0..m).map(|k| draws.equations[k].h.row(d)[r]).collect();
                let y_t = panel.row(r + p);
                let mut impact = vec![0.0; m];
                impact[j] = shock.size * (0.5 * h_t[j]).exp();
                let impact = pred.solve_structural(&impact);
                let acc = &mut out[oi * block..(oi + 1) * block];
                acc[..m].copy_from_slice(&impact);
                let mut kept = 0usize;
                for _ in 0..cfg.n_rep {
                    let mut draw_start = || {
                        let mut eps: Vec<f64> =
                            std_normals(&mut rng, m).iter().zip(&h_t).map(|(z, h)| z * (0.5 * h).exp()).collect();
                        eps[j] = 0.0;
                        let start: Vec<f64> = y_t.iter().zip(pred.solve_structural(&eps)).map(|(a, b)| a + b).collect();
                        let normals: Vec<Vec<f64>> =
                            (0..hz).map(|_| std_normals(&mut rng, pred.normals_per_step())).collect();
                        (start, normals)
                    };
                    let (base_t, normals) = draw_start();
                    let (shocked_t, shocked_normals) = if cfg.common_random_numbers {
                        (base_t.clone(), normals.clone())
                    } else {
                        draw_start()
                    };
                    let shocked_t: Vec<f64> = shocked_t.iter().zip(&impact).map(|(a, b)| a + b).collect();
                    let lags_for = |state: Vec<f64>| {
                        let mut lags = Vec::with_capacity(p);
                        lags.push(state);
                        lags.extend((1..p).map(|i| panel.row(r + p - i)));
                        lags
                    };
                    let base = simulate_path(&pred, lags_for(base_t), h_t.clone(), r + 1, &normals, &mut scratch);
                    let shocked = simulate_path(&pred, lags_for(shocked_t), h_t.clone(), r + 1, &shocked_normals, &mut scratch);
                    let (Ok(base), Ok(shocked)) = (base, shocked) else {
                        dropped[oi] += 1;
                        continue;
                    };
                    kept += 1;
                    for (s, (a, b)) in shocked.iter().zip(&base).enumerate() {
                        for v in 0..m {
                            acc[(s + 1) * m + v] += a.y[v] - b.y[v];
                        }
                    }
                }
                if kept == 0 {
                    acc[m..].iter_mut().for_each(|v| *v = f64::NAN);
                } else {
                    acc[m..].iter_mut().for_each(|v| *v /= kept as f64);
                }
            }
            Ok((out, dropped))
        })
        .collect();

    let n_draws = subset.len();
    let mut deltas = vec![0.0; origins.len() * n_draws * block];
    let mut dropped = vec![0usize; origins.len()];
    for (di, res) in per_draw_results.into_iter().enumerate() {
        let (vals, drops) = res?;
        for oi in 0..origins.len() {
            let dst = (oi * n_draws + di) * block;
            deltas[dst..dst + block].copy_from_slice(&vals[oi * block..(oi + 1) * block]);
            dropped[oi] += drops[oi];
        }
    }
    let total = (n_draws * cfg.n_rep) as f64;
    let flagged = dropped.iter().map(|&k| k as f64 > MAX_DROPPED_FRACTION * total).collect();
    Ok(GirfResult {
        shock,
        n_vars: m,
        horizon: hz,
        n_rep: cfg.n_rep,
        origins: origins.to_vec(),
        origin_dates: origins.iter().map(|&r| panel.dates[r + p]).collect(),
        draw_index: subset,
        deltas,
        dropped,
        flagged,
    })
}

/// Responses to `+1`, `−1` and `+2` standard-deviation shocks on shared random numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymmetryReport {
    pub positive: Vec<GirfSummary>,
    pub negative: Vec<GirfSummary>,
    pub negative_mirrored: Vec<GirfSummary>,
    pub two_sd: Vec<GirfSummary>,
    pub two_sd_halved: Vec<GirfSummary>,
    /// Max-abs gap between positive and mirrored negative median responses.
    pub sign_gap: f64,
    /// Max-abs gap between the one and halved two standard-deviation medians.
    pub size_gap: f64,
}

fn max_median_gap(a: &[GirfSummary], b: &[GirfSummary]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.q50 - y.q50).abs()).fold(0.0, f64::max)
}

pub fn asymmetry_analysis(
    draws: &PosteriorDraws,
    ctxs: &[EquationContext],
    target: usize,
    origins: &[usize],
    cfg: &GirfConfig,
) -> Result<AsymmetryReport> {
    let pos = compute_girf(draws, ctxs, ShockSpec::new(target, 1.0)?, origins, cfg)?;
    let neg = compute_girf(draws, ctxs, ShockSpec::new(target, -1.0)?, origins, cfg)?;
    let two = compute_girf(draws, ctxs, ShockSpec::new(target, 2.0)?, origins, cfg)?;
    let positive = pos.average()?;
    let negative_mirrored = neg.scaled(-1.0).average()?;
    let two_sd_halved = two.scaled(0.5).average()?;
    Ok(AsymmetryReport {
        sign_gap: max_median_gap(&positive, &negative_mirrored),
        size_gap: max_median_gap(&positive, &two_sd_halved),
        negative: neg.average()?,
        two_sd: two.average()?,
        positive,
        negative_mirrored,
        two_sd_halved,
    })
}

/// Named inclusive date range of origins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subperiod {
    pub name: String,
    pub start: Period,
    pub end: Period,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubperiodSummary {
    pub name: String,
    pub n_origins: usize,
    pub summary: Vec<GirfSummary>,
}

pub fn subperiod_average(result: &GirfResult, periods: &[Subperiod]) -> Result<Vec<SubperiodSummary>> {
    periods
        .iter()
        .map(|sp| {
            let members: Vec<usize> = result
                .origin_dates
                .iter()
                .enumerate()
                .filter(|(_, d)| **d >= sp.start && **d <= sp.end)
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                return Err(Error::invalid(format!("subperiod '{}' contains no origins", sp.name)));
            }
            Ok(SubperiodSummary { name: sp.name.clone(), n_origins: members.len(), summary: result.summarize(&members)? })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingReport {
    /// Each ordering as a permutation of the original variable indices.
    pub orderings: Vec<Vec<usize>>,
    pub variables: Vec<String>,
    /// Per variable: correlations of median responses between orderings.
    pub correlations: Vec<DMatrix<f64>>,
}

/// Re-estimate under random orderings that keep the first two positions and
/// correlate the median averaged responses of each variable. The first
/// ordering is the original one.
pub fn ordering_robustness(
    panel: &TimePanel,
    config: &SamplerConfig,
    shock: ShockSpec,
    origins: &[usize],
    n_orderings: usize,
    cfg: &GirfConfig,
) -> Result<OrderingReport> {
    let m = panel.n_vars();
    if m < 3 {
        return Err(Error::invalid("ordering robustness needs at least three variables"));
    }
    if n_orderings == 0 {
        return Err(Error::invalid("n_orderings must be positive"));
    }
    // top of the GIRF namespace; per-draw streams stay below it for < 2^19 draws
    let mut rng = stream_rng(cfg.seed, streams::GIRF + (1 << 40) - 1);
    let mut orderings = vec![(0..m).collect::<Vec<_>>()];
    while orderings.len() < n_orderings {
        let mut perm: Vec<usize> = (0..m).collect();
        perm[2..].shuffle(&mut rng);
        orderings.push(perm);
    }
    let mut medians: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_orderings);
    for perm in &orderings {
        let reordered = panel.reorder_variables(perm)?;
        let draws = estimate(&reordered, config)?;
        let (_, ctxs) = rebuild_contexts(&draws)?;
        let new_target = perm.iter().position(|&v| v == shock.target).expect("permutation covers every variable");
        let res = compute_girf(&draws, &ctxs, ShockSpec { target: new_target, ..shock }, origins, cfg)?;
        // back to the original variable order
        let mut by_var = vec![Vec::new(); m];
        for (pos, &orig) in perm.iter().enumerate() {
            by_var[orig] = res.median_path(pos)?;
        }
        medians.push(by_var);
    }
    let correlations = (0..m)
        .map(|v| {
            DMatrix::from_fn(n_orderings, n_orderings, |a, b| {
                if a == b {
                    1.0
                } else {
                    stats::pearson(&medians[a][v], &medians[b][v]).unwrap_or(f64::NAN)
                }
            })
        })
        .collect();
    Ok(OrderingReport { orderings, variables: panel.variable_names.clone(), correlations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_linear_var, LinearVarSpec, VarNoise};
    use crate::kernels::KernelKind;
    use crate::sampler::VolatilityMode;

    fn linear_fixture(seed: u64) -> (PosteriorDraws, Vec<EquationContext>) {
        let spec = LinearVarSpec {
            a: vec![DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.0, 0.4, 0.1, 0.1, 0.0, 0.3])],
            q: DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.3, 0.0, 0.0, -0.2, 0.2, 0.0]),
            noise: VarNoise::Gaussian { omega: vec![1.0; 3] },
        };
        let panel = simulate_linear_var(&spec, 80, seed).unwrap().panel().unwrap();
        let mut c = SamplerConfig::new(seed);
        c.n_iter = 300;
        c.n_burn = 100;
        c.thin = 4;
        c.p = 1;
        c.own_kernel = KernelKind::Linear;
        c.other_kernel = KernelKind::Linear;
        c.volatility = VolatilityMode::Off;
        let draws = estimate(&panel, &c).unwrap();
        let (_, ctxs) = rebuild_contexts(&draws).unwrap();
        (draws, ctxs)
    }

    fn cfg(seed: u64) -> GirfConfig {
        GirfConfig { n_rep: 100, ..GirfConfig::new(4, seed) }
    }

    #[test]
    fn impact_is_exact_and_recursive() {
        let (draws, ctxs) = linear_fixture(1);
        let res = compute_girf(&draws, &ctxs, ShockSpec::new(1, 1.5).unwrap(), &[10, 40], &cfg(2)).unwrap();
        for o in 0..2 {
            for (di, &d) in res.draw_index.iter().enumerate() {
                let delta = res.delta(o, di);
                let omega = draws.equations[1].h.row(d)[res.origins[o]].exp();
                assert_eq!(delta[0], 0.0);
                assert_eq!(delta[1], 1.5 * omega.sqrt());
                assert!(delta.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn zero_shock_gives_zero_response() {
        let (draws, ctxs) = linear_fixture(3);
        // bypasses the nonzero check on purpose
        let res = compute_girf(&draws, &ctxs, ShockSpec { target: 0, size: 0.0 }, &[20], &cfg(4)).unwrap();
        assert!(res.deltas.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (draws, ctxs) = linear_fixture(5);
        assert!(ShockSpec::new(0, f64::NAN).is_err());
        assert!(ShockSpec::new(0, 0.0).is_err());
        assert!(compute_girf(&draws, &ctxs, ShockSpec::new(3, 1.0).unwrap(), &[1], &cfg(1)).is_err());
        assert!(compute_girf(&draws, &ctxs, ShockSpec::new(0, 1.0).unwrap(), &[10_000], &cfg(1)).is_err());
        let few = GirfConfig { n_rep: 50, ..cfg(1) };
        assert!(compute_girf(&draws, &ctxs, ShockSpec::new(0, 1.0).unwrap(), &[1], &few).is_err());
    }

    #[test]
    fn linear_model_is_symmetric_and_proportional() {
        let (draws, ctxs) = linear_fixture(7);
        let rep = asymmetry_analysis(&draws, &ctxs, 0, &[15, 50], &cfg(8)).unwrap();
        for ((a, b), c) in rep.positive.iter().zip(&rep.negative_mirrored).zip(&rep.two_sd_halved) {
            let tol = 3.0 * a.sd.max(1e-12);
            assert!((a.q50 - b.q50).abs() <= tol, "sign {a:?} {b:?}");
            assert!((a.q50 - c.q50).abs() <= tol, "size {a:?} {c:?}");
        }
    }

    #[test]
    fn subperiods_partition_origins() {
        let (draws, ctxs) = linear_fixture(9);
        let origins = [5, 25, 45, 65];
        let res = compute_girf(&draws, &ctxs, ShockSpec::new(2, 1.0).unwrap(), &origins, &cfg(10)).unwrap();
        let d = &res.origin_dates;
        let all = Subperiod { name: "all".into(), start: d[0], end: d[3] };
        let whole = subperiod_average(&res, &[all]).unwrap();
        assert_eq!(whole[0].summary, res.average().unwrap());
        let split = [
            Subperiod { name: "a".into(), start: d[0], end: d[1] },
            Subperiod { name: "b".into(), start: d[2], end: d[3] },
        ];
        let parts = subperiod_average(&res, &split).unwrap();
        assert_eq!(parts.iter().map(|p| p.n_origins).sum::<usize>(), origins.len());
        let empty = Subperiod { name: "none".into(), start: Period::new(1900, 1).unwrap(), end: Period::new(1900, 4).unwrap() };
        assert!(subperiod_average(&res, &[empty]).is_err());
    }

    #[test]
    fn paired_paths_reduce_monte_carlo_spread() {
        let (draws, ctxs) = linear_fixture(11);
        let spread = |crn: bool| {
            let vals: Vec<f64> = (0..12)
                .map(|s| {
                    let c = GirfConfig { max_paths: 100, common_random_numbers: crn, ..cfg(100 + s) };
                    let res = compute_girf(&draws, &ctxs, ShockSpec::new(0, 1.0).unwrap(), &[30], &c).unwrap();
                    res.delta(0, 0)[2 * 3]
                })
                .collect();
            stats::std_dev(&vals)
        };
        assert!(spread(true) <= spread(false));
    }

    #[test]
    fn single_ordering_is_trivially_correlated() {
        let spec = LinearVarSpec {
            a: vec![DMatrix::from_diagonal_element(3, 3, 0.5)],
            q: DMatrix::zeros(3, 3),
            noise: VarNoise::Gaussian { omega: vec![1.0; 3] },
        };
        let panel = simulate_linear_var(&spec, 60, 1).unwrap().panel().unwrap();
        let mut c = SamplerConfig::new(1);
        c.n_iter = 60;
        c.n_burn = 20;
        c.p = 1;
        c.volatility = VolatilityMode::Off;
        let rep = ordering_robustness(&panel, &c, ShockSpec::new(0, 1.0).unwrap(), &[10], 1, &cfg(1)).unwrap();
        assert_eq!(rep.correlations.len(), 3);
        assert_eq!(rep.correlations[0], DMatrix::from_element(1, 1, 1.0));
    }
}
