//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. The long-running criteria drive the `gpvar`
//! binary; the oracle criteria call the library directly.
//!
//! `ACCEPTANCE_ONLY=2,4` restricts the run to a subset (development aid).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use gpvar_core::dgp::{simulate_dgp, simulate_linear_var, LinearVarSpec, VarNoise};
use gpvar_core::forecast::{recursive_backtest, BacktestConfig, ModelSpec, JOINT};
use gpvar_core::girf::{asymmetry_analysis, GirfConfig, GirfSummary};
use gpvar_core::gp::{posterior_moments, posterior_moments_from_grid, predictive_moments};
use gpvar_core::kernels::{build_grid, build_kernel_matrix, kernel_entry, median_heuristic, GridConfig, KernelKind, KernelSpec};
use gpvar_core::panel::{Period, TimePanel};
use gpvar_core::sampler::{estimate, project_zero_mean, rebuild_contexts, SamplerConfig, VolatilityMode};
use gpvar_core::stats::{std_normal, stream_rng, LN_2PI};
use gpvar_core::sv::{
    find_mode, log_acceptance_ratio, log_posterior, prior_precision, simulate_ar1, sv_log_likelihood, sv_log_prior,
    MarginalCovariance, SvState,
};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

type Check = Result<(bool, String), String>;

macro_rules! normals {
    ($rng:expr, $n:expr) => {
        (0..$n).map(|_| std_normal(&mut $rng)).collect::<Vec<f64>>()
    };
}

fn gpvar(args: &[&str], threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gpvar"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("GPVAR_THREADS", n),
        None => cmd.env_remove("GPVAR_THREADS"),
    };
    let out = cmd.output().map_err(|e| format!("cannot run gpvar: {e}"))?;
    if !out.status.success() {
        return Err(format!("gpvar {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().filter_map(Value::as_f64).collect()).unwrap_or_default()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Dense `log N(x; mean, cov)`.
fn dense_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let ch = cov.clone().cholesky().expect("covariance is positive definite");
    let d = x - mean;
    let z = ch.l().solve_lower_triangular(&d).expect("triangular solve");
    let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (x.len() as f64 * LN_2PI + logdet + z.dot(&z))
}

fn random_rows(seed: u64, t: usize, d: usize) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 7);
    DMatrix::from_vec(t, d, normals!(rng, t * d))
}

fn se_spec(rows: &DMatrix<f64>, xi: f64, kappa_mult: f64) -> KernelSpec {
    let kappa = kappa_mult * median_heuristic(rows).expect("distinct rows");
    KernelSpec::squared_exponential(xi, kappa, vec![1.0; rows.ncols()]).expect("valid kernel")
}

// ---------------------------------------------------------------- 1 and 3

struct VerifyRun {
    means: Vec<f64>,
    sds: Vec<f64>,
    acceptance: Vec<f64>,
    newton: Vec<f64>,
    seconds: f64,
}

fn verify_run(dir: &Path) -> Result<VerifyRun, String> {
    let out = dir.join("verify");
    let start = Instant::now();
    gpvar(
        &["verify", "--seed", "1", "--replications", "10", "--t-obs", "200", "--n-iter", "10000", "--out", out.to_str().unwrap()],
        None,
    )?;
    let meta = read_json(&out.join("meta.json"))?;
    let s = &meta["summary"];
    let eqs = s["equations"].as_array().cloned().unwrap_or_default();
    Ok(VerifyRun {
        means: floats(&s["mean_correlation"]),
        sds: floats(&s["sd_correlation"]),
        acceptance: eqs.iter().filter_map(|e| e["acceptance_rate"].as_f64()).collect(),
        newton: eqs.iter().filter_map(|e| e["newton_convergence_rate"].as_f64()).collect(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn criterion_1(run: &Result<VerifyRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let thresholds = [0.90, 0.87, 0.65];
    if run.means.len() != 3 {
        return Err(format!("expected three equations, got {}", run.means.len()));
    }
    let pass = run.means.iter().zip(&thresholds).all(|(m, t)| m >= t) && run.seconds <= 7200.0;
    let detail = (0..3)
        .map(|j| format!("eq{} {:.3} (sd {:.3}, need ≥ {})", j + 1, run.means[j], run.sds[j], thresholds[j]))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((pass, format!("{detail}; {:.0} s", run.seconds)))
}

fn criterion_3(run: &Result<VerifyRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let acc_ok = run.acceptance.iter().all(|a| (0.20..=0.60).contains(a));
    let newton_ok = run.newton.iter().all(|c| *c >= 0.99);
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.p$}")).collect::<Vec<_>>().join("/");
    Ok((
        acc_ok && newton_ok && run.acceptance.len() == 3,
        format!(
            "pooled MH acceptance {} (need [0.20, 0.60]); Newton converged {} (need ≥ 0.99)",
            fmt(&run.acceptance, 3),
            fmt(&run.newton, 4)
        ),
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2(dir: &Path) -> Check {
    let out = dir.join("bench");
    let start = Instant::now();
    gpvar(
        &[
            "bench-scaling",
            "--seed",
            "2",
            "--bench-k",
            "15,60,150,320",
            "--bench-t",
            "200",
            "--bench-sweeps",
            "1000",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    )?;
    let mut reader = csv::Reader::from_path(out.join("bench_timing.csv")).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let k: usize = rec[0].parse().map_err(|_| "bad k")?;
        let s: f64 = rec[5].parse().map_err(|_| "bad timing")?;
        rows.push((k, s));
    }
    let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let spread = hi / lo - 1.0;
    let seconds = start.elapsed().as_secs_f64();
    let detail = rows.iter().map(|(k, s)| format!("K={k}: {s:.2}")).collect::<Vec<_>>().join(", ");
    Ok((
        rows.len() == 4 && spread <= 0.20 && seconds <= 900.0,
        format!("s/1000 draws {detail}; max/min − 1 = {spread:.3} (need ≤ 0.20); {seconds:.0} s"),
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Check {
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let mut rng = stream_rng(400 + s, 0);
        let t = 5 + (s as usize * 7) % 26;
        let x = random_rows(400 + s, t, 3);
        let sqrt_omega: Vec<f64> = normals!(rng, t).iter().map(|z| (0.3 * z).exp()).collect();
        let resid = normals!(rng, t);
        let sm = DMatrix::from_diagonal(&DVector::from_column_slice(&sqrt_omega));
        let dense = |k: &DMatrix<f64>| {
            let sf = &sm * k * &sm;
            let sy = &sf + &sm * &sm;
            let inv = sy.clone().try_inverse().expect("invertible");
            let mean = &sf * &inv * DVector::from_column_slice(&resid);
            let cov = &sf - &sf * &inv * &sf;
            (DMatrix::from_column_slice(t, 1, mean.as_slice()), cov, inv)
        };

        // explicit kernel matrix
        let spec = se_spec(&x, 0.5 + 0.1 * s as f64, 1.0);
        let k = build_kernel_matrix(&spec, &x).map_err(|e| e.to_string())?;
        let post = posterior_moments(&k, &sqrt_omega, &resid).map_err(|e| e.to_string())?;
        let (m, c, inv) = dense(&k);
        worst = worst.max(max_abs_diff(&DMatrix::from_column_slice(t, 1, post.mean.as_slice()), &m));
        worst = worst.max(max_abs_diff(&post.covariance(), &c));

        // predictive at a new input, next-period scale ω*
        let x_star: Vec<f64> = normals!(rng, 3);
        let k_cross: Vec<f64> = (0..t)
            .map(|i| kernel_entry(&spec, x.row(i).transpose().as_slice(), &x_star))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let k_star = kernel_entry(&spec, &x_star, &x_star).map_err(|e| e.to_string())?;
        let next = 0.8;
        let (pm, pv) =
            predictive_moments(&k, &k_cross, k_star, &sqrt_omega, next, &resid).map_err(|e| e.to_string())?;
        let c_vec = DVector::from_iterator(t, (0..t).map(|i| next * k_cross[i] * sqrt_omega[i]));
        let dm = (c_vec.transpose() * &inv * DVector::from_column_slice(&resid))[(0, 0)];
        let dv = next * next * k_star - (c_vec.transpose() * &inv * &c_vec)[(0, 0)];
        worst = worst.max((pm - dm).abs()).max((pv - dv).abs());

        // spectral grid path
        let cfg = GridConfig { n_kappa: 4, n_xi: 3, ..GridConfig::default() };
        let kbar = median_heuristic(&x).map_err(|e| e.to_string())?;
        let grid = build_grid(KernelKind::SquaredExponential, &x, &vec![1.0; 3], kbar, &cfg).map_err(|e| e.to_string())?;
        let idx = (s as usize * 5) % grid.n_points();
        let kg = build_kernel_matrix(&grid.spec(idx), &x).map_err(|e| e.to_string())?;
        let post = posterior_moments_from_grid(&grid, idx, &sqrt_omega, &resid).map_err(|e| e.to_string())?;
        let (m, c, _) = dense(&kg);
        worst = worst.max(max_abs_diff(&DMatrix::from_column_slice(t, 1, post.mean.as_slice()), &m));
        worst = worst.max(max_abs_diff(&post.covariance(), &c));
    }
    Ok((worst <= 1e-8, format!("max-abs deviation {worst:.2e} over 20 problems (need ≤ 1e-8)")))
}

// ---------------------------------------------------------------- 5

/// `p(h | ρ, σ², h0)` as a dense Gaussian.
fn dense_ar1_logpdf(h: &[f64], rho: f64, sigma2: f64, h0: f64) -> f64 {
    let t = h.len();
    let mean = DVector::from_iterator(t, (1..=t).map(|i| rho.powi(i as i32) * h0));
    let cov = DMatrix::from_fn(t, t, |a, b| {
        (1..=a.min(b) + 1).map(|k| sigma2 * rho.powi((a + 1 - k) as i32) * rho.powi((b + 1 - k) as i32)).sum()
    });
    dense_logpdf(&DVector::from_column_slice(h), &mean, &cov)
}

fn dense_sv_likelihood(h: &[f64], a: &DMatrix<f64>, y: &[f64]) -> f64 {
    let t = h.len();
    let s = DMatrix::from_diagonal(&DVector::from_iterator(t, h.iter().map(|v| (0.5 * v).exp())));
    dense_logpdf(&DVector::from_column_slice(y), &DVector::zeros(t), &(&s * a * &s))
}

fn criterion_5() -> Check {
    let (mut grad_err, mut hess_err, mut ratio_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut compared = 0;
    for s in 0..20u64 {
        let mut rng = stream_rng(500 + s, 0);
        let t = 30;
        let x = random_rows(500 + s, t, 4);
        let mut a = build_kernel_matrix(&se_spec(&x, 0.7, 1.0), &x).map_err(|e| e.to_string())?;
        a += DMatrix::<f64>::identity(t, t);
        let cov = MarginalCovariance::new(&a).map_err(|e| e.to_string())?;
        let (rho, sigma2, h0) = (0.9, 0.15, 0.3 * std_normal(&mut rng));
        let truth = simulate_ar1(t, rho, sigma2, h0, &mut rng);
        let y: Vec<f64> = normals!(rng, t).iter().zip(&truth).map(|(z, h)| z * (0.5 * h).exp()).collect();
        let h: Vec<f64> = truth.iter().map(|v| v + 0.2 * std_normal(&mut rng)).collect();
        let state = SvState::new(h.clone(), rho, sigma2, h0).map_err(|e| e.to_string())?;

        let gradient = |p: &[f64]| -> Vec<f64> {
            let lik = sv_log_likelihood(p, &cov, &y);
            let (_, pg, _) = sv_log_prior(p, rho, sigma2, h0);
            lik.gradient.iter().zip(&pg).map(|(a, b)| a + b).collect()
        };
        let g = gradient(&h);
        let eps = 1e-5;
        let bump = |i: usize, d: f64| {
            let mut p = h.clone();
            p[i] += d;
            p
        };
        let fd: Vec<f64> = (0..t)
            .map(|i| (log_posterior(&state, &bump(i, eps), &cov, &y) - log_posterior(&state, &bump(i, -eps), &cov, &y)) / (2.0 * eps))
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        grad_err = grad_err.max(norm(&diff) / norm(&g));

        // tridiagonal band of the negative Hessian against differenced gradients
        let band = sv_log_likelihood(&h, &cov, &y).neg_hessian.add(&prior_precision(t, rho, sigma2));
        let cols: Vec<Vec<f64>> = (0..t)
            .map(|k| {
                let (gp, gm) = (gradient(&bump(k, eps)), gradient(&bump(k, -eps)));
                gp.iter().zip(&gm).map(|(a, b)| -(a - b) / (2.0 * eps)).collect()
            })
            .collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..t {
            num += (band.diag[i] - cols[i][i]).powi(2);
            den += band.diag[i].powi(2);
            if i + 1 < t {
                num += (band.off[i] - 0.5 * (cols[i][i + 1] + cols[i + 1][i])).powi(2);
                den += band.off[i].powi(2);
            }
        }
        hess_err = hess_err.max((num / den).sqrt());

        // acceptance ratio against fully dense densities
        let q = find_mode(&state, &h, &cov, &y);
        if q.fallback {
            continue;
        }
        let proposed = q.draw(&normals!(rng, t));
        let implemented = log_acceptance_ratio(&state, &h, &proposed, &q, &cov, &y);
        let log_p = |p: &[f64]| dense_sv_likelihood(p, &a, &y) + dense_ar1_logpdf(p, rho, sigma2, h0);
        let prec = sv_log_likelihood(&q.mode, &cov, &y).neg_hessian.add(&prior_precision(t, rho, sigma2)).to_dense();
        let q_cov = prec.try_inverse().ok_or("proposal precision is singular")?;
        let mode = DVector::from_column_slice(&q.mode);
        let log_q = |p: &[f64]| dense_logpdf(&DVector::from_column_slice(p), &mode, &q_cov);
        let dense = log_p(&proposed) - log_p(&h) + log_q(&h) - log_q(&proposed);
        ratio_err = ratio_err.max((implemented - dense).abs());
        compared += 1;
    }
    Ok((
        grad_err <= 1e-5 && hess_err <= 1e-5 && ratio_err <= 1e-8 && compared >= 15,
        format!(
            "gradient rel. error {grad_err:.1e}, Hessian band rel. error {hess_err:.1e} (need ≤ 1e-5); \
             acceptance-ratio error {ratio_err:.1e} on {compared} seeds (need ≤ 1e-8)"
        ),
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Check {
    // every retained g draw sums to zero
    let dgp = simulate_dgp(150, 6).map_err(|e| e.to_string())?;
    let panel = dgp.panel().map_err(|e| e.to_string())?.demeaned().standardized().map_err(|e| e.to_string())?.0;
    let mut cfg = SamplerConfig::new(6);
    cfg.n_iter = 400;
    cfg.n_burn = 100;
    cfg.thin = 1;
    let draws = estimate(&panel, &cfg).map_err(|e| e.to_string())?;
    let mut worst_mean: f64 = 0.0;
    let mut n_draws = 0;
    for eq in &draws.equations {
        for d in 0..eq.g.nrows() {
            let row = eq.g.row(d);
            worst_mean = worst_mean.max((row.iter().sum::<f64>() / row.len() as f64).abs());
            n_draws += 1;
        }
    }

    // projected draws against the constrained-Gaussian moments
    let mut rng = stream_rng(61, 0);
    let b = DMatrix::from_vec(4, 4, normals!(rng, 16));
    let v = &b * b.transpose() + DMatrix::identity(4, 4) * 0.5;
    let mu = DVector::from_column_slice(&normals!(rng, 4));
    let ones = DVector::from_element(4, 1.0);
    let v_iota = &v * &ones;
    let denom = ones.dot(&v_iota);
    let target_cov = &v - &v_iota * v_iota.transpose() / denom;
    let target_mean = &mu - &v_iota * (ones.dot(&mu) / denom);
    let l = v.clone().cholesky().ok_or("V not positive definite")?.l();
    let n = 200_000;
    let mut sum = DVector::zeros(4);
    let mut outer = DMatrix::zeros(4, 4);
    for _ in 0..n {
        let g_star = &mu + &l * DVector::from_column_slice(&normals!(rng, 4));
        let g = DVector::from_vec(project_zero_mean(g_star.as_slice(), v_iota.as_slice()).ok_or("degenerate projection")?);
        sum += &g;
        outer += &g * g.transpose();
    }
    let mean = sum / n as f64;
    let emp_cov = outer / n as f64 - &mean * mean.transpose();
    let mut worst_z: f64 = 0.0;
    for a in 0..4 {
        let se_mean = (target_cov[(a, a)] / n as f64).sqrt();
        worst_z = worst_z.max((mean[a] - target_mean[a]).abs() / se_mean);
        for c in 0..4 {
            let var = target_cov[(a, a)] * target_cov[(c, c)] + target_cov[(a, c)].powi(2);
            // singular direction: both sides vanish up to rounding
            if var < 1e-20 {
                continue;
            }
            worst_z = worst_z.max((emp_cov[(a, c)] - target_cov[(a, c)]).abs() / (var / n as f64).sqrt());
        }
    }
    Ok((
        worst_mean < 1e-10 && worst_z <= 4.0,
        format!(
            "max |mean g| {worst_mean:.1e} over {n_draws} draws (need < 1e-10); \
             projected moments within {worst_z:.2} MC SEs (need ≤ 4)"
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let start = Instant::now();
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.4]);
    let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.3, 0.0]);
    let spec = LinearVarSpec { a: vec![a.clone()], q: q.clone(), noise: VarNoise::Gaussian { omega: vec![1.0, 1.0] } };
    let panel = simulate_linear_var(&spec, 240, 7).map_err(|e| e.to_string())?.panel().map_err(|e| e.to_string())?;
    let mut cfg = SamplerConfig::new(7);
    cfg.p = 1;
    cfg.n_iter = 3000;
    cfg.n_burn = 1000;
    cfg.own_kernel = KernelKind::Linear;
    cfg.other_kernel = KernelKind::Linear;
    cfg.volatility = VolatilityMode::Off;
    let draws = estimate(&panel, &cfg).map_err(|e| e.to_string())?;
    let (_, ctxs) = rebuild_contexts(&draws).map_err(|e| e.to_string())?;
    let horizon = 8;
    let origins: Vec<usize> = (0..draws.t_eff()).step_by(24).collect();
    let gcfg = GirfConfig { n_rep: 100, max_draws: Some(200), ..GirfConfig::new(horizon, 7) };
    let rep = asymmetry_analysis(&draws, &ctxs, 0, &origins, &gcfg).map_err(|e| e.to_string())?;

    let at = |s: &[GirfSummary], v: usize, h: usize| s.iter().find(|r| r.variable == v && r.horizon == h).cloned();
    // The per-draw responses condition on the predictive mean, so their spread
    // omits coefficient-estimation noise; the truth is judged against the
    // Monte Carlo spread of the linear IRF estimated on samples from the same VAR.
    let truth = linear_irf(&a, &q, horizon);
    let same_sample = ols_irf(&panel.values, horizon).ok_or("singular OLS design")?;
    let mc_sd = ols_irf_sampling_sd(&spec, 240, horizon, 2000)?;
    let (mut z_truth, mut z_sign, mut z_size, mut gap_ols): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for h in 0..=horizon {
        for v in 0..2 {
            let base = at(&rep.positive, v, h).ok_or("missing horizon")?;
            let mirrored = at(&rep.negative_mirrored, v, h).ok_or("missing horizon")?;
            let halved = at(&rep.two_sd_halved, v, h).ok_or("missing horizon")?;
            let sd = base.sd.max(f64::MIN_POSITIVE);
            let mc = mc_sd[(h, v)].max(f64::MIN_POSITIVE);
            z_truth = z_truth.max((base.q50 - truth[(h, v)]).abs() / mc);
            gap_ols = gap_ols.max((base.q50 - same_sample[(h, v)]).abs() / mc);
            z_sign = z_sign.max((mirrored.q50 - base.q50).abs() / sd);
            z_size = z_size.max((halved.q50 - base.q50).abs() / sd);
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok((
        z_truth <= 3.0 && z_sign <= 3.0 && z_size <= 3.0 && seconds <= 1800.0,
        format!(
            "median vs A^h(I−Q)⁻¹e₁ within {z_truth:.2} MC SDs (same-sample OLS IRF {gap_ols:.2}); \
             sign-mirrored {z_sign:.1e}, size-halved {z_size:.1e} posterior SDs (need ≤ 3); {seconds:.0} s"
        ),
    ))
}

/// `A^h (I − Q)⁻¹ e₁` for `h = 0..=horizon`, one row per horizon.
fn linear_irf(a: &DMatrix<f64>, q: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let m = a.nrows();
    let impact = (DMatrix::identity(m, m) - q).try_inverse().expect("I − Q invertible").column(0).into_owned();
    let mut out = DMatrix::zeros(horizon + 1, m);
    let mut resp = impact;
    for h in 0..=horizon {
        out.row_mut(h).copy_from(&resp.transpose());
        resp = a * resp;
    }
    out
}

/// Linear IRF from equation-by-equation least squares with intercepts on a
/// recursive VAR(1): `y_j` on its contemporaneous predecessors and all lags.
fn ols_irf(y: &DMatrix<f64>, horizon: usize) -> Option<DMatrix<f64>> {
    let (t, m) = y.shape();
    let mut a = DMatrix::zeros(m, m);
    let mut q = DMatrix::zeros(m, m);
    for j in 0..m {
        let k = 1 + j + m;
        let x = DMatrix::from_fn(t - 1, k, |r, c| match c {
            0 => 1.0,
            c if c <= j => y[(r + 1, c - 1)],
            c => y[(r, c - 1 - j)],
        });
        let target = DVector::from_fn(t - 1, |r, _| y[(r + 1, j)]);
        let beta = (x.transpose() * &x).cholesky()?.solve(&(x.transpose() * target));
        for c in 0..j {
            q[(j, c)] = beta[1 + c];
        }
        for c in 0..m {
            a[(j, c)] = beta[1 + j + c];
        }
    }
    // reduced-form lag matrix of the structural estimates
    let b = (DMatrix::identity(m, m) - &q).try_inverse()?;
    Some(linear_irf(&(&b * a), &q, horizon))
}

/// Standard deviation of the least-squares IRF over `reps` samples from `spec`.
fn ols_irf_sampling_sd(spec: &LinearVarSpec, t: usize, horizon: usize, reps: usize) -> Result<DMatrix<f64>, String> {
    let m = spec.q.nrows();
    let mut sum = DMatrix::zeros(horizon + 1, m);
    let mut sum_sq = DMatrix::zeros(horizon + 1, m);
    for r in 0..reps {
        let sim = simulate_linear_var(spec, t, 70_000 + r as u64).map_err(|e| e.to_string())?;
        let irf = ols_irf(&sim.y, horizon).ok_or("singular OLS design")?;
        sum_sq += irf.component_mul(&irf);
        sum += irf;
    }
    let n = reps as f64;
    Ok(DMatrix::from_fn(horizon + 1, m, |h, v| {
        let mean = sum[(h, v)] / n;
        ((sum_sq[(h, v)] / n - mean * mean) * n / (n - 1.0)).max(0.0).sqrt()
    }))
}

// ---------------------------------------------------------------- 8

fn backtest_config(volatility: VolatilityMode, seed: u64) -> SamplerConfig {
    let mut c = SamplerConfig::new(seed);
    c.p = 2;
    c.n_iter = 1000;
    c.n_burn = 500;
    c.volatility = volatility;
    c
}

fn criterion_8() -> Check {
    // white noise: true one-step density is N(0, I)
    let (t, m) = (100, 2);
    let mut rng = stream_rng(8, 0);
    let values = DMatrix::from_vec(t, m, normals!(rng, t * m));
    let panel = TimePanel::from_levels(values.clone(), Period::new(1990, 1).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let bt = BacktestConfig { first_origin: 70, last_origin: Some(99), horizon: 1, max_draws: None, seed: 8 };
    let models = [ModelSpec { name: "se-hom".into(), config: backtest_config(VolatilityMode::Homoskedastic, 8) }];
    let table = recursive_backtest(&panel, &models, "se-hom", &bt).map_err(|e| e.to_string())?;
    let row = table.row("se-hom", JOINT, 1).ok_or("no joint score")?;
    let scores: Vec<f64> = (70..=99)
        .map(|n| (0..m).map(|v| -0.5 * (LN_2PI + values[(n, v)].powi(2))).sum())
        .collect();
    let analytic: f64 = scores.iter().sum();
    let k = scores.len() as f64;
    let mean = analytic / k;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let tol = 2.0 * sd * k.sqrt();
    let white_ok = (row.lpl - analytic).abs() <= tol && row.n_origins == 30 && table.failures.is_empty();

    // stochastic volatility in the data: the SV model must score better
    let spec = LinearVarSpec {
        a: vec![DMatrix::from_diagonal_element(2, 2, 0.5)],
        q: DMatrix::zeros(2, 2),
        noise: VarNoise::StochasticVolatility { mean: vec![0.0, 0.0], rho: 0.97, sigma: 0.4 },
    };
    let sv_panel = simulate_linear_var(&spec, 130, 18).map_err(|e| e.to_string())?.panel().map_err(|e| e.to_string())?.demeaned();
    let bt = BacktestConfig { first_origin: 100, last_origin: Some(129), horizon: 1, max_draws: None, seed: 18 };
    let models = [
        ModelSpec { name: "se-sv".into(), config: backtest_config(VolatilityMode::Stochastic, 18) },
        ModelSpec { name: "se-hom".into(), config: backtest_config(VolatilityMode::Homoskedastic, 18) },
    ];
    let table = recursive_backtest(&sv_panel, &models, "se-hom", &bt).map_err(|e| e.to_string())?;
    let lpbf = table.row("se-sv", JOINT, 1).ok_or("no SV score")?.lpbf;
    Ok((
        white_ok && lpbf > 0.0,
        format!(
            "white noise LPL {:.2} vs analytic {analytic:.2} (tolerance ±{tol:.2}, {} origins); \
             SV vs homoskedastic LPBF {lpbf:.2} (need > 0)",
            row.lpl, row.n_origins
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9(dir: &Path) -> Check {
    let input = dir.join("det-input");
    let inp = input.to_str().unwrap().to_string();
    gpvar(&["simulate-dgp", "--seed", "9", "--t-obs", "150", "--out", &inp], Some("1"))?;
    let y = input.join("y.csv");
    let y = y.to_str().unwrap();
    let shared_draws = dir.join("det-shared");
    let sd = shared_draws.to_str().unwrap().to_string();
    let est = ["--data", y, "--standardize", "--n-iter", "200", "--n-burn", "100"];
    let mut args = vec!["estimate", "--seed", "9", "--out", &sd];
    args.extend(est);
    gpvar(&args, Some("1"))?;
    let draws = format!("{sd}/draws");

    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate-dgp", vec!["--t-obs", "130"]),
        ("inspect", vec!["--data", y]),
        ("estimate", est.to_vec()),
        ("forecast", vec!["--draws", &draws, "--horizon", "4"]),
        (
            "girf",
            vec!["--draws", &draws, "--horizon", "4", "--n-rep", "100", "--max-draws", "20", "--origin-stride", "40", "--asymmetry"],
        ),
        (
            "backtest",
            vec!["--data", y, "--n-iter", "150", "--n-burn", "50", "--first-origin", "146", "--last-origin", "147", "--horizon", "2"],
        ),
        ("verify", vec!["--replications", "2", "--t-obs", "120", "--n-iter", "150", "--n-burn", "50"]),
        ("bench-scaling", vec!["--bench-k", "5,10", "--bench-t", "60", "--bench-sweeps", "5"]),
    ];
    let mut mismatched = Vec::new();
    for (cmd, extra) in &commands {
        let mut manifests = Vec::new();
        for threads in ["1", "64"] {
            let out = dir.join(format!("det-{cmd}-{threads}"));
            let out = out.to_str().unwrap().to_string();
            let mut args = vec![*cmd, "--seed", "9", "--out", &out];
            args.extend(extra.iter().copied());
            gpvar(&args, Some(threads))?;
            manifests.push(fs::read(Path::new(&out).join("manifest.json")).map_err(|e| e.to_string())?);
        }
        if manifests[0] != manifests[1] {
            mismatched.push(*cmd);
        }
    }
    Ok((
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} subcommands: manifests identical at 1 and 64 worker threads", commands.len())
        } else {
            format!("manifests differ for {}", mismatched.join(", "))
        },
    ))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: u32| only.as_ref().map_or(true, |s| s.contains(&i));
    let dir = tempfile::tempdir().expect("temporary directory");

    let verify = if wanted(1) || wanted(3) { Some(verify_run(dir.path())) } else { None };
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Check>)> = vec![
        (1, "recovery of conditional means", Box::new(|| criterion_1(verify.as_ref().unwrap()))),
        (2, "per-draw cost independent of K", Box::new(|| criterion_2(dir.path()))),
        (3, "volatility sampler health", Box::new(|| criterion_3(verify.as_ref().unwrap()))),
        (4, "GP conditioning oracle", Box::new(criterion_4)),
        (5, "gradient/Hessian and acceptance-ratio oracle", Box::new(criterion_5)),
        (6, "restricted sampler contract", Box::new(criterion_6)),
        (7, "GIRF linearity identities", Box::new(criterion_7)),
        (8, "forecast evaluator oracle", Box::new(criterion_8)),
        (9, "determinism", Box::new(|| criterion_9(dir.path()))),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        if !wanted(*id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} ({name}): {} — {detail} [{:.0} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
