//! Subcommand implementations. Every command writes only below `cfg.out`:
//! the echoed `config.toml`, a `meta.json`, its artifacts and a
//! `manifest.json` of SHA-256 hashes (wall-clock files excluded).

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gpvar_core::dgp::{recovery_metrics, simulate_dgp, simulate_linear_var, LinearVarSpec, RecoverySummary, VarNoise};
use gpvar_core::draws::{write_tree_manifest, PosteriorDraws, TIMING_FILE};
use gpvar_core::forecast::{recursive_backtest, simulate_forecast, BacktestConfig, ModelSpec};
use gpvar_core::girf::{
    asymmetry_analysis, compute_girf, ordering_robustness, subperiod_average, write_girf_csv, GirfConfig, GirfSummary,
    ShockSpec, Subperiod,
};
use gpvar_core::panel::{build_lag_design, load_panel, Period, TimePanel, TransformCode, TransformSpec};
use gpvar_core::sampler::{build_equation_grids, estimate, rebuild_contexts, EquationContext, EquationSampler};
use gpvar_core::stats::{self, streams};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

/// Wall-clock outputs, never hashed.
const BENCH_FILE: &str = "bench_timing.csv";
/// Sweeps per timed block of `bench-scaling`.
const BENCH_BLOCK: usize = 50;

pub fn run(command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml())?;
    let summary = match command {
        "inspect" => inspect(cfg)?,
        "simulate-dgp" => simulate(cfg)?,
        "verify" => verify(cfg)?,
        "estimate" => run_estimate(cfg)?,
        "forecast" => forecast(cfg)?,
        "girf" => girf(cfg)?,
        "backtest" => backtest(cfg)?,
        "bench-scaling" => bench_scaling(cfg)?,
        other => return Err(CliError::Config(format!("unknown command `{other}`"))),
    };
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(cfg)?,
        "summary": summary,
    });
    fs::write(cfg.out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    write_tree_manifest(&cfg.out, &[TIMING_FILE, BENCH_FILE])?;
    Ok(())
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<File, CliError> {
    Ok(File::create(cfg.out.join(name))?)
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| CliError::Config(format!("`{key}` is required for this command")))
}

/// Panel from `data` (+ optional `transforms`; every column untransformed
/// when absent), standardized on request.
fn input_panel(cfg: &RunConfig) -> Result<(TimePanel, Option<Vec<f64>>), CliError> {
    let data = require(&cfg.data, "data")?;
    let spec = match &cfg.transforms {
        Some(path) => TransformSpec::parse(&fs::read_to_string(path)?)?,
        None => {
            let mut reader = csv::Reader::from_path(data)?;
            let names: Vec<String> = reader.headers()?.iter().skip(1).map(|s| s.trim().to_string()).collect();
            let level = TransformCode::from_code(1)?;
            TransformSpec::new(names.into_iter().map(|n| (n, level)).collect())
        }
    };
    let panel = load_panel(File::open(data)?, &spec)?;
    if cfg.standardize.unwrap_or(false) {
        let (panel, scales) = panel.standardized()?;
        Ok((panel, Some(scales)))
    } else {
        Ok((panel, None))
    }
}

fn write_matrix_csv(path: &Path, dates: &[Period], names: &[String], rows: impl Fn(usize) -> Vec<f64>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (t, d) in dates.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(rows(t).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn inspect(cfg: &RunConfig) -> Result<Value, CliError> {
    let (panel, scales) = input_panel(cfg)?;
    panel.write_csv(out_file(cfg, "panel.csv")?)?;
    let (first, last) = (panel.dates[0], panel.dates[panel.n_periods() - 1]);
    println!("{} variables, {} periods ({first} to {last})", panel.n_vars(), panel.n_periods());
    for j in 0..panel.n_vars() {
        let x = panel.column(j);
        println!("  {:<16} code {}  sd {:.4}", panel.variable_names[j], panel.transform_codes[j].code(), stats::std_dev(&x));
    }
    Ok(json!({
        "variables": panel.variable_names,
        "n_periods": panel.n_periods(),
        "first": first.to_string(),
        "last": last.to_string(),
        "scales": scales,
    }))
}

fn simulate(cfg: &RunConfig) -> Result<Value, CliError> {
    let d = simulate_dgp(cfg.t_obs, cfg.seed())?;
    let panel = d.panel()?;
    panel.write_csv(out_file(cfg, "y.csv")?)?;
    let names = &panel.variable_names;
    for (name, m) in [
        ("true_m.csv", &d.true_m),
        ("true_f.csv", &d.true_f),
        ("true_g.csv", &d.true_g),
        ("true_omega.csv", &d.true_omega),
        ("true_lambda.csv", &d.true_lambda),
    ] {
        write_matrix_csv(&cfg.out.join(name), &panel.dates, names, |t| m.row(t).iter().copied().collect())?;
    }
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect() };
    let params = json!({
        "seed": d.seed,
        "attempt": d.attempt,
        "q": rows(&d.true_q),
        "phi": d.true_phis.iter().map(rows).collect::<Vec<_>>(),
    });
    fs::write(cfg.out.join("params.json"), serde_json::to_string_pretty(&params)?)?;
    println!("simulated {} periods (seed {}, attempt {})", d.n_periods(), d.seed, d.attempt);
    Ok(json!({ "n_periods": d.n_periods(), "attempt": d.attempt }))
}

fn verify(cfg: &RunConfig) -> Result<Value, CliError> {
    if cfg.replications == 0 {
        return Err(CliError::Config("replications must be positive".into()));
    }
    let standardize = cfg.standardize.unwrap_or(true);
    let base = cfg.sampler()?;
    let mut corrs = Vec::new();
    let mut per_eq = Vec::new();
    let mut seconds = Vec::new();
    let mut w = csv::Writer::from_writer(out_file(cfg, "recovery.csv")?);
    w.write_record([
        "replication",
        "seed",
        "equation",
        "correlation",
        "mh_proposals",
        "mh_acceptances",
        "mh_acceptance_rate",
        "newton_convergence_rate",
        "mean_newton_iterations",
    ])?;
    for r in 0..cfg.replications {
        let seed = cfg.seed() + r as u64;
        let dgp = simulate_dgp(cfg.t_obs, seed)?;
        let mut panel = dgp.panel()?.demeaned();
        if standardize {
            panel = panel.standardized()?.0;
        }
        let mut c = base.clone();
        c.seed = seed;
        let start = Instant::now();
        let draws = estimate(&panel, &c)?;
        seconds.push(start.elapsed().as_secs_f64());
        let corr = recovery_metrics(&draws, &dgp)?;
        for (j, d) in draws.diagnostics.iter().enumerate() {
            w.write_record([
                r.to_string(),
                seed.to_string(),
                (j + 1).to_string(),
                format!("{:e}", corr[j]),
                d.mh.proposals.to_string(),
                d.mh.acceptances.to_string(),
                format!("{:e}", d.mh.acceptance_rate()),
                format!("{:e}", d.mh.newton_convergence_rate()),
                format!("{:e}", d.mh.mean_newton_iterations()),
            ])?;
        }
        println!(
            "replication {:>3} (seed {seed}): correlations {}  acceptance {}",
            r + 1,
            corr.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>().join(" "),
            draws.diagnostics.iter().map(|d| format!("{:.3}", d.mh.acceptance_rate())).collect::<Vec<_>>().join(" ")
        );
        per_eq.push(draws.diagnostics.iter().map(|d| d.mh.clone()).collect::<Vec<_>>());
        corrs.push(corr);
    }
    w.flush()?;
    let summary = RecoverySummary::new(corrs)?;
    let m = summary.mean.len();
    let mut pooled = Vec::with_capacity(m);
    let mut w = csv::Writer::from_writer(out_file(cfg, "summary.csv")?);
    w.write_record(["equation", "mean_correlation", "sd_correlation", "pooled_acceptance_rate", "newton_convergence_rate"])?;
    println!("\nequation  mean corr   (sd)    MH acceptance  Newton converged");
    for j in 0..m {
        let mut total = gpvar_core::sv::MhDiagnostics::default();
        for rep in &per_eq {
            total.merge(&rep[j]);
        }
        let (acc, conv) = (total.acceptance_rate(), total.newton_convergence_rate());
        pooled.push(json!({ "acceptance_rate": acc, "newton_convergence_rate": conv }));
        w.write_record([
            (j + 1).to_string(),
            format!("{:e}", summary.mean[j]),
            format!("{:e}", summary.sd[j]),
            format!("{acc:e}"),
            format!("{conv:e}"),
        ])?;
        println!("{:>8}  {:>9.3}  ({:.3})  {:>13.3}  {:>16.4}", j + 1, summary.mean[j], summary.sd[j], acc, conv);
    }
    w.flush()?;
    fs::write(cfg.out.join(TIMING_FILE), serde_json::to_string_pretty(&json!({ "replication_seconds": seconds }))?)?;
    Ok(json!({
        "replications": cfg.replications,
        "standardized": standardize,
        "mean_correlation": summary.mean,
        "sd_correlation": summary.sd,
        "equations": pooled,
    }))
}

fn diagnostics_json(draws: &PosteriorDraws) -> Value {
    draws
        .diagnostics
        .iter()
        .enumerate()
        .map(|(j, d)| {
            json!({
                "equation": j + 1,
                "mh_acceptance_rate": d.mh.acceptance_rate(),
                "newton_convergence_rate": d.mh.newton_convergence_rate(),
                "mean_newton_iterations": d.mh.mean_newton_iterations(),
                "rho_acceptance_rate": d.mh.rho_acceptances as f64 / d.mh.rho_proposals.max(1) as f64,
            })
        })
        .collect()
}

fn run_estimate(cfg: &RunConfig) -> Result<Value, CliError> {
    let (panel, scales) = input_panel(cfg)?;
    let draws = estimate(&panel, &cfg.sampler()?)?;
    draws.save(&cfg.out.join("draws"))?;
    if let Some(s) = &scales {
        let mut w = csv::Writer::from_writer(out_file(cfg, "scales.csv")?);
        w.write_record(["variable", "sd"])?;
        for (n, v) in panel.variable_names.iter().zip(s) {
            w.write_record([n.clone(), format!("{v:e}")])?;
        }
        w.flush()?;
    }
    for (j, d) in draws.diagnostics.iter().enumerate() {
        println!(
            "equation {} ({}): MH acceptance {:.3}, Newton converged {:.4}, {:.1} s",
            j + 1,
            panel.variable_names[j],
            d.mh.acceptance_rate(),
            d.mh.newton_convergence_rate(),
            d.sampling_seconds
        );
    }
    Ok(json!({ "n_draws": draws.n_draws(), "t_eff": draws.t_eff(), "diagnostics": diagnostics_json(&draws) }))
}

fn load_draws(cfg: &RunConfig) -> Result<(PosteriorDraws, Vec<EquationContext>), CliError> {
    let draws = PosteriorDraws::load(require(&cfg.draws, "draws")?)?;
    let (_, ctxs) = rebuild_contexts(&draws)?;
    Ok((draws, ctxs))
}

fn forecast(cfg: &RunConfig) -> Result<Value, CliError> {
    let (draws, ctxs) = load_draws(cfg)?;
    let fc = simulate_forecast(&draws, &ctxs, cfg.horizon, cfg.max_draws, cfg.seed(), streams::FORECAST)?;
    let names = &draws.panel.variable_names;
    let mut date = *draws.panel.dates.last().expect("panel has periods");
    let mut w = csv::Writer::from_writer(out_file(cfg, "forecast.csv")?);
    w.write_record(["variable", "horizon", "date", "q05", "q16", "q50", "q84", "q95", "mean"])?;
    for h in 1..=cfg.horizon {
        date = date.next();
        for (v, name) in names.iter().enumerate() {
            let mut x = fc.values(h, v);
            x.sort_by(f64::total_cmp);
            let mut rec = vec![name.clone(), h.to_string(), date.to_string()];
            rec.extend([0.05, 0.16, 0.5, 0.84, 0.95].iter().map(|&p| format!("{:e}", stats::quantile_sorted(&x, p))));
            rec.push(format!("{:e}", stats::mean(&x)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    println!("{} predictive paths, {} excluded", fc.n_valid(), fc.excluded);
    Ok(json!({ "n_valid": fc.n_valid(), "excluded": fc.excluded, "horizon": cfg.horizon }))
}

fn resolve_variable(names: &[String], key: &str) -> Result<usize, CliError> {
    if let Some(j) = names.iter().position(|n| n == key) {
        return Ok(j);
    }
    match key.parse::<usize>() {
        Ok(k) if (1..=names.len()).contains(&k) => Ok(k - 1),
        _ => Err(CliError::Config(format!("shock_variable `{key}` is neither a variable name nor 1..{}", names.len()))),
    }
}

fn parse_range(text: &str) -> Result<(Period, Period), CliError> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("`{text}` is not a START:END date range")))?;
    let parse = |s: &str| s.trim().parse::<Period>().map_err(|e| CliError::Config(e.to_string()));
    Ok((parse(a)?, parse(b)?))
}

/// Response rows selected by `origins` and `origin_stride`.
fn select_origins(cfg: &RunConfig, dates: &[Period]) -> Result<Vec<usize>, CliError> {
    if cfg.origin_stride == 0 {
        return Err(CliError::Config("origin_stride must be positive".into()));
    }
    let rows: Vec<usize> = if cfg.origins == "all" {
        (0..dates.len()).collect()
    } else {
        let (a, b) = parse_range(&cfg.origins)?;
        (0..dates.len()).filter(|&r| dates[r] >= a && dates[r] <= b).collect()
    };
    let rows: Vec<usize> = rows.into_iter().step_by(cfg.origin_stride).collect();
    if rows.is_empty() {
        return Err(CliError::Config(format!("origins `{}` select no estimation periods", cfg.origins)));
    }
    Ok(rows)
}

fn girf(cfg: &RunConfig) -> Result<Value, CliError> {
    let (draws, ctxs) = load_draws(cfg)?;
    let names = draws.panel.variable_names.clone();
    let shock = ShockSpec::new(resolve_variable(&names, &cfg.shock_variable)?, cfg.shock_size)?;
    let origins = select_origins(cfg, draws.response_dates())?;
    let gcfg = GirfConfig {
        n_rep: cfg.n_rep,
        max_paths: cfg.max_paths,
        max_draws: cfg.max_draws,
        ..GirfConfig::new(cfg.horizon, cfg.seed())
    };
    let res = compute_girf(&draws, &ctxs, shock, &origins, &gcfg)?;
    let mut groups: Vec<(String, Vec<GirfSummary>)> = vec![("average".into(), res.average()?)];
    let periods = cfg
        .subperiods
        .iter()
        .map(|s| {
            let (name, range) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("subperiod `{s}` is not NAME=START:END")))?;
            let (start, end) = parse_range(range)?;
            Ok(Subperiod { name: name.trim().to_string(), start, end })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut period_counts = Vec::new();
    for sp in subperiod_average(&res, &periods)? {
        period_counts.push(json!({ "name": sp.name, "n_origins": sp.n_origins }));
        groups.push((sp.name, sp.summary));
    }
    write_girf_csv(&groups, &names, out_file(cfg, "girf.csv")?)?;
    if cfg.per_origin {
        let per: Vec<(String, Vec<GirfSummary>)> = (0..origins.len())
            .map(|o| Ok((res.origin_dates[o].to_string(), res.summarize(&[o])?)))
            .collect::<Result<_, gpvar_core::Error>>()?;
        write_girf_csv(&per, &names, out_file(cfg, "girf_origins.csv")?)?;
    }
    let mut summary = json!({
        "shock_variable": names[shock.target],
        "shock_size": shock.size,
        "n_origins": origins.len(),
        "n_draws": res.draw_index.len(),
        "flagged_origins": res.flagged.iter().filter(|&&f| f).count(),
        "subperiods": period_counts,
    });
    if cfg.asymmetry {
        let rep = asymmetry_analysis(&draws, &ctxs, shock.target, &origins, &gcfg)?;
        let series = vec![
            ("positive".to_string(), rep.positive.clone()),
            ("negative".to_string(), rep.negative.clone()),
            ("negative_mirrored".to_string(), rep.negative_mirrored.clone()),
            ("two_sd".to_string(), rep.two_sd.clone()),
            ("two_sd_halved".to_string(), rep.two_sd_halved.clone()),
        ];
        write_girf_csv(&series, &names, out_file(cfg, "asymmetry.csv")?)?;
        summary["sign_gap"] = json!(rep.sign_gap);
        summary["size_gap"] = json!(rep.size_gap);
        println!("sign asymmetry {:.4e}, size asymmetry {:.4e}", rep.sign_gap, rep.size_gap);
    }
    if cfg.n_orderings > 1 {
        let rep = ordering_robustness(&draws.panel, &draws.config, shock, &origins, cfg.n_orderings, &gcfg)?;
        let mut w = csv::Writer::from_writer(out_file(cfg, "ordering.csv")?);
        w.write_record(["variable", "ordering_a", "ordering_b", "correlation"])?;
        for (v, c) in rep.correlations.iter().enumerate() {
            for a in 0..c.nrows() {
                for b in 0..c.ncols() {
                    w.write_record([rep.variables[v].clone(), a.to_string(), b.to_string(), format!("{:e}", c[(a, b)])])?;
                }
            }
        }
        w.flush()?;
        summary["orderings"] = json!(rep.orderings);
    }
    println!(
        "GIRF to {} ({:+} sd): {} origins x {} draws x {} replications",
        names[shock.target],
        shock.size,
        origins.len(),
        res.draw_index.len(),
        res.n_rep
    );
    Ok(summary)
}

fn backtest(cfg: &RunConfig) -> Result<Value, CliError> {
    let (panel, _) = input_panel(cfg)?;
    if cfg.models.is_empty() {
        return Err(CliError::Config("`models` must name at least one model".into()));
    }
    let models = cfg
        .models
        .iter()
        .map(|n| Ok(ModelSpec { name: n.clone(), config: cfg.model(n)? }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let benchmark = cfg.benchmark.clone().unwrap_or_else(|| cfg.models[0].clone());
    if !cfg.models.contains(&benchmark) {
        return Err(CliError::Config(format!("benchmark `{benchmark}` is not among the models")));
    }
    let bt = BacktestConfig {
        first_origin: cfg.first_origin,
        last_origin: cfg.last_origin,
        horizon: cfg.horizon,
        max_draws: cfg.max_draws,
        seed: cfg.seed(),
    };
    let table = recursive_backtest(&panel, &models, &benchmark, &bt)?;
    table.write_csv(out_file(cfg, "scores.csv")?)?;
    let mut w = csv::Writer::from_writer(out_file(cfg, "per_origin.csv")?);
    w.write_record(["model", "origin", "horizon", "variable", "lpl"])?;
    for s in &table.per_origin {
        w.write_record([s.model.clone(), s.origin.to_string(), s.horizon.to_string(), s.subset.clone(), format!("{:e}", s.lpl)])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(out_file(cfg, "failures.csv")?);
    w.write_record(["model", "origin", "message"])?;
    for f in &table.failures {
        w.write_record([f.model.clone(), f.origin.to_string(), f.message.clone()])?;
    }
    w.flush()?;
    for r in table.rows.iter().filter(|r| r.subset == gpvar_core::forecast::JOINT) {
        println!("{:<16} h={:<2} LPL {:>10.3}  LPBF {:>8.3}  ({} origins)", r.model, r.horizon, r.lpl, r.lpbf, r.n_origins);
    }
    Ok(json!({ "benchmark": benchmark, "rows": table.rows, "failures": table.failures.len() }))
}

fn bench_scaling(cfg: &RunConfig) -> Result<Value, CliError> {
    let p = cfg.lags;
    let sampler = cfg.sampler()?;
    let mut results = Vec::new();
    let mut w = csv::Writer::from_writer(out_file(cfg, BENCH_FILE)?);
    w.write_record(["k", "n_vars", "lags", "t_eff", "setup_seconds", "seconds_per_1000_draws", "mean_newton_iterations", "mean_slice_evaluations"])?;
    for &k in &cfg.bench_k {
        if k == 0 || k % p != 0 {
            return Err(CliError::Config(format!("bench_k entry {k} is not a positive multiple of lags = {p}")));
        }
        let m = k / p;
        let spec = LinearVarSpec {
            a: vec![DMatrix::from_diagonal_element(m, m, 0.5)],
            q: DMatrix::zeros(m, m),
            noise: VarNoise::Gaussian { omega: vec![1.0; m] },
        };
        let panel = simulate_linear_var(&spec, cfg.bench_t + p, cfg.seed())?.panel()?;
        let design = build_lag_design(&panel, p)?;
        let start = Instant::now();
        let grids = build_equation_grids(&design, 0, &sampler)?;
        let ctx = EquationContext::new(&design, 0, grids);
        let setup = start.elapsed().as_secs_f64();
        let mut eq = EquationSampler::new(&ctx, &sampler);
        for _ in 0..20 {
            eq.sweep(&mut ())?;
        }
        eq.diagnostics = Default::default();
        // median over blocks: robust to bursts of interference from other load
        let mut blocks = Vec::new();
        let mut done = 0;
        while done < cfg.bench_sweeps {
            let n = BENCH_BLOCK.min(cfg.bench_sweeps - done);
            let start = Instant::now();
            for _ in 0..n {
                eq.sweep(&mut ())?;
            }
            blocks.push(start.elapsed().as_secs_f64() * 1000.0 / n as f64);
            done += n;
        }
        let per_1000 = if blocks.is_empty() { 0.0 } else { gpvar_core::stats::median(&blocks) };
        let newton = eq.diagnostics.mean_newton_iterations();
        let slice = eq.diagnostics.slice_evaluations as f64 / eq.diagnostics.slice_updates.max(1) as f64;
        w.write_record([k.to_string(), m.to_string(), p.to_string(), design.t_eff().to_string(), format!("{setup:e}"), format!("{per_1000:e}"), format!("{newton:e}"), format!("{slice:e}")])?;
        println!("K = {k:>4} ({m} variables x {p} lags): {per_1000:.2} s per 1000 draws (setup {setup:.2} s, {newton:.1} Newton iterations, {slice:.1} slice evaluations)");
        results.push(per_1000);
    }
    w.flush()?;
    let (lo, hi) = results.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    println!("max/min − 1 = {:.3}", hi / lo - 1.0);
    Ok(json!({ "k": cfg.bench_k, "sweeps": cfg.bench_sweeps, "t": cfg.bench_t }))
}
