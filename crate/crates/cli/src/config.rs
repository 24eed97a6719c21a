//! Run configuration: a flat TOML document plus `--key value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use gpvar_core::kernels::{GridConfig, KernelKind};
use gpvar_core::sampler::{SamplerConfig, VolatilityMode};
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

/// Every key accepted in a config file or as a `--key value` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory. Not echoed, so two runs into different directories
    /// produce identical manifests.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transforms: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<PathBuf>,
    /// Divide each demeaned series by its standard deviation. Defaults to on
    /// for `verify`, off elsewhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,

    pub lags: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub intercept: bool,
    pub own_kernel: String,
    pub other_kernel: String,
    pub volatility: String,
    pub n_kappa: usize,
    pub n_xi: usize,
    pub c_kappa: f64,
    pub c_xi: f64,

    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_draws: Option<usize>,

    /// Variable name or 1-based position.
    pub shock_variable: String,
    pub shock_size: f64,
    pub n_rep: usize,
    pub max_paths: usize,
    /// `all`, or `START:END` with quarterly dates such as `1970Q1:1984Q4`.
    pub origins: String,
    pub origin_stride: usize,
    pub per_origin: bool,
    pub asymmetry: bool,
    /// `NAME=START:END` entries.
    #[serde(deserialize_with = "string_list")]
    pub subperiods: Vec<String>,
    pub n_orderings: usize,

    /// `KERNEL-VOLATILITY` names, e.g. `se-sv`, `linear-hom`.
    #[serde(deserialize_with = "string_list")]
    pub models: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    pub first_origin: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_origin: Option<usize>,

    pub t_obs: usize,
    pub replications: usize,

    #[serde(deserialize_with = "usize_list")]
    pub bench_k: Vec<usize>,
    pub bench_sweeps: usize,
    pub bench_t: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplerConfig::new(0);
        RunConfig {
            seed: None,
            out: PathBuf::from("gpvar-out"),
            data: None,
            transforms: None,
            draws: None,
            standardize: None,
            lags: s.p,
            n_iter: s.n_iter,
            n_burn: s.n_burn,
            thin: s.thin,
            intercept: s.include_intercept,
            own_kernel: "se".into(),
            other_kernel: "se".into(),
            volatility: "stochastic".into(),
            n_kappa: s.grid.n_kappa,
            n_xi: s.grid.n_xi,
            c_kappa: s.grid.c_kappa,
            c_xi: s.grid.c_xi,
            horizon: 8,
            max_draws: None,
            shock_variable: "1".into(),
            shock_size: 1.0,
            n_rep: 200,
            max_paths: 10_000_000,
            origins: "all".into(),
            origin_stride: 1,
            per_origin: false,
            asymmetry: false,
            subperiods: Vec::new(),
            n_orderings: 1,
            models: vec!["se-sv".into(), "se-hom".into()],
            benchmark: None,
            first_origin: 40,
            last_origin: None,
            t_obs: 200,
            replications: 10,
            bench_k: vec![15, 60, 150, 320],
            bench_sweeps: 1000,
            bench_t: 200,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    Many(Vec<T>),
    Csv(String),
}

fn string_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    Ok(match OneOrMany::<String>::deserialize(d)? {
        OneOrMany::Many(v) => v,
        OneOrMany::Csv(s) => s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
    })
}

fn usize_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
    match OneOrMany::<usize>::deserialize(d)? {
        OneOrMany::Many(v) => Ok(v),
        OneOrMany::Csv(s) => s
            .split(',')
            .map(|x| x.trim().parse::<usize>().map_err(serde::de::Error::custom))
            .collect(),
    }
}

pub fn parse_kernel(name: &str) -> Result<KernelKind, CliError> {
    match name {
        "se" | "squared-exponential" => Ok(KernelKind::SquaredExponential),
        "linear" => Ok(KernelKind::Linear),
        "persistence" => Ok(KernelKind::LinearPersistence),
        other => Err(CliError::Config(format!("unknown kernel `{other}` (expected se, linear or persistence)"))),
    }
}

pub fn parse_volatility(name: &str) -> Result<VolatilityMode, CliError> {
    match name {
        "stochastic" | "sv" => Ok(VolatilityMode::Stochastic),
        "homoskedastic" | "hom" => Ok(VolatilityMode::Homoskedastic),
        "off" => Ok(VolatilityMode::Off),
        other => Err(CliError::Config(format!(
            "unknown volatility `{other}` (expected stochastic, homoskedastic or off)"
        ))),
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.seed.expect("validated at parse time")
    }

    pub fn sampler(&self) -> Result<SamplerConfig, CliError> {
        let mut c = SamplerConfig::new(self.seed());
        c.p = self.lags;
        c.n_iter = self.n_iter;
        c.n_burn = self.n_burn;
        c.thin = self.thin;
        c.include_intercept = self.intercept;
        c.own_kernel = parse_kernel(&self.own_kernel)?;
        c.other_kernel = parse_kernel(&self.other_kernel)?;
        c.volatility = parse_volatility(&self.volatility)?;
        c.grid = GridConfig { n_kappa: self.n_kappa, n_xi: self.n_xi, c_kappa: self.c_kappa, c_xi: self.c_xi, ..c.grid };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    /// Sampler settings of a backtest model named `KERNEL-VOLATILITY`.
    pub fn model(&self, name: &str) -> Result<SamplerConfig, CliError> {
        let (kernel, vol) = name
            .rsplit_once('-')
            .ok_or_else(|| CliError::Config(format!("model `{name}` is not of the form KERNEL-VOLATILITY")))?;
        let mut c = self.sampler()?;
        c.volatility = parse_volatility(vol)?;
        match parse_kernel(kernel)? {
            KernelKind::LinearPersistence => {
                c.own_kernel = KernelKind::LinearPersistence;
                c.other_kernel = KernelKind::SquaredExponential;
            }
            k => {
                c.own_kernel = k;
                c.other_kernel = k;
            }
        }
        Ok(c)
    }

    /// Effective configuration as a re-runnable TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml())
    }
}

/// Interpret a flag value as a TOML literal, falling back to a bare string.
fn flag_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed table has the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Merge `--key value` pairs into `table`. A flag followed by another flag
/// (or nothing) is a boolean switch.
pub fn apply_overrides(table: &mut toml::Table, args: &[String]) -> Result<(), CliError> {
    let mut i = 0;
    while i < args.len() {
        let Some(key) = args[i].strip_prefix("--") else {
            return Err(CliError::Config(format!("expected `--key value`, got `{}`", args[i])));
        };
        let (key, inline) = match key.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (key, None),
        };
        let key = key.replace('-', "_");
        let value = match inline {
            Some(v) => {
                i += 1;
                flag_value(&v)
            }
            None if i + 1 < args.len() && !args[i + 1].starts_with("--") => {
                i += 2;
                flag_value(&args[i - 1])
            }
            None => {
                i += 1;
                toml::Value::Boolean(true)
            }
        };
        table.insert(key, value);
    }
    Ok(())
}

/// Read the optional config file, apply flag overrides and validate.
pub fn parse_config(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    apply_overrides(&mut table, overrides)?;
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    if cfg.seed.is_none() {
        return Err(CliError::Config("`seed` is required (set it in the config file or pass --seed N)".into()));
    }
    for (key, path) in [("data", &cfg.data), ("transforms", &cfg.transforms), ("draws", &cfg.draws)] {
        if let Some(p) = path {
            if !p.exists() {
                return Err(CliError::Config(format!("{key} path {} does not exist", p.display())));
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn missing_seed_is_rejected() {
        assert!(matches!(parse_config(None, &[]), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 4\nlags = 2\n").unwrap();
        let cfg = parse_config(Some(&path), &args(&["--lags", "5"])).unwrap();
        assert_eq!(cfg.lags, 5);
        assert_eq!(cfg.seed, Some(4));
    }

    #[test]
    fn unknown_keys_list_valid_ones() {
        let Err(CliError::Config(msg)) = parse_config(None, &args(&["--seed", "1", "--lagz", "3"])) else {
            panic!("unknown key accepted");
        };
        assert!(msg.contains("lagz") && msg.contains("lags"), "{msg}");
    }

    #[test]
    fn type_mismatch_is_rejected() {
        assert!(matches!(parse_config(None, &args(&["--seed", "1", "--lags", "five"])), Err(CliError::Config(_))));
    }

    #[test]
    fn defaults_match_the_baseline() {
        let cfg = parse_config(None, &args(&["--seed", "1"])).unwrap();
        let s = cfg.sampler().unwrap();
        assert_eq!(s.p, 5);
        assert_eq!(s.grid.n_kappa * s.grid.n_xi, 1000);
    }

    #[test]
    fn switches_and_lists() {
        let cfg = parse_config(
            None,
            &args(&["--seed", "1", "--asymmetry", "--models", "se-sv,linear-hom", "--bench-k=15,60"]),
        )
        .unwrap();
        assert!(cfg.asymmetry);
        assert_eq!(cfg.models, vec!["se-sv", "linear-hom"]);
        assert_eq!(cfg.bench_k, vec![15, 60]);
    }

    #[test]
    fn echoed_config_round_trips() {
        let cfg = parse_config(None, &args(&["--seed", "9", "--horizon", "4", "--c-kappa", "0.2"])).unwrap();
        let t: toml::Table = cfg.to_toml().parse().unwrap();
        let back: RunConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.horizon, 4);
        assert_eq!(back.c_kappa, 0.2);
        assert_eq!(back.seed, Some(9));
    }

    #[test]
    fn backtest_model_names() {
        let cfg = parse_config(None, &args(&["--seed", "1"])).unwrap();
        let m = cfg.model("linear-hom").unwrap();
        assert_eq!(m.own_kernel, KernelKind::Linear);
        assert_eq!(m.volatility, VolatilityMode::Homoskedastic);
        assert!(cfg.model("linear").is_err());
        assert!(cfg.model("rbf-sv").is_err());
    }
}
