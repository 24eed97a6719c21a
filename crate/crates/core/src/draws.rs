//! Retained posterior draws and their on-disk layout.
//!
//! A run directory holds `meta.json`, `panel.csv`, one binary file per
//! equation and quantity (`GPVD` magic, version, rows, cols, little-endian
//! row-major f64s), `quantiles.csv`, `timing.json` and `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::panel::{Period, TimePanel, TransformCode};
use crate::sampler::{EquationState, SamplerConfig};
use crate::stats;
use crate::sv::MhDiagnostics;

const DRAW_MAGIC: &[u8; 4] = b"GPVD";
const DRAW_VERSION: u32 = 1;
const FORMAT_VERSION: u32 = 1;

/// Dense row-major matrix with one row per retained draw.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DrawMatrix {
    pub fn new(cols: usize) -> Self {
        DrawMatrix { rows: 0, cols, data: Vec::new() }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid("draw matrix data does not fill whole rows"));
        }
        Ok(DrawMatrix { rows, cols, data })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.nrows()).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn amax(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Column-wise quantile.
    pub fn column_quantile(&self, p: f64) -> Vec<f64> {
        (0..self.cols).map(|c| stats::quantile(&self.column(c), p)).collect()
    }

    pub fn column_mean(&self) -> Vec<f64> {
        (0..self.cols).map(|c| stats::mean(&self.column(c))).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows(), self.cols, &self.data)
    }
}

/// Retained draws of one equation.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationDraws {
    pub f: DrawMatrix,
    pub g: DrawMatrix,
    /// `m = f + g`.
    pub m: DrawMatrix,
    pub h: DrawMatrix,
    pub q: DrawMatrix,
    pub intercept: Option<Vec<f64>>,
    pub grid_own: Vec<usize>,
    pub grid_other: Vec<usize>,
    pub rho: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub h0: Vec<f64>,
}

impl EquationDraws {
    pub fn with_capacity(t: usize, n_q: usize, n: usize, intercept: bool) -> Self {
        let mk = |c: usize| DrawMatrix { rows: 0, cols: c, data: Vec::with_capacity(c * n) };
        EquationDraws {
            f: mk(t),
            g: mk(t),
            m: mk(t),
            h: mk(t),
            q: mk(n_q),
            intercept: intercept.then(|| Vec::with_capacity(n)),
            grid_own: Vec::with_capacity(n),
            grid_other: Vec::with_capacity(n),
            rho: Vec::with_capacity(n),
            sigma2: Vec::with_capacity(n),
            h0: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, s: &EquationState) {
        self.f.push_row(&s.f);
        self.g.push_row(&s.g);
        self.m.push_row(&s.m());
        self.h.push_row(&s.sv.h);
        self.q.push_row(&s.q_row);
        if let Some(v) = self.intercept.as_mut() {
            v.push(s.intercept.unwrap_or(0.0));
        }
        self.grid_own.push(s.grid_own);
        self.grid_other.push(s.grid_other);
        self.rho.push(s.sv.rho);
        self.sigma2.push(s.sv.sigma2);
        self.h0.push(s.sv.h0);
    }

    pub fn n_draws(&self) -> usize {
        self.rho.len()
    }

    pub fn intercept_at(&self, d: usize) -> f64 {
        self.intercept.as_ref().map(|v| v[d]).unwrap_or(0.0)
    }
}

/// Per-equation sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationDiagnostics {
    pub mh: MhDiagnostics,
    pub g_projection_skips: u64,
    pub rho_step: f64,
    /// `None` for kernels without a length scale.
    pub kappa_bar_own: Option<f64>,
    /// `None` when the model has a single variable or no length scale.
    pub kappa_bar_other: Option<f64>,
    /// Wall-clock time; written to `timing.json`, not `meta.json`.
    #[serde(skip)]
    pub sampling_seconds: f64,
}

/// Retained draws for all equations plus everything needed to rebuild the design.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub config: SamplerConfig,
    pub panel: TimePanel,
    pub equations: Vec<EquationDraws>,
    pub diagnostics: Vec<EquationDiagnostics>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    config: SamplerConfig,
    variable_names: Vec<String>,
    transform_codes: Vec<TransformCode>,
    n_draws: usize,
    t_eff: usize,
    has_intercept: bool,
    diagnostics: Vec<EquationDiagnostics>,
}

fn write_draw_file(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(DRAW_MAGIC)?;
    w.write_all(&DRAW_VERSION.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_draw_file(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || Error::invalid(format!("{} is not a valid draw file", path.display()));
    if bytes.len() < 24 || &bytes[..4] != DRAW_MAGIC {
        return Err(bad());
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != DRAW_VERSION {
        return Err(bad());
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if body.len() != rows * cols * 8 {
        return Err(bad());
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((rows, cols, data))
}

fn scalar_file(path: &Path, v: &[f64]) -> Result<()> {
    write_draw_file(path, v.len(), 1, v)
}

/// SHA-256 of every regular file in `dir` except `manifest.json` and the excluded names.
pub fn write_manifest(dir: &Path, exclude: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().to_string();
        if name == "manifest.json" || exclude.contains(&name.as_str()) {
            continue;
        }
        let digest = Sha256::digest(fs::read(entry.path())?);
        files.insert(name, hex::encode(digest));
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&files)?)?;
    Ok(files)
}

/// SHA-256 of every file below `dir`, keyed by `/`-separated relative path,
/// skipping any file whose name is `manifest.json` or in `exclude`.
pub fn write_tree_manifest(dir: &Path, exclude: &[&str]) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, exclude: &[&str], out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let kind = entry.file_type()?;
            if kind.is_dir() {
                walk(root, &entry.path(), exclude, out)?;
                continue;
            }
            let name = entry.file_name().to_string_lossy().to_string();
            if !kind.is_file() || name == "manifest.json" || exclude.contains(&name.as_str()) {
                continue;
            }
            let rel = entry.path().strip_prefix(root).expect("walked below root").to_path_buf();
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, hex::encode(Sha256::digest(fs::read(entry.path())?)));
        }
        Ok(())
    }
    let mut files = BTreeMap::new();
    walk(dir, dir, exclude, &mut files)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&files)?)?;
    Ok(files)
}

/// Files never hashed into manifests because their content is wall-clock dependent.
pub const TIMING_FILE: &str = "timing.json";

impl PosteriorDraws {
    pub fn n_vars(&self) -> usize {
        self.equations.len()
    }

    pub fn n_draws(&self) -> usize {
        self.equations.first().map(|e| e.n_draws()).unwrap_or(0)
    }

    pub fn t_eff(&self) -> usize {
        self.equations.first().map(|e| e.f.ncols()).unwrap_or(0)
    }

    /// Dates of the response rows (the panel dates after the first `p`).
    pub fn response_dates(&self) -> &[Period] {
        &self.panel.dates[self.config.p..]
    }

    pub fn median_m(&self, j: usize) -> Vec<f64> {
        self.equations[j].m.column_quantile(0.5)
    }

    pub fn save(&self, dir: &Path) -> Result<BTreeMap<String, String>> {
        fs::create_dir_all(dir)?;
        let meta = Meta {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            variable_names: self.panel.variable_names.clone(),
            transform_codes: self.panel.transform_codes.clone(),
            n_draws: self.n_draws(),
            t_eff: self.t_eff(),
            has_intercept: self.equations.first().map(|e| e.intercept.is_some()).unwrap_or(false),
            diagnostics: self.diagnostics.clone(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        self.panel.write_csv(fs::File::create(dir.join("panel.csv"))?)?;
        for (j, e) in self.equations.iter().enumerate() {
            let p = |q: &str| dir.join(format!("eq{}_{q}.bin", j + 1));
            for (name, m) in [("f", &e.f), ("g", &e.g), ("m", &e.m), ("h", &e.h), ("q", &e.q)] {
                write_draw_file(&p(name), m.nrows(), m.ncols(), m.as_slice())?;
            }
            if let Some(c) = &e.intercept {
                scalar_file(&p("intercept"), c)?;
            }
            let own: Vec<f64> = e.grid_own.iter().map(|&i| i as f64).collect();
            let other: Vec<f64> = e.grid_other.iter().map(|&i| i as f64).collect();
            scalar_file(&p("grid_own"), &own)?;
            scalar_file(&p("grid_other"), &other)?;
            scalar_file(&p("rho"), &e.rho)?;
            scalar_file(&p("sigma2"), &e.sigma2)?;
            scalar_file(&p("h0"), &e.h0)?;
        }
        self.write_quantiles(fs::File::create(dir.join("quantiles.csv"))?)?;
        let timing: BTreeMap<String, f64> = self
            .diagnostics
            .iter()
            .enumerate()
            .map(|(j, d)| (format!("eq{}_sampling_seconds", j + 1), d.sampling_seconds))
            .collect();
        fs::write(dir.join(TIMING_FILE), serde_json::to_string_pretty(&timing)?)?;
        write_manifest(dir, &[TIMING_FILE])
    }

    /// Long-format posterior summaries of f, g, m and h.
    pub fn write_quantiles<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["equation", "quantity", "date", "q05", "q16", "q50", "q84", "q95", "mean"])?;
        let dates = self.response_dates();
        for (j, e) in self.equations.iter().enumerate() {
            for (name, m) in [("f", &e.f), ("g", &e.g), ("m", &e.m), ("h", &e.h)] {
                let qs: Vec<Vec<f64>> = [0.05, 0.16, 0.5, 0.84, 0.95].iter().map(|&p| m.column_quantile(p)).collect();
                let mean = m.column_mean();
                for t in 0..m.ncols() {
                    let mut rec = vec![self.panel.variable_names[j].clone(), name.to_string(), dates[t].to_string()];
                    rec.extend(qs.iter().map(|q| format!("{:e}", q[t])));
                    rec.push(format!("{:e}", mean[t]));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::invalid("unsupported draws format version"));
        }
        let panel = read_panel_csv(&fs::read(dir.join("panel.csv"))?, &meta.transform_codes)?;
        if panel.variable_names != meta.variable_names {
            return Err(Error::invalid("panel.csv does not match meta.json"));
        }
        let timing: BTreeMap<String, f64> = fs::read_to_string(dir.join(TIMING_FILE))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        let mut equations = Vec::with_capacity(panel.n_vars());
        let mut diagnostics = meta.diagnostics.clone();
        for j in 0..panel.n_vars() {
            let p = |q: &str| dir.join(format!("eq{}_{q}.bin", j + 1));
            let mat = |q: &str| -> Result<DrawMatrix> {
                let (r, c, data) = read_draw_file(&p(q))?;
                if r != meta.n_draws {
                    return Err(Error::invalid(format!("eq{}_{q}.bin has {r} rows, expected {}", j + 1, meta.n_draws)));
                }
                DrawMatrix::from_rows(r, c, data)
            };
            let vec = |q: &str| -> Result<Vec<f64>> { Ok(read_draw_file(&p(q))?.2) };
            let idx = |q: &str| -> Result<Vec<usize>> { Ok(vec(q)?.into_iter().map(|v| v as usize).collect()) };
            equations.push(EquationDraws {
                f: mat("f")?,
                g: mat("g")?,
                m: mat("m")?,
                h: mat("h")?,
                q: mat("q")?,
                intercept: if meta.has_intercept { Some(vec("intercept")?) } else { None },
                grid_own: idx("grid_own")?,
                grid_other: idx("grid_other")?,
                rho: vec("rho")?,
                sigma2: vec("sigma2")?,
                h0: vec("h0")?,
            });
            if let Some(d) = diagnostics.get_mut(j) {
                d.sampling_seconds = timing.get(&format!("eq{}_sampling_seconds", j + 1)).copied().unwrap_or(f64::NAN);
            }
        }
        Ok(PosteriorDraws { config: meta.config, panel, equations, diagnostics })
    }
}

/// Read a panel written by [`TimePanel::write_csv`].
pub fn read_panel_csv(bytes: &[u8], codes: &[TransformCode]) -> Result<TimePanel> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let names: Vec<String> = header[1..].to_vec();
    let mut dates = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        dates.push(rec[0].parse::<Period>()?);
        for (k, cell) in rec.iter().skip(1).enumerate() {
            data.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                row: i + 2,
                column: names[k].clone(),
                message: format!("`{cell}` is not a number"),
            })?);
        }
    }
    let values = DMatrix::from_row_slice(dates.len(), names.len(), &data);
    let codes = if codes.len() == names.len() { codes.to_vec() } else { vec![TransformCode::Level; names.len()] };
    TimePanel::new(values, names, dates, codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::estimate;
    use crate::stats::{std_normal, stream_rng};

    #[test]
    fn draw_matrix_rows() {
        let mut m = DrawMatrix::new(2);
        m.push_row(&[1.0, 2.0]);
        m.push_row(&[3.0, -4.0]);
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.column(1), vec![2.0, -4.0]);
        assert_eq!(m.amax(), 4.0);
        assert!(DrawMatrix::from_rows(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = stream_rng(4, 0);
        let values = DMatrix::from_fn(30, 2, |_, _| std_normal(&mut rng));
        let panel = TimePanel::from_levels(values, Period::new(1990, 2).unwrap()).unwrap().demeaned();
        let mut c = SamplerConfig::new(11);
        c.n_iter = 20;
        c.n_burn = 10;
        c.p = 1;
        c.grid.n_kappa = 3;
        c.grid.n_xi = 3;
        c.include_intercept = true;
        let d = estimate(&panel, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m1 = d.save(dir.path()).unwrap();
        assert!(!m1.contains_key(TIMING_FILE));
        let back = PosteriorDraws::load(dir.path()).unwrap();
        assert_eq!(back.equations, d.equations);
        assert_eq!(back.config, d.config);
        assert_eq!(back.panel, d.panel);
        let dir2 = tempfile::tempdir().unwrap();
        assert_eq!(back.save(dir2.path()).unwrap(), m1);
    }

    #[test]
    fn corrupt_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        fs::write(&p, b"GPVDxxxx").unwrap();
        assert!(read_draw_file(&p).is_err());
    }
}
