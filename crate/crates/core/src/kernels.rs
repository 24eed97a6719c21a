//! Covariance kernels and the precomputed hyperparameter grid.
//!
//! A grid stores, per κ level, the unit-scale kernel matrix `S(κ)` and its
//! eigendecomposition `S = U Λ Uᵀ`. Every per-point quantity for `K = ξ S`
//! (inverse of `K + I`, log-determinants, posterior factor, marginal
//! likelihood ordinates) follows from `(U, Λ, ξ)` in `O(T²)` without touching
//! the ~1000 dense matrices a naive cache would hold.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::LN_2PI;

/// Eigenvalues of `S` are floored at `max(λ, 0) + EIGEN_JITTER`.
pub const EIGEN_JITTER: f64 = 1e-10;

const LN_GAMMA_HALF: f64 = 0.572_364_942_924_700_1; // ½ ln π

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    SquaredExponential,
    LinearPersistence,
    Linear,
}

impl KernelKind {
    pub fn code(self) -> u32 {
        match self {
            KernelKind::SquaredExponential => 0,
            KernelKind::LinearPersistence => 1,
            KernelKind::Linear => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(KernelKind::SquaredExponential),
            1 => Ok(KernelKind::LinearPersistence),
            2 => Ok(KernelKind::Linear),
            _ => Err(Error::invalid(format!("unknown kernel code {c}"))),
        }
    }

    /// Whether the kernel has an inverse length scale.
    pub fn has_kappa(self) -> bool {
        self == KernelKind::SquaredExponential
    }
}

/// A fully specified kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// ξ for the squared-exponential and linear kernels.
    pub xi: f64,
    pub kappa: f64,
    /// Jump-size variance of the persistence kernel.
    pub r: f64,
    /// Squared-exponential: diagonal of `D`. Linear: diagonal of the prior covariance `V`.
    pub column_scales: Vec<f64>,
}

impl KernelSpec {
    pub fn squared_exponential(xi: f64, kappa: f64, column_scales: Vec<f64>) -> Result<Self> {
        let s = KernelSpec { kind: KernelKind::SquaredExponential, xi, kappa, r: 0.0, column_scales };
        s.validate()?;
        Ok(s)
    }

    pub fn linear(xi: f64, prior_cov_diag: Vec<f64>) -> Result<Self> {
        let s = KernelSpec { kind: KernelKind::Linear, xi, kappa: 0.0, r: 0.0, column_scales: prior_cov_diag };
        s.validate()?;
        Ok(s)
    }

    pub fn persistence(r: f64) -> Result<Self> {
        let s = KernelSpec { kind: KernelKind::LinearPersistence, xi: 1.0, kappa: 0.0, r, column_scales: vec![] };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::SquaredExponential => {
                if !(self.xi > 0.0) || !(self.kappa > 0.0) {
                    return Err(Error::invalid("squared-exponential kernel needs xi > 0 and kappa > 0"));
                }
            }
            KernelKind::Linear => {
                if !(self.xi > 0.0) {
                    return Err(Error::invalid("linear kernel needs xi > 0"));
                }
            }
            KernelKind::LinearPersistence => {
                if !(self.r >= 0.0) {
                    return Err(Error::invalid("persistence kernel needs r >= 0"));
                }
            }
        }
        if self.column_scales.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid("column scales must be positive and finite"));
        }
        Ok(())
    }
}

/// Evaluate `k(u, v)`.
///
/// The persistence kernel is defined on time positions, not regressors; it is
/// only available through [`build_kernel_matrix`].
pub fn kernel_entry(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() != spec.column_scales.len() {
        return Err(Error::invalid(format!(
            "kernel inputs of length {} and {} against {} column scales",
            u.len(),
            v.len(),
            spec.column_scales.len()
        )));
    }
    match spec.kind {
        KernelKind::SquaredExponential => Ok(spec.xi * unit_se(spec.kappa, &spec.column_scales, u, v)),
        KernelKind::Linear => Ok(spec.xi * unit_linear(&spec.column_scales, u, v)),
        KernelKind::LinearPersistence => {
            Err(Error::invalid("persistence kernel has no pointwise regressor form"))
        }
    }
}

fn unit_se(kappa: f64, scales: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let mut d2 = 0.0;
    for i in 0..u.len() {
        let d = u[i] - v[i];
        d2 += d * d / scales[i];
    }
    (-0.5 * kappa * d2).exp()
}

fn unit_linear(prior: &[f64], u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).zip(prior).map(|((a, b), w)| a * b * w).sum()
}

fn row_vec(rows: &DMatrix<f64>, t: usize) -> Vec<f64> {
    rows.row(t).iter().cloned().collect()
}

/// Full `T × T` kernel matrix over the rows of a regressor matrix.
///
/// For the persistence kernel only the row count matters: `r B Bᵀ` with `B`
/// the all-ones lower triangle, i.e. entry `(s, t)` is `r·min(s, t)` (1-based).
pub fn build_kernel_matrix(spec: &KernelSpec, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let t = rows.nrows();
    if t == 0 {
        return Err(Error::invalid("kernel matrix over zero rows"));
    }
    if spec.kind == KernelKind::LinearPersistence {
        return Ok(DMatrix::from_fn(t, t, |a, b| spec.r * (a.min(b) + 1) as f64));
    }
    if rows.ncols() != spec.column_scales.len() {
        return Err(Error::invalid(format!(
            "regressor matrix has {} columns, kernel expects {}",
            rows.ncols(),
            spec.column_scales.len()
        )));
    }
    let r: Vec<Vec<f64>> = (0..t).map(|i| row_vec(rows, i)).collect();
    let mut k = DMatrix::zeros(t, t);
    for a in 0..t {
        for b in 0..=a {
            let v = kernel_entry(spec, &r[a], &r[b])?;
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

/// Median over distinct row pairs of the inverse Euclidean distance.
pub fn median_heuristic(rows: &DMatrix<f64>) -> Result<f64> {
    let t = rows.nrows();
    let r: Vec<Vec<f64>> = (0..t).map(|i| row_vec(rows, i)).collect();
    let mut inv = Vec::with_capacity(t * t.saturating_sub(1) / 2);
    for a in 0..t {
        for b in (a + 1)..t {
            let d = r[a].iter().zip(&r[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if d > 0.0 {
                inv.push(1.0 / d);
            }
        }
    }
    if inv.is_empty() {
        return Err(Error::invalid("median heuristic needs at least two distinct rows"));
    }
    Ok(crate::stats::median(&inv))
}

/// Log density of Gamma(½, rate 1/(2c)); its mean is `c`.
pub fn half_gamma_log_density(x: f64, c: f64) -> f64 {
    let rate = 1.0 / (2.0 * c);
    0.5 * rate.ln() - LN_GAMMA_HALF - 0.5 * x.ln() - rate * x
}

/// Grid layout and hyperprior tightness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_kappa: usize,
    pub n_xi: usize,
    pub c_kappa: f64,
    pub c_xi: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    /// κ range as multiples of the median heuristic.
    pub kappa_lower: f64,
    pub kappa_upper: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_kappa: 40,
            n_xi: 25,
            c_kappa: 0.1,
            c_xi: 1.0,
            xi_min: 0.04,
            xi_max: 4.0,
            kappa_lower: 0.1,
            kappa_upper: 2.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_kappa == 0 || self.n_xi == 0 {
            return Err(Error::invalid("grid sizes must be positive"));
        }
        if !(self.c_kappa > 0.0) || !(self.c_xi > 0.0) {
            return Err(Error::invalid("hyperprior tightness must be positive"));
        }
        if !(self.xi_min > 0.0) || !(self.xi_max >= self.xi_min) {
            return Err(Error::invalid("xi range must satisfy 0 < min <= max"));
        }
        if !(self.kappa_lower > 0.0) || !(self.kappa_upper >= self.kappa_lower) {
            return Err(Error::invalid("kappa range must satisfy 0 < lower <= upper"));
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Unit-scale kernel `S(κ)` with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct SpectralLevel {
    pub kappa: f64,
    pub s: DMatrix<f64>,
    pub u: DMatrix<f64>,
    /// Floored eigenvalues.
    pub lambda: DVector<f64>,
    pub logdet_s: f64,
}

impl SpectralLevel {
    fn new(kappa: f64, s: DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::try_new(s.clone(), 1e-14, 0)
            .ok_or_else(|| Error::numerical(format!("eigendecomposition failed at kappa = {kappa}")))?;
        let lambda = eig.eigenvalues.map(|l| l.max(0.0) + EIGEN_JITTER);
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::numerical(format!("non-finite eigenvalue at kappa = {kappa}")));
        }
        let logdet_s = lambda.iter().map(|l| l.ln()).sum();
        Ok(SpectralLevel { kappa, s, u: eig.eigenvectors, lambda, logdet_s })
    }

    fn project(&self, v: &[f64]) -> DVector<f64> {
        self.u.tr_mul(&DVector::from_column_slice(v))
    }

    fn expand(&self, w: &DVector<f64>) -> Vec<f64> {
        (&self.u * w).as_slice().to_vec()
    }
}

/// Hyperparameter grid for one kernel component of one equation.
#[derive(Debug, Clone)]
pub struct KernelGrid {
    pub kind: KernelKind,
    pub config: GridConfig,
    pub kappa_bar: f64,
    pub kappas: Vec<f64>,
    pub xis: Vec<f64>,
    pub column_scales: Vec<f64>,
    /// Training regressors (rows) the kernel was built on.
    pub rows: DMatrix<f64>,
    /// Linear kernel only: column means of `rows`. The kernel acts on deviations
    /// from them, so `K ι = 0` and the grand-mean restriction on `g` costs no
    /// regression direction. Empty for the other kinds.
    pub center: Vec<f64>,
    pub levels: Vec<SpectralLevel>,
    /// Gamma-prior log density per flat grid index.
    pub log_prior: Vec<f64>,
}

/// Row-major flattening `i_kappa · n_xi + i_xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    pub i_kappa: usize,
    pub i_xi: usize,
}

impl KernelGrid {
    pub fn n_points(&self) -> usize {
        self.kappas.len() * self.xis.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.nrows()
    }

    pub fn point(&self, idx: usize) -> GridPoint {
        GridPoint { i_kappa: idx / self.xis.len(), i_xi: idx % self.xis.len() }
    }

    pub fn index(&self, i_kappa: usize, i_xi: usize) -> usize {
        i_kappa * self.xis.len() + i_xi
    }

    /// (κ, ξ) at a flat index; κ is NaN for kernels without a length scale.
    pub fn params(&self, idx: usize) -> (f64, f64) {
        let p = self.point(idx);
        (self.kappas[p.i_kappa], self.xis[p.i_xi])
    }

    fn level(&self, idx: usize) -> (&SpectralLevel, f64) {
        let p = self.point(idx);
        (&self.levels[p.i_kappa], self.xis[p.i_xi])
    }

    /// Index closest to the grid centre, used to initialize the sampler.
    pub fn center_index(&self) -> usize {
        self.index(self.kappas.len() / 2, self.xis.len() / 2)
    }

    pub fn spec(&self, idx: usize) -> KernelSpec {
        let (kappa, xi) = self.params(idx);
        match self.kind {
            KernelKind::SquaredExponential => KernelSpec {
                kind: self.kind,
                xi,
                kappa,
                r: 0.0,
                column_scales: self.column_scales.clone(),
            },
            KernelKind::Linear => KernelSpec {
                kind: self.kind,
                xi,
                kappa: 0.0,
                r: 0.0,
                column_scales: self.column_scales.clone(),
            },
            KernelKind::LinearPersistence => KernelSpec {
                kind: self.kind,
                xi: 1.0,
                kappa: 0.0,
                r: xi,
                column_scales: vec![],
            },
        }
    }

    /// `K = ξ S(κ)`.
    pub fn kernel_matrix(&self, idx: usize) -> DMatrix<f64> {
        let (lvl, xi) = self.level(idx);
        &lvl.s * xi
    }

    fn spectral(&self, idx: usize, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let (lvl, xi) = self.level(idx);
        let d = lvl.lambda.map(|l| f(xi * l));
        let scaled = DMatrix::from_fn(lvl.u.nrows(), lvl.u.ncols(), |r, c| lvl.u[(r, c)] * d[c]);
        scaled * lvl.u.transpose()
    }

    /// `(K + I)⁻¹`.
    pub fn inv_k_plus_i(&self, idx: usize) -> DMatrix<f64> {
        self.spectral(idx, |v| 1.0 / (v + 1.0))
    }

    /// `K⁻¹` of the floored spectrum.
    pub fn inv_k(&self, idx: usize) -> DMatrix<f64> {
        self.spectral(idx, |v| 1.0 / v)
    }

    /// `K (K + I)⁻¹`.
    pub fn smoother(&self, idx: usize) -> DMatrix<f64> {
        self.spectral(idx, |v| v / (v + 1.0))
    }

    pub fn chol_k_plus_i(&self, idx: usize) -> Result<Cholesky<f64, Dyn>> {
        let mut a = self.kernel_matrix(idx);
        for i in 0..a.nrows() {
            a[(i, i)] += 1.0;
        }
        linalg::cholesky_jittered(&a)
            .map(|(c, _)| c)
            .map_err(|e| Error::numerical(format!("grid point {idx}: {e}")))
    }

    pub fn logdet_k(&self, idx: usize) -> f64 {
        let (lvl, xi) = self.level(idx);
        lvl.lambda.len() as f64 * xi.ln() + lvl.logdet_s
    }

    pub fn logdet_k_plus_i(&self, idx: usize) -> f64 {
        let (lvl, xi) = self.level(idx);
        lvl.lambda.iter().map(|l| (xi * l).ln_1p()).sum()
    }

    /// `B_f` with `B_f B_fᵀ = K − K (K + I)⁻¹ K`. Not triangular: `U diag(√(ξλ/(ξλ+1)))`.
    pub fn posterior_factor(&self, idx: usize) -> DMatrix<f64> {
        let (lvl, xi) = self.level(idx);
        let d = lvl.lambda.map(|l| (xi * l / (xi * l + 1.0)).sqrt());
        DMatrix::from_fn(lvl.u.nrows(), lvl.u.ncols(), |r, c| lvl.u[(r, c)] * d[c])
    }

    /// `K (K + I)⁻¹ v`.
    pub fn apply_smoother(&self, idx: usize, v: &[f64]) -> Vec<f64> {
        let (lvl, xi) = self.level(idx);
        let mut w = lvl.project(v);
        for (wi, l) in w.iter_mut().zip(lvl.lambda.iter()) {
            *wi *= xi * l / (xi * l + 1.0);
        }
        lvl.expand(&w)
    }

    /// `B_f z`.
    pub fn apply_posterior_factor(&self, idx: usize, z: &[f64]) -> Vec<f64> {
        let (lvl, xi) = self.level(idx);
        let w = DVector::from_iterator(
            z.len(),
            z.iter().zip(lvl.lambda.iter()).map(|(zi, l)| zi * (xi * l / (xi * l + 1.0)).sqrt()),
        );
        lvl.expand(&w)
    }

    /// `log N(latent; 0, √Ω K √Ω)` at every grid point (no prior).
    pub fn log_likelihood_ordinates(&self, latent: &[f64], sqrt_omega: &[f64]) -> Vec<f64> {
        let t = latent.len() as f64;
        let sum_h: f64 = sqrt_omega.iter().map(|s| 2.0 * s.ln()).sum();
        let scaled: Vec<f64> = latent.iter().zip(sqrt_omega).map(|(f, s)| f / s).collect();
        let mut out = Vec::with_capacity(self.n_points());
        for lvl in &self.levels {
            let w = lvl.project(&scaled);
            let q: f64 = w.iter().zip(lvl.lambda.iter()).map(|(wi, l)| wi * wi / l).sum();
            for &xi in &self.xis {
                let v = -0.5 * t * LN_2PI - 0.5 * (t * xi.ln() + lvl.logdet_s + sum_h) - q / (2.0 * xi);
                out.push(if v.is_nan() { f64::NEG_INFINITY } else { v });
            }
        }
        out
    }

    /// Cross-covariances `K(x*, rows)` and `k(x*, x*)` at grid point `idx`.
    ///
    /// For the persistence kernel `x_star` is ignored and the new point sits at
    /// 1-based time `position` (`dim() + 1` for a one-step forecast).
    pub fn cross_covariance(&self, idx: usize, x_star: &[f64], position: usize) -> (Vec<f64>, f64) {
        let mut k = vec![0.0; self.dim()];
        let kss = self.cross_covariance_into(idx, x_star, position, &mut k);
        (k, kss)
    }

    /// Allocation-free form of [`KernelGrid::cross_covariance`]; returns `k(x*, x*)`.
    pub fn cross_covariance_into(&self, idx: usize, x_star: &[f64], position: usize, out: &mut [f64]) -> f64 {
        let (kappa, xi) = self.params(idx);
        let t = self.dim();
        debug_assert_eq!(out.len(), t);
        let d = self.rows.ncols();
        match self.kind {
            KernelKind::SquaredExponential => {
                out.fill(0.0);
                for c in 0..d {
                    let (x, w) = (x_star[c], 1.0 / self.column_scales[c]);
                    for (o, v) in out.iter_mut().zip(self.rows.column(c).iter()) {
                        let diff = x - v;
                        *o += diff * diff * w;
                    }
                }
                for o in out.iter_mut() {
                    *o = xi * (-0.5 * kappa * *o).exp();
                }
                xi
            }
            KernelKind::Linear => {
                out.fill(0.0);
                let dev: Vec<f64> = x_star.iter().zip(&self.center).map(|(x, c)| x - c).collect();
                for c in 0..d {
                    let (x, mu) = (dev[c] * self.column_scales[c], self.center[c]);
                    for (o, v) in out.iter_mut().zip(self.rows.column(c).iter()) {
                        *o += x * (v - mu);
                    }
                }
                for o in out.iter_mut() {
                    *o *= xi;
                }
                xi * unit_linear(&self.column_scales, &dev, &dev)
            }
            KernelKind::LinearPersistence => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = xi * (r + 1).min(position) as f64;
                }
                xi * position as f64
            }
        }
    }

    /// Content hash over the inputs that determine the grid.
    pub fn content_hash(kind: KernelKind, rows: &DMatrix<f64>, column_scales: &[f64], config: &GridConfig) -> String {
        let mut h = Sha256::new();
        h.update(b"gpvar-grid-v2");
        h.update(kind.code().to_le_bytes());
        h.update((rows.nrows() as u64).to_le_bytes());
        h.update((rows.ncols() as u64).to_le_bytes());
        for t in 0..rows.nrows() {
            for c in 0..rows.ncols() {
                h.update(rows[(t, c)].to_le_bytes());
            }
        }
        for s in column_scales {
            h.update(s.to_le_bytes());
        }
        for v in [
            config.n_kappa as f64,
            config.n_xi as f64,
            config.c_kappa,
            config.c_xi,
            config.xi_min,
            config.xi_max,
            config.kappa_lower,
            config.kappa_upper,
        ] {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Build a grid over regressor `rows`.
///
/// `column_scales` are the diagonal of `D` for the squared-exponential kernel
/// and of the prior covariance for the linear kernel; the persistence kernel
/// ignores them. `kappa_bar` is only used by the squared-exponential kernel.
pub fn build_grid(
    kind: KernelKind,
    rows: &DMatrix<f64>,
    column_scales: &[f64],
    kappa_bar: f64,
    config: &GridConfig,
) -> Result<KernelGrid> {
    config.validate()?;
    if rows.nrows() == 0 {
        return Err(Error::invalid("grid over zero rows"));
    }
    let kappas = if kind.has_kappa() {
        if !(kappa_bar > 0.0) || !kappa_bar.is_finite() {
            return Err(Error::invalid(format!("median heuristic {kappa_bar} must be positive")));
        }
        linspace(config.kappa_lower * kappa_bar, config.kappa_upper * kappa_bar, config.n_kappa)
    } else {
        vec![f64::NAN]
    };
    let xis = linspace(config.xi_min, config.xi_max, config.n_xi);
    let center = linear_center(kind, rows);
    let centered = if center.is_empty() {
        rows.clone()
    } else {
        DMatrix::from_fn(rows.nrows(), rows.ncols(), |r, c| rows[(r, c)] - center[c])
    };
    let unit = |kappa: f64| -> Result<DMatrix<f64>> {
        let spec = match kind {
            KernelKind::SquaredExponential => KernelSpec::squared_exponential(1.0, kappa, column_scales.to_vec())?,
            KernelKind::Linear => KernelSpec::linear(1.0, column_scales.to_vec())?,
            KernelKind::LinearPersistence => KernelSpec::persistence(1.0)?,
        };
        build_kernel_matrix(&spec, &centered)
    };
    let levels: Vec<SpectralLevel> = kappas
        .par_iter()
        .map(|&kappa| SpectralLevel::new(kappa, unit(kappa)?))
        .collect::<Result<_>>()?;
    let mut log_prior = Vec::with_capacity(kappas.len() * xis.len());
    for &kappa in &kappas {
        let lk = if kind.has_kappa() { half_gamma_log_density(kappa, config.c_kappa) } else { 0.0 };
        for &xi in &xis {
            log_prior.push(lk + half_gamma_log_density(xi, config.c_xi));
        }
    }
    Ok(KernelGrid {
        kind,
        config: *config,
        kappa_bar: if kind.has_kappa() { kappa_bar } else { f64::NAN },
        kappas,
        xis,
        column_scales: column_scales.to_vec(),
        rows: rows.clone(),
        center,
        levels,
        log_prior,
    })
}

fn linear_center(kind: KernelKind, rows: &DMatrix<f64>) -> Vec<f64> {
    if kind != KernelKind::Linear {
        return Vec::new();
    }
    (0..rows.ncols()).map(|c| rows.column(c).mean()).collect()
}

const GRID_MAGIC: &[u8; 4] = b"GPVK";
const GRID_VERSION: u32 = 2;

fn put_f64s<W: Write>(w: &mut W, xs: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

impl KernelGrid {
    /// Serialize the spectral levels: versioned header then row-major f64s.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let t = self.dim();
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&self.kind.code().to_le_bytes())?;
        for n in [t, self.rows.ncols(), self.kappas.len(), self.xis.len()] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        let c = &self.config;
        put_f64s(&mut w, [c.c_kappa, c.c_xi, c.xi_min, c.xi_max, c.kappa_lower, c.kappa_upper, self.kappa_bar])?;
        put_f64s(&mut w, self.column_scales.iter().cloned())?;
        put_f64s(&mut w, (0..t).flat_map(|r| (0..self.rows.ncols()).map(move |c| (r, c))).map(|(r, c)| self.rows[(r, c)]))?;
        for lvl in &self.levels {
            put_f64s(&mut w, [lvl.kappa])?;
            put_f64s(&mut w, lvl.lambda.iter().cloned())?;
            for m in [&lvl.u, &lvl.s] {
                put_f64s(&mut w, (0..t).flat_map(|r| (0..t).map(move |c| (r, c))).map(|(r, c)| m[(r, c)]))?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::invalid("not a kernel grid file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != GRID_VERSION {
            return Err(Error::invalid("unsupported kernel grid version"));
        }
        r.read_exact(&mut b4)?;
        let kind = KernelKind::from_code(u32::from_le_bytes(b4))?;
        let t = get_u64(&mut r)? as usize;
        let k = get_u64(&mut r)? as usize;
        let n_kappa = get_u64(&mut r)? as usize;
        let n_xi = get_u64(&mut r)? as usize;
        let h = get_f64s(&mut r, 7)?;
        let config = GridConfig {
            n_kappa: if kind.has_kappa() { n_kappa } else { 1 },
            n_xi,
            c_kappa: h[0],
            c_xi: h[1],
            xi_min: h[2],
            xi_max: h[3],
            kappa_lower: h[4],
            kappa_upper: h[5],
        };
        let column_scales = get_f64s(&mut r, if kind == KernelKind::LinearPersistence { 0 } else { k })?;
        let rows = DMatrix::from_row_slice(t, k, &get_f64s(&mut r, t * k)?);
        let center = linear_center(kind, &rows);
        let mut levels = Vec::with_capacity(n_kappa);
        let mut kappas = Vec::with_capacity(n_kappa);
        for _ in 0..n_kappa {
            let kappa = get_f64s(&mut r, 1)?[0];
            let lambda = DVector::from_vec(get_f64s(&mut r, t)?);
            let u = DMatrix::from_row_slice(t, t, &get_f64s(&mut r, t * t)?);
            let s = DMatrix::from_row_slice(t, t, &get_f64s(&mut r, t * t)?);
            let logdet_s = lambda.iter().map(|l| l.ln()).sum();
            kappas.push(kappa);
            levels.push(SpectralLevel { kappa, s, u, lambda, logdet_s });
        }
        let xis = linspace(config.xi_min, config.xi_max, n_xi);
        let mut log_prior = Vec::with_capacity(n_kappa * n_xi);
        for &kappa in &kappas {
            let lk = if kind.has_kappa() { half_gamma_log_density(kappa, config.c_kappa) } else { 0.0 };
            for &xi in &xis {
                log_prior.push(lk + half_gamma_log_density(xi, config.c_xi));
            }
        }
        Ok(KernelGrid {
            kind,
            config,
            kappa_bar: h[6],
            kappas,
            xis,
            column_scales,
            rows,
            center,
            levels,
            log_prior,
        })
    }
}

/// [`build_grid`] backed by an on-disk cache keyed by [`KernelGrid::content_hash`].
pub fn build_grid_cached(
    kind: KernelKind,
    rows: &DMatrix<f64>,
    column_scales: &[f64],
    kappa_bar: f64,
    config: &GridConfig,
    cache_dir: &Path,
) -> Result<KernelGrid> {
    let key = KernelGrid::content_hash(kind, rows, column_scales, config);
    let path: PathBuf = cache_dir.join(format!("{key}.gpvk"));
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(grid) = KernelGrid::read_binary(bytes.as_slice()) {
            return Ok(grid);
        }
    }
    let grid = build_grid(kind, rows, column_scales, kappa_bar, config)?;
    fs::create_dir_all(cache_dir)?;
    let mut buf = Vec::new();
    grid.write_binary(&mut buf)?;
    let tmp = cache_dir.join(format!("{key}.tmp"));
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, &path)?;
    Ok(grid)
}
