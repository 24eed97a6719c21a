//! Single-function GP algebra under the conjugate `√Ω K √Ω` prior scaling.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::KernelGrid;
use crate::linalg;

/// Gaussian conditional posterior of a latent function.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub mean: DVector<f64>,
    /// `C_f` with `C_f C_fᵀ` the posterior covariance.
    pub cov_factor: DMatrix<f64>,
    pub grid_index: Option<usize>,
}

impl GpPosterior {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }
}

fn check_scale(sqrt_omega: &[f64], n: usize) -> Result<()> {
    if sqrt_omega.len() != n {
        return Err(Error::invalid(format!("noise scale has length {}, expected {n}", sqrt_omega.len())));
    }
    if sqrt_omega.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("noise scale entries must be positive and finite"));
    }
    Ok(())
}

/// Posterior of `f` given `residual = f + ε`, `f ~ N(0, √Ω K √Ω)`, `ε ~ N(0, Ω)`.
///
/// `f̄ = √Ω K (K+I)⁻¹ √Ω⁻¹ r` and `V̄ = √Ω (K − K(K+I)⁻¹K) √Ω`.
pub fn posterior_moments(k: &DMatrix<f64>, sqrt_omega: &[f64], residual: &[f64]) -> Result<GpPosterior> {
    let n = k.nrows();
    check_scale(sqrt_omega, n)?;
    if residual.len() != n {
        return Err(Error::invalid("residual length does not match kernel"));
    }
    let mut a = k.clone();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let (ch, _) = linalg::cholesky_jittered(&a)?;
    let scaled = DVector::from_iterator(n, residual.iter().zip(sqrt_omega).map(|(r, s)| r / s));
    let core_mean = k * ch.solve(&scaled);
    let mean = DVector::from_iterator(n, core_mean.iter().zip(sqrt_omega).map(|(m, s)| m * s));
    let k_inv_k = ch.solve(k);
    let mut core = k - k * k_inv_k;
    core = (&core + core.transpose()) * 0.5;
    let mut factor = linalg::psd_factor(&core);
    for r in 0..n {
        for c in 0..n {
            factor[(r, c)] *= sqrt_omega[r];
        }
    }
    Ok(GpPosterior { mean, cov_factor: factor, grid_index: None })
}

/// Same moments through the spectral grid at point `idx` (factor not triangular).
pub fn posterior_moments_from_grid(
    grid: &KernelGrid,
    idx: usize,
    sqrt_omega: &[f64],
    residual: &[f64],
) -> Result<GpPosterior> {
    let n = grid.dim();
    check_scale(sqrt_omega, n)?;
    let scaled: Vec<f64> = residual.iter().zip(sqrt_omega).map(|(r, s)| r / s).collect();
    let core = grid.apply_smoother(idx, &scaled);
    let mean = DVector::from_iterator(n, core.iter().zip(sqrt_omega).map(|(m, s)| m * s));
    let mut factor = grid.posterior_factor(idx);
    for r in 0..n {
        for c in 0..n {
            factor[(r, c)] *= sqrt_omega[r];
        }
    }
    Ok(GpPosterior { mean, cov_factor: factor, grid_index: Some(idx) })
}

/// `f̄ + C_f z`.
pub fn draw_function(post: &GpPosterior, standard_normals: &[f64]) -> DVector<f64> {
    &post.mean + &post.cov_factor * DVector::from_column_slice(standard_normals)
}

/// Training-side quantities reused for every prediction from one fit:
/// `chol(K + I)` and `α = (K + I)⁻¹ √Ω⁻¹ y_adj`.
#[derive(Debug, Clone)]
pub struct PredictiveFactor {
    pub chol: Arc<Cholesky<f64, Dyn>>,
    pub alpha: DVector<f64>,
}

impl PredictiveFactor {
    pub fn new(k_train: &DMatrix<f64>, sqrt_omega: &[f64], y_adj: &[f64]) -> Result<Self> {
        let n = k_train.nrows();
        check_scale(sqrt_omega, n)?;
        let mut a = k_train.clone();
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let (chol, _) = linalg::cholesky_jittered(&a)?;
        Self::from_cholesky(Arc::new(chol), sqrt_omega, y_adj)
    }

    pub fn from_cholesky(chol: Arc<Cholesky<f64, Dyn>>, sqrt_omega: &[f64], y_adj: &[f64]) -> Result<Self> {
        let n = sqrt_omega.len();
        let scaled = DVector::from_iterator(n, y_adj.iter().zip(sqrt_omega).map(|(y, s)| y / s));
        let alpha = chol.solve(&scaled);
        Ok(PredictiveFactor { chol, alpha })
    }

    /// Mean and variance of `f(x*)` given the unit-volatility cross-covariances.
    pub fn moments(&self, k_cross: &[f64], k_star: f64, next_scale: f64) -> Result<(f64, f64)> {
        let mut scratch = Vec::new();
        self.moments_with(k_cross, k_star, next_scale, &mut scratch)
    }

    /// [`PredictiveFactor::moments`] reusing a caller-owned buffer.
    pub fn moments_with(&self, k_cross: &[f64], k_star: f64, next_scale: f64, scratch: &mut Vec<f64>) -> Result<(f64, f64)> {
        let mean = next_scale * k_cross.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum::<f64>();
        scratch.clear();
        scratch.extend_from_slice(k_cross);
        linalg::solve_lower_in_place(self.chol.l_dirty(), scratch);
        let mut var = k_star - scratch.iter().map(|v| v * v).sum::<f64>();
        if var < -1e-10 * k_star.abs().max(1.0) {
            return Err(Error::numerical(format!("negative predictive variance {var:e}")));
        }
        var = var.max(0.0);
        Ok((mean, next_scale * next_scale * var))
    }
}

/// Predictive mean and variance at a new input, with `next_scale = √ω*`.
pub fn predictive_moments(
    k_train: &DMatrix<f64>,
    k_cross: &[f64],
    k_star: f64,
    sqrt_omega: &[f64],
    next_scale: f64,
    y_adj: &[f64],
) -> Result<(f64, f64)> {
    if k_train.nrows() == 0 {
        return Ok((0.0, next_scale * next_scale * k_star));
    }
    PredictiveFactor::new(k_train, sqrt_omega, y_adj)?.moments(k_cross, k_star, next_scale)
}

/// Function-space vs weight-space posterior of `W η` with `W Wᵀ = K`, `η ~ N(0, I)`,
/// observed through `y = W η + ε`, `ε ~ N(0, σ² I)`.
#[derive(Debug, Clone)]
pub struct WeightSpaceReport {
    pub function_mean: DVector<f64>,
    pub function_cov: DMatrix<f64>,
    pub weight_mean: DVector<f64>,
    pub weight_cov: DMatrix<f64>,
    pub max_abs_discrepancy: f64,
}

pub fn weight_space_fit(k: &DMatrix<f64>, sigma2: f64, y: &[f64]) -> Result<WeightSpaceReport> {
    let n = k.nrows();
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let yv = DVector::from_column_slice(y);
    // function space
    let mut a = k.clone();
    for i in 0..n {
        a[(i, i)] += sigma2;
    }
    let (ch, _) = linalg::cholesky_jittered(&a)?;
    let function_mean = k * ch.solve(&yv);
    let function_cov = k - k * ch.solve(k);
    // weight space: conjugate regression on W with identity prior
    let w = linalg::psd_factor(k);
    let mut prec = w.transpose() * &w / sigma2;
    for i in 0..n {
        prec[(i, i)] += 1.0;
    }
    let (pch, _) = linalg::cholesky_jittered(&prec)?;
    let eta_mean = pch.solve(&(w.transpose() * &yv / sigma2));
    let eta_cov = pch.inverse();
    let weight_mean = &w * eta_mean;
    let weight_cov = &w * eta_cov * w.transpose();
    let max_abs_discrepancy =
        (&function_mean - &weight_mean).amax().max((&function_cov - &weight_cov).amax());
    Ok(WeightSpaceReport { function_mean, function_cov, weight_mean, weight_cov, max_abs_discrepancy })
}

/// Unnormalized log posterior ordinates over the grid: `log N(latent; 0, √Ω K √Ω) + log prior`.
pub fn gp_log_marginal_for_grid(grid: &KernelGrid, sqrt_omega: &[f64], latent: &[f64]) -> Vec<f64> {
    let mut lo = grid.log_likelihood_ordinates(latent, sqrt_omega);
    for (v, p) in lo.iter_mut().zip(&grid.log_prior) {
        *v += p;
    }
    lo
}
