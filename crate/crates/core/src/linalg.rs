//! Dense and banded linear-algebra helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Diagonal loadings tried, in order, when a Cholesky factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factorization with a diagonal jitter ladder.
///
/// Returns the factor together with the jitter that made it succeed.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("cholesky of a non-square matrix"));
    }
    for &jitter in JITTER_LADDER.iter() {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            if ch.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((ch, jitter));
            }
        }
    }
    Err(Error::numerical(format!(
        "cholesky failed after jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Lower-triangular factor `L` with `L Lᵀ ≈ A` for a positive semidefinite `A`.
///
/// Pivots below `tol · max(diag)` are treated as zero, so rank-deficient
/// (including all-zero) matrices get an exact zero column instead of jitter.
pub fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let max_diag = a.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-13 * max_diag.max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    l
}

/// `2 Σ log L_ii` for a Cholesky factor.
pub fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solve `L x = b` for the lower factor of a Cholesky decomposition.
pub fn solve_lower(ch: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    solve_lower_in_place(ch.l_dirty(), x.as_mut_slice());
    x
}

/// Column-oriented forward substitution on the lower triangle of `l`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = x.len();
    for k in 0..n {
        let col = l.column(k);
        let col = col.as_slice();
        let xk = x[k] / col[k];
        x[k] = xk;
        if xk != 0.0 {
            for i in k + 1..n {
                x[i] -= col[i] * xk;
            }
        }
    }
}

/// Symmetric tridiagonal matrix stored by its main and first sub-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriBand {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl TriBand {
    pub fn zeros(n: usize) -> Self {
        TriBand {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn add(&self, other: &TriBand) -> TriBand {
        TriBand {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a + b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }

    /// Banded Cholesky `A = L Lᵀ` with `L` lower bidiagonal; `None` if not positive definite.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let n = self.len();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut piv = self.diag[i];
            if i > 0 {
                piv -= l[i - 1] * l[i - 1];
            }
            if !(piv > 0.0) || !piv.is_finite() {
                return None;
            }
            d[i] = piv.sqrt();
            if i + 1 < n {
                l[i] = self.off[i] / d[i];
            }
        }
        Some(BandCholesky { d, l })
    }
}

/// Lower bidiagonal Cholesky factor of a [`TriBand`].
#[derive(Debug, Clone)]
pub struct BandCholesky {
    /// Main diagonal of `L`.
    pub d: Vec<f64>,
    /// Sub-diagonal of `L`.
    pub l: Vec<f64>,
}

impl BandCholesky {
    pub fn logdet(&self) -> f64 {
        2.0 * self.d.iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let y = self.solve_lower(b);
        self.solve_upper(&y)
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            if i > 0 {
                s -= self.l[i - 1] * y[i - 1];
            }
            y[i] = s / self.d[i];
        }
        y
    }

    /// Solve `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= self.l[i] * x[i + 1];
            }
            x[i] = s / self.d[i];
        }
        x
    }

    /// `Lᵀ v`.
    pub fn mul_upper(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mut s = self.d[i] * v[i];
                if i + 1 < n {
                    s += self.l[i] * v[i + 1];
                }
                s
            })
            .collect()
    }
}

/// Forward substitution for a unit lower-triangular system `(I − Q) x = b`
/// where `q` holds the strictly lower part row by row (`q[j]` has length `j`).
pub fn solve_unit_lower(q: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for j in 0..n {
        let mut s = b[j];
        for (k, qjk) in q[j].iter().enumerate() {
            s += qjk * x[k];
        }
        x[j] = s;
    }
    x
}
