//! Sample moments, symmetric matrix functions and the map from raw
//! observations to standardized radii and angle vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::polar;

/// Regularization added to diagonals before inverses, square roots and
/// eigendecompositions.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// An `n x d` data matrix with `n > d >= 2` and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    x: DMatrix<f64>,
}

impl SampleMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if d < 2 {
            return Err(Error::Domain(format!("need at least 2 columns, got {d}")));
        }
        if n <= d {
            return Err(Error::Domain(format!("need more rows than columns, got n={n}, d={d}")));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            // Column-major storage.
            return Err(Error::Domain(format!(
                "non-finite entry at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self { x })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Domain(format!(
                "row {i} has {} entries, expected {d}",
                rows[i].len()
            )));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }
}

#[derive(Debug, Clone)]
pub struct StandardizedSample {
    /// Radii `||W_i||`.
    pub u_hat: DVector<f64>,
    /// Unit directions `W_i / U_i`, one per row.
    pub v_hat: DMatrix<f64>,
    /// Angle vectors, one per row.
    pub theta_hat: DMatrix<f64>,
    /// Rows `X_i - mu_hat`.
    pub centered: DMatrix<f64>,
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub sigma_inv_sqrt: DMatrix<f64>,
    pub ridge: f64,
}

impl StandardizedSample {
    pub fn n(&self) -> usize {
        self.u_hat.len()
    }

    pub fn d(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn theta_row(&self, i: usize) -> Vec<f64> {
        self.theta_hat.row(i).iter().copied().collect()
    }

    pub fn v_row(&self, i: usize) -> Vec<f64> {
        self.v_hat.row(i).iter().copied().collect()
    }
}

/// Column means and the covariance with divisor `n`.
pub fn sample_moments(x: &SampleMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let m = x.matrix();
    let n = m.nrows() as f64;
    let mu = m.row_mean().transpose();
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let sigma = centered.tr_mul(&centered) / n;
    (mu, symmetrize(sigma))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Eigendecomposition of `S + ridge I`, rejecting non-positive spectra.
fn ridged_eigen(s: &DMatrix<f64>, ridge: f64) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !s.is_square() {
        return Err(Error::Domain(format!(
            "matrix is {}x{}, not square",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let k = s.nrows();
    let shifted = symmetrize(s.clone()) + DMatrix::identity(k, k) * ridge;
    let eig = SymmetricEigen::new(shifted);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(eig)
}

/// `Q f(Lambda) Q^T` where `S + ridge I = Q Lambda Q^T`.
pub fn sym_function(s: &DMatrix<f64>, ridge: f64, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = ridged_eigen(s, ridge)?;
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (mut col, lambda) in scaled.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col *= f(*lambda);
    }
    Ok(symmetrize(scaled * q.transpose()))
}

pub fn sym_inv_sqrt(s: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    sym_function(s, ridge, |l| 1.0 / l.sqrt())
}

pub fn sym_sqrt(s: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    sym_function(s, ridge, f64::sqrt)
}

pub fn sym_inv(s: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    sym_function(s, ridge, |l| 1.0 / l)
}

pub fn standardize_sample(x: &SampleMatrix, ridge: f64) -> Result<StandardizedSample> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let (n, d) = (x.n(), x.d());
    let (mu_hat, sigma_hat) = sample_moments(x);
    let sigma_inv_sqrt = sym_inv_sqrt(&sigma_hat, ridge)?;

    let mut centered = x.matrix().clone();
    for mut row in centered.row_iter_mut() {
        row -= mu_hat.transpose();
    }
    let w = &centered * &sigma_inv_sqrt;

    let mut u_hat = DVector::zeros(n);
    let mut v_hat = DMatrix::zeros(n, d);
    let mut theta_hat = DMatrix::zeros(n, d - 1);
    for i in 0..n {
        let r = w.row(i).norm();
        if !(r > 0.0) {
            return Err(Error::ZeroRadius { row: i });
        }
        u_hat[i] = r;
        let v: Vec<f64> = w.row(i).iter().map(|c| c / r).collect();
        let theta = polar::sphere_to_angles(&v)?;
        for (j, c) in v.into_iter().enumerate() {
            v_hat[(i, j)] = c;
        }
        for (j, t) in theta.into_iter().enumerate() {
            theta_hat[(i, j)] = t;
        }
    }

    Ok(StandardizedSample {
        u_hat,
        v_hat,
        theta_hat,
        centered,
        mu_hat,
        sigma_hat,
        sigma_inv_sqrt,
        ridge,
    })
}
