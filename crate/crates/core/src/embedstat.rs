//! Gram matrices on radii and angles, centering against the reference
//! angular law `P0`, and the test statistic.
//!
//! Under ellipticity the angle coordinates of a uniform direction on
//! `S^{d-1}` are independent. Coordinate `j < d - 1` (one-based) has density
//! proportional to `cos^{d-1-j}` on `(-pi/2, pi/2]` and the last coordinate
//! is uniform on `(-pi, pi]`. Because the angle kernel is a product of
//! scalar factors, every `P0` integral factorizes into one-dimensional
//! quadratures.
//!
//! The centered angle Gram matrix is
//!
//! ```text
//! Kt_ij = k(T_i, T_j) - s_i - s_j + D
//! s_i   = prod_j  int k_j(T_ij, t) f_j(t) dt
//! D     = prod_j  int int k_j(t, t') f_j(t) f_j(t') dt dt'
//! ```
//!
//! and the statistic is `T_n = (1/n) sum_ij (K_U)_ij (Kt)_ij`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::kernels::KernelSpec;
use crate::numquad::{integrate1d, integrate2d};
use crate::standardize::StandardizedSample;

/// Absolute tolerance for every `P0` integral.
pub const P0_TOL: f64 = 1e-9;

const NORMALIZER_TOL: f64 = 1e-13;

/// Support of angle coordinate `j` (one-based) in dimension `d`.
pub fn angle_interval(j: usize, d: usize) -> (f64, f64) {
    if j + 1 == d {
        (-PI, PI)
    } else {
        (-FRAC_PI_2, FRAC_PI_2)
    }
}

fn check_coordinate(j: usize, d: usize) -> Result<()> {
    if d < 2 || j == 0 || j >= d {
        return Err(Error::Domain(format!("angle index {j} invalid for dimension {d}")));
    }
    Ok(())
}

/// `int cos^m` over `(-pi/2, pi/2)`, computed once per exponent.
fn cos_power_normalizer(m: usize) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&m) {
        return Ok(*v);
    }
    let value = integrate1d(
        |t| t.cos().max(0.0).powi(m as i32),
        -FRAC_PI_2,
        FRAC_PI_2,
        NORMALIZER_TOL,
    )?
    .value;
    cache.lock().unwrap_or_else(|e| e.into_inner()).insert(m, value);
    Ok(value)
}

/// Density used inside quadratures; assumes `theta` is in the support.
fn density_unchecked(j: usize, d: usize, theta: f64, normalizer: f64) -> f64 {
    if j + 1 == d {
        1.0 / (2.0 * PI)
    } else {
        theta.cos().max(0.0).powi((d - 1 - j) as i32) / normalizer
    }
}

fn normalizer_for(j: usize, d: usize) -> Result<f64> {
    if j + 1 == d {
        Ok(2.0 * PI)
    } else {
        cos_power_normalizer(d - 1 - j)
    }
}

pub fn theta_marginal_density(j: usize, d: usize, theta: f64) -> Result<f64> {
    check_coordinate(j, d)?;
    let (a, b) = angle_interval(j, d);
    if !(theta > a && theta <= b) {
        return Err(Error::Domain(format!(
            "angle {theta} outside ({a}, {b}] for coordinate {j} of dimension {d}"
        )));
    }
    Ok(density_unchecked(j, d, theta, normalizer_for(j, d)?))
}

/// `int k(t, s) f_j(s) ds` for a single coordinate.
fn single_factor(spec: &KernelSpec, j: usize, d: usize, t: f64, tol: f64) -> Result<f64> {
    let (a, b) = angle_interval(j, d);
    let c = normalizer_for(j, d)?;
    Ok(integrate1d(|s| spec.eval(t, s) * density_unchecked(j, d, s, c), a, b, tol)?.value)
}

fn double_factor(spec: &KernelSpec, j: usize, d: usize, tol: f64) -> Result<f64> {
    let (a, b) = angle_interval(j, d);
    let c = normalizer_for(j, d)?;
    let f = |s: f64, t: f64| spec.eval(s, t) * density_unchecked(j, d, s, c) * density_unchecked(j, d, t, c);
    Ok(integrate2d(f, (a, b), (a, b), tol)?.value)
}

fn per_factor_tol(d: usize) -> f64 {
    P0_TOL / (d - 1) as f64
}

/// `int k_Theta(theta, t) dP0(t)`.
pub fn p0_single_integral(spec: &KernelSpec, d: usize, theta: &[f64]) -> Result<f64> {
    if d < 2 || theta.len() + 1 != d {
        return Err(Error::Domain(format!(
            "angle vector of length {} for dimension {d}",
            theta.len()
        )));
    }
    let tol = per_factor_tol(d);
    let mut prod = 1.0;
    for (idx, t) in theta.iter().enumerate() {
        prod *= single_factor(spec, idx + 1, d, *t, tol)?;
    }
    Ok(prod)
}

/// `int int k_Theta dP0 dP0`, a product over all `d - 1` coordinates.
pub fn p0_double_integral(spec: &KernelSpec, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
    }
    let tol = per_factor_tol(d);
    let mut prod = 1.0;
    for j in 1..d {
        prod *= double_factor(spec, j, d, tol)?;
    }
    Ok(prod)
}

/// Memo of per-coordinate `P0` integrals for one kernel and dimension.
///
/// Angles are rounded to 12 decimals before lookup and the integral is
/// evaluated at the rounded angle, so results do not depend on the order
/// in which rows are visited.
#[derive(Debug, Clone)]
pub struct P0Cache {
    spec: KernelSpec,
    d: usize,
    factors: HashMap<(usize, i64), f64>,
    double: Option<f64>,
}

fn round_key(theta: f64) -> i64 {
    (theta * 1e12).round() as i64
}

impl P0Cache {
    pub fn new(spec: KernelSpec, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
        }
        Ok(Self {
            spec,
            d,
            factors: HashMap::new(),
            double: None,
        })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Integrals for every row of `theta` (an `n x (d-1)` matrix).
    pub fn single_rows(&mut self, theta: &DMatrix<f64>, mode: ExecMode) -> Result<DVector<f64>> {
        let (n, k) = theta.shape();
        if k + 1 != self.d {
            return Err(Error::Domain(format!(
                "angle matrix has {k} columns for dimension {}",
                self.d
            )));
        }
        let mut missing: Vec<(usize, i64)> = Vec::new();
        for i in 0..n {
            for c in 0..k {
                let key = (c + 1, round_key(theta[(i, c)]));
                if !self.factors.contains_key(&key) {
                    missing.push(key);
                }
            }
        }
        missing.sort_unstable();
        missing.dedup();

        let (spec, d, tol) = (self.spec, self.d, per_factor_tol(self.d));
        let values = exec::try_map_indexed(mode, missing.len(), |m| {
            let (j, key) = missing[m];
            single_factor(&spec, j, d, key as f64 * 1e-12, tol)
        })?;
        self.factors.extend(missing.into_iter().zip(values));

        Ok(DVector::from_fn(n, |i, _| {
            (0..k)
                .map(|c| self.factors[&(c + 1, round_key(theta[(i, c)]))])
                .product()
        }))
    }

    pub fn double(&mut self) -> Result<f64> {
        if let Some(v) = self.double {
            return Ok(v);
        }
        let v = p0_double_integral(&self.spec, self.d)?;
        self.double = Some(v);
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct GramPair {
    pub k_u: DMatrix<f64>,
    /// Uncentered angle Gram matrix.
    pub k_theta: DMatrix<f64>,
    pub k_theta_centered: DMatrix<f64>,
    pub p0_single: DVector<f64>,
    pub p0_double: f64,
}

/// Symmetric `n x n` matrix filled from the upper triangle.
pub(crate) fn symmetric_from_fn(
    n: usize,
    mode: ExecMode,
    f: impl Fn(usize, usize) -> f64 + Sync + Send,
) -> DMatrix<f64> {
    let rows = exec::map_indexed(mode, n, |i| (i..n).map(|j| f(i, j)).collect::<Vec<f64>>());
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            m[(i, i + off)] = v;
            m[(i + off, i)] = v;
        }
    }
    m
}

pub fn gram_u(spec: &KernelSpec, u: &DVector<f64>, mode: ExecMode) -> DMatrix<f64> {
    symmetric_from_fn(u.len(), mode, |i, j| spec.eval(u[i], u[j]))
}

pub fn gram_theta(spec: &KernelSpec, theta: &DMatrix<f64>, mode: ExecMode) -> DMatrix<f64> {
    let k = theta.ncols();
    symmetric_from_fn(theta.nrows(), mode, |i, j| {
        (0..k).map(|c| spec.eval(theta[(i, c)], theta[(j, c)])).product()
    })
}

pub fn build_gram_pair(std: &StandardizedSample, spec_u: &KernelSpec, spec_theta: &KernelSpec) -> Result<GramPair> {
    build_gram_pair_with(std, spec_u, spec_theta, ExecMode::default())
}

pub fn build_gram_pair_with(
    std: &StandardizedSample,
    spec_u: &KernelSpec,
    spec_theta: &KernelSpec,
    mode: ExecMode,
) -> Result<GramPair> {
    let n = std.n();
    let mut cache = P0Cache::new(*spec_theta, std.d())?;
    let p0_single = cache.single_rows(&std.theta_hat, mode)?;
    let p0_double = cache.double()?;
    let k_u = gram_u(spec_u, &std.u_hat, mode);
    let k_theta = gram_theta(spec_theta, &std.theta_hat, mode);
    let k_theta_centered = DMatrix::from_fn(n, n, |i, j| {
        // Same association order for (i, j) and (j, i) keeps the result symmetric.
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        k_theta[(a, b)] - (p0_single[a] + p0_single[b]) + p0_double
    });
    Ok(GramPair {
        k_u,
        k_theta,
        k_theta_centered,
        p0_single,
        p0_double,
    })
}

/// `T_n = (1/n) sum_ij (K_U)_ij (Kt_Theta)_ij`.
pub fn test_statistic(g: &GramPair, n: usize) -> Result<f64> {
    let shape = (n, n);
    if n == 0 || g.k_u.shape() != shape || g.k_theta_centered.shape() != shape {
        return Err(Error::Domain(format!(
            "Gram matrices {:?} and {:?} do not match n = {n}",
            g.k_u.shape(),
            g.k_theta_centered.shape()
        )));
    }
    Ok(g.k_u.component_mul(&g.k_theta_centered).sum() / n as f64)
}
