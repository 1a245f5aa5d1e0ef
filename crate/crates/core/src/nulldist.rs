//! Influence functions, the `n x n` matrix whose eigenvalues weight the
//! limiting chi-square mixture, and the end-to-end test.
//!
//! For an observation `x` with `s = x - mu` and `r^2 = s' Sigma^{-1} s`, the
//! radius `U` and direction `V = Sigma^{-1/2} s / r` have influence functions
//! that are linear in the influence of the moments:
//!
//! ```text
//! U*(x, z)     = A1(x) mu*(z) + A2(x) vec Sigma*(z)
//! Theta*(x, z) = C1(x) mu*(z) + C2(x) vec Sigma*(z),   Ci = (dg/dv)(V) Bi
//! mu*(z)       = z - mu
//! Sigma*(z)    = (z - mu)(z - mu)' - Sigma
//! ```
//!
//! Each observation `X_i` contributes a coordinate vector `a_i` in the tensor
//! basis `k_U(., U_l) (x) k_Theta(., Theta_m)`. Writing `a_i` as an `n x n`
//! matrix `A_i`, the inner product `a_i' (K_U (x) K_Theta) a_k` equals
//! `tr(A_i' K_U A_k K_Theta)`. With `C = I - 11'/n`, `H = C K_Theta C`,
//! `W_lj = dk_U(U_l, U_j)/du'` and `G_r` the `r`-th angle gradient,
//!
//! ```text
//! A_i = e_i e_i' C                                   (empirical centering)
//!     + (1/n) K_U^{-1} W diag(U*[:, i]) C            (radius influence)
//!     + (1/n) sum_r diag(T_r[:, i]) G_r' K_Theta^{-1}  (angle influence)
//! ```
//!
//! All nine cross terms reduce to Hadamard products and `n x n` matrix
//! products, so no vector of length `n^2` is ever formed. Every Gram
//! matrix, inverse and square root uses the ridge-shifted versions.

use nalgebra::{Cholesky, DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::embedstat::{build_gram_pair_with, test_statistic, GramPair};
use crate::error::{Error, Result, Stage};
use crate::exec::{self, ExecMode};
use crate::kernels::{bandwidth_heuristic, KernelFamily, KernelSpec};
use crate::numquad::{imhof_tail, WeightSpectrum};
use crate::polar;
use crate::standardize::{
    standardize_sample, sym_inv, sym_inv_sqrt, sym_sqrt, SampleMatrix, StandardizedSample, DEFAULT_RIDGE,
};

/// Asymmetry tolerated by [`null_eigenvalues`], relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceCoeffs {
    pub a1: RowDVector<f64>,
    pub a2: RowDVector<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
}

pub fn influence_mu_sigma(
    z: &DVector<f64>,
    mu_hat: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = mu_hat.len();
    if z.len() != d || sigma_hat.shape() != (d, d) {
        return Err(Error::Domain(format!(
            "point of length {} does not match moments of dimension {d}",
            z.len()
        )));
    }
    let mu_star = z - mu_hat;
    let sigma_star = &mu_star * mu_star.transpose() - sigma_hat;
    Ok((mu_star, DVector::from_column_slice(sigma_star.as_slice())))
}

/// Matrix functions of the ridge-shifted covariance shared by every
/// observation.
#[derive(Debug, Clone)]
pub struct InfluenceContext {
    mu_hat: DVector<f64>,
    sigma_r_inv: DMatrix<f64>,
    sigma_r_inv_sqrt: DMatrix<f64>,
    kron_inv: DMatrix<f64>,
}

impl InfluenceContext {
    pub fn new(mu_hat: &DVector<f64>, sigma_hat: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mu_hat.len();
        if sigma_hat.shape() != (d, d) {
            return Err(Error::Domain(format!(
                "covariance is {:?}, expected {d}x{d}",
                sigma_hat.shape()
            )));
        }
        let sigma_r = sigma_hat + DMatrix::identity(d, d) * ridge;
        let root = sym_sqrt(sigma_hat, ridge)?;
        let kron_sum = root.kronecker(&sigma_r) + sigma_r.kronecker(&root);
        Ok(Self {
            mu_hat: mu_hat.clone(),
            sigma_r_inv: sym_inv(sigma_hat, ridge)?,
            sigma_r_inv_sqrt: sym_inv_sqrt(sigma_hat, ridge)?,
            kron_inv: sym_inv(&kron_sum, ridge)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }

    /// `(Sigma^{1/2} (x) Sigma + Sigma (x) Sigma^{1/2} + ridge I)^{-1}`.
    pub fn kron_inv(&self) -> &DMatrix<f64> {
        &self.kron_inv
    }

    pub fn coeffs(&self, x: &DVector<f64>) -> Result<InfluenceCoeffs> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        self.coeffs_centered(&(x - &self.mu_hat), 0)
    }

    /// Coefficients for `s = x - mu`; `row` labels a zero-radius error.
    pub(crate) fn coeffs_centered(&self, s: &DVector<f64>, row: usize) -> Result<InfluenceCoeffs> {
        let d = self.dim();
        let w = &self.sigma_r_inv * s;
        let r2 = s.dot(&w);
        if !(r2 > 0.0) {
            return Err(Error::ZeroRadius { row });
        }
        let r = r2.sqrt();

        let a1 = -w.transpose() / r;
        let a2 = -w.kronecker(&w).transpose() / (2.0 * r);

        let q = &self.sigma_r_inv_sqrt * s;
        let b1 = -(&q * &a1) / r2 - &self.sigma_r_inv_sqrt / r;

        // (s' (x) I_d) times the Kronecker-sum inverse: row a is sum_b s_b K[b d + a, :].
        let mut sk = DMatrix::zeros(d, d * d);
        for b in 0..d {
            for a in 0..d {
                let src = self.kron_inv.row(b * d + a) * s[b];
                let mut dst = sk.row_mut(a);
                dst += src;
            }
        }
        let b2 = -(&q * &a2) / r2 - sk / r;

        let v = q / r;
        let jac = polar::dg_dv(v.as_slice())?;
        let c1 = &jac * &b1;
        let c2 = &jac * &b2;
        Ok(InfluenceCoeffs { a1, a2, b1, b2, c1, c2 })
    }
}

pub fn coeffs_abc(
    x: &DVector<f64>,
    mu_hat: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    ridge: f64,
) -> Result<InfluenceCoeffs> {
    InfluenceContext::new(mu_hat, sigma_hat, ridge)?.coeffs(x)
}

pub fn influence_u_theta(
    coeffs: &InfluenceCoeffs,
    mu_star: &DVector<f64>,
    sigma_star_vec: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if coeffs.a1.len() != mu_star.len() || coeffs.a2.len() != sigma_star_vec.len() {
        return Err(Error::Domain("influence shapes do not match coefficients".into()));
    }
    let u = (&coeffs.a1 * mu_star)[0] + (&coeffs.a2 * sigma_star_vec)[0];
    let theta = &coeffs.c1 * mu_star + &coeffs.c2 * sigma_star_vec;
    Ok((u, theta))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MtmOptions {
    pub mode: ExecMode,
    /// Drop both derivative kernels, leaving only the centering term.
    pub zero_derivatives: bool,
}

/// Influence of every observation on every other one.
#[derive(Debug, Clone)]
pub struct InfluenceTable {
    /// `u_star[(j, i)] = U*(X_j, X_i)`.
    pub u_star: DMatrix<f64>,
    /// `theta_star[r][(j, i)] = Theta*(X_j, X_i)_r`.
    pub theta_star: Vec<DMatrix<f64>>,
}

pub fn influence_table(std: &StandardizedSample, ridge: f64, mode: ExecMode) -> Result<InfluenceTable> {
    let (n, d) = (std.n(), std.d());
    let ctx = InfluenceContext::new(&std.mu_hat, &std.sigma_hat, ridge)?;
    let coeffs = exec::try_map_indexed(mode, n, |j| {
        let s = std.centered.row(j).transpose();
        ctx.coeffs_centered(&s, j)
    })?;

    let width = d + d * d;
    let mut z = DMatrix::zeros(width, n);
    for i in 0..n {
        let s = std.centered.row(i).transpose();
        let (mu_star, sigma_star) = influence_mu_sigma(&s, &DVector::zeros(d), &std.sigma_hat)?;
        z.view_mut((0, i), (d, 1)).copy_from(&mu_star);
        z.view_mut((d, i), (d * d, 1)).copy_from(&sigma_star);
    }

    let mut a = DMatrix::zeros(n, width);
    for (j, c) in coeffs.iter().enumerate() {
        a.view_mut((j, 0), (1, d)).copy_from(&c.a1);
        a.view_mut((j, d), (1, d * d)).copy_from(&c.a2);
    }
    let u_star = &a * &z;

    let theta_star = (0..d - 1)
        .map(|r| {
            let mut cr = DMatrix::zeros(n, width);
            for (j, c) in coeffs.iter().enumerate() {
                cr.view_mut((j, 0), (1, d)).copy_from(&c.c1.row(r));
                cr.view_mut((j, d), (1, d * d)).copy_from(&c.c2.row(r));
            }
            cr * &z
        })
        .collect();
    Ok(InfluenceTable { u_star, theta_star })
}

fn with_ridge(k: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let n = k.nrows();
    k + DMatrix::identity(n, n) * ridge
}

/// `L^{-1}` for the Cholesky factor `K = L L'`.
fn cholesky_factor_inverse(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let chol = Cholesky::new(k.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        min_eigenvalue: k.clone().symmetric_eigenvalues().min(),
    })?;
    let mut inv = DMatrix::identity(n, n);
    if !chol.l().solve_lower_triangular_mut(&mut inv) {
        return Err(Error::Numeric("singular Cholesky factor".into()));
    }
    Ok(inv)
}

/// `C M` with `C = I - 11'/n`: subtract column means.
fn center_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = m.row_mean();
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= &means;
    }
    out
}

/// `C M C`.
fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let left = center_rows(m);
    center_rows(&left.transpose()).transpose()
}

pub fn build_mtm(
    std: &StandardizedSample,
    g: &GramPair,
    spec_u: &KernelSpec,
    spec_theta: &KernelSpec,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    build_mtm_with(std, g, spec_u, spec_theta, ridge, MtmOptions::default())
}

pub fn build_mtm_with(
    std: &StandardizedSample,
    g: &GramPair,
    spec_u: &KernelSpec,
    spec_theta: &KernelSpec,
    ridge: f64,
    opts: MtmOptions,
) -> Result<DMatrix<f64>> {
    let (n, d) = (std.n(), std.d());
    if g.k_u.shape() != (n, n) || g.k_theta.shape() != (n, n) {
        return Err(Error::Domain("Gram matrices do not match the sample".into()));
    }
    let nf = n as f64;
    let ku = with_ridge(&g.k_u, ridge);
    let kt = with_ridge(&g.k_theta, ridge);
    let h = double_center(&kt);
    let mut total = ku.component_mul(&h);

    if !opts.zero_derivatives {
        let lu_inv = cholesky_factor_inverse(&ku)?;
        let lt_inv = cholesky_factor_inverse(&kt)?;
        let table = influence_table(std, ridge, opts.mode)?;
        let ustar = &table.u_star;
        let tstar = &table.theta_star;

        let u = &std.u_hat;
        let w = DMatrix::from_fn(n, n, |l, j| spec_u.d2(u[l], u[j]));
        let th = &std.theta_hat;
        let grads: Vec<DMatrix<f64>> = (0..d - 1)
            .map(|r| {
                DMatrix::from_fn(n, n, |l, j| {
                    g.k_theta[(l, j)] * spec_theta.log_d2(th[(l, r)], th[(j, r)])
                })
            })
            .collect();
        let rg: Vec<DMatrix<f64>> = grads.iter().map(|gr| &lt_inv * gr).collect();
        let wt = w.transpose();

        let g12 = w.component_mul(&h) * ustar / nf;
        let rw = &lu_inv * &w;
        // Explicit transposes keep every product on the blocked gemm path.
        let ustar_t = ustar.transpose();
        let g22 = &ustar_t * ((rw.transpose() * &rw).component_mul(&h) * ustar) / (nf * nf);

        // Per angle coordinate r: the U-Theta and Theta-Theta blocks.
        let m = d - 1;
        let parts = exec::map_indexed(opts.mode, m, |r| {
            let cg = center_rows(&grads[r]);
            let g13 = ku.component_mul(&cg) * &tstar[r];
            let y23 = wt.component_mul(&cg) * &tstar[r];
            let rg_t = rg[r].transpose();
            let mut y33 = ku.component_mul(&(&rg_t * &rg[r])) * &tstar[r] * 0.5;
            for s in r + 1..m {
                y33 += ku.component_mul(&(&rg_t * &rg[s])) * &tstar[s];
            }
            (g13, y23, tstar[r].transpose() * y33)
        });
        let mut g13 = DMatrix::zeros(n, n);
        let mut y23 = DMatrix::zeros(n, n);
        let mut half33 = DMatrix::zeros(n, n);
        for (a, b, c) in parts {
            g13 += a;
            y23 += b;
            half33 += c;
        }
        let g13 = g13 / nf;
        let g23 = &ustar_t * y23 / (nf * nf);
        let g33 = (&half33 + half33.transpose()) / (nf * nf);

        total += &g12 + g12.transpose() + g22 + &g13 + g13.transpose() + &g23 + g23.transpose() + g33;
    }

    Ok((&total + total.transpose()) * (0.5 / nf))
}

pub fn null_eigenvalues(mtm: &DMatrix<f64>) -> Result<WeightSpectrum> {
    if !mtm.is_square() {
        return Err(Error::Domain(format!(
            "matrix is {}x{}, not square",
            mtm.nrows(),
            mtm.ncols()
        )));
    }
    if mtm.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let asym = (mtm - mtm.transpose()).amax();
    if asym > SYMMETRY_TOL * mtm.amax().max(1.0) {
        return Err(Error::Domain(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = (mtm + mtm.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    if eig.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigensolver returned non-finite values".into()));
    }
    WeightSpectrum::new(eig.iter().map(|v| v.max(0.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub kernel: KernelFamily,
    /// Fixed radius bandwidth; the mean-distance heuristic when `None`.
    pub gamma_u: Option<f64>,
    pub gamma_theta: Option<f64>,
    pub ridge: f64,
    /// Absolute accuracy of the p-value.
    pub p_value_tol: f64,
    pub exec: ExecMode,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::Gaussian,
            gamma_u: None,
            gamma_theta: None,
            ridge: DEFAULT_RIDGE,
            p_value_tol: 1e-6,
            exec: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub eigenvalues: WeightSpectrum,
    pub p_value: f64,
    pub n: usize,
    pub d: usize,
    pub gamma_u: f64,
    pub gamma_theta: f64,
    pub ridge: f64,
    pub kernel_family: KernelFamily,
}

impl TestResult {
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub fn run_test(x: &SampleMatrix, config: &TestConfig) -> Result<TestResult> {
    if !(config.ridge >= 0.0 && config.ridge.is_finite()) {
        return Err(Error::Domain(format!(
            "ridge must be finite and >= 0, got {}",
            config.ridge
        )));
    }
    if !(config.p_value_tol > 0.0) {
        return Err(Error::Domain(format!(
            "p-value tolerance must be positive, got {}",
            config.p_value_tol
        )));
    }
    let (n, d, mode) = (x.n(), x.d(), config.exec);

    let std = standardize_sample(x, config.ridge).map_err(Error::at(Stage::Standardize))?;

    let bandwidths = || -> Result<(KernelSpec, KernelSpec)> {
        let gamma_u = match config.gamma_u {
            Some(g) => g,
            None => bandwidth_heuristic(&std.u_hat.iter().map(|u| [*u]).collect::<Vec<_>>())?,
        };
        let gamma_theta = match config.gamma_theta {
            Some(g) => g,
            None => bandwidth_heuristic(&(0..n).map(|i| std.theta_row(i)).collect::<Vec<_>>())?,
        };
        Ok((
            KernelSpec::new(config.kernel, gamma_u)?,
            KernelSpec::new(config.kernel, gamma_theta)?,
        ))
    };
    let (spec_u, spec_theta) = bandwidths().map_err(Error::at(Stage::Bandwidth))?;

    let g = build_gram_pair_with(&std, &spec_u, &spec_theta, mode).map_err(Error::at(Stage::GramPair))?;
    let statistic = test_statistic(&g, n).map_err(Error::at(Stage::Statistic))?;
    let opts = MtmOptions {
        mode,
        zero_derivatives: false,
    };
    let mtm =
        build_mtm_with(&std, &g, &spec_u, &spec_theta, config.ridge, opts).map_err(Error::at(Stage::NullMatrix))?;
    let eigenvalues = null_eigenvalues(&mtm).map_err(Error::at(Stage::Eigenvalues))?;
    let p_value = imhof_tail(&eigenvalues, statistic.max(0.0), config.p_value_tol).map_err(Error::at(Stage::PValue))?;

    Ok(TestResult {
        statistic,
        eigenvalues,
        p_value,
        n,
        d,
        gamma_u: spec_u.gamma,
        gamma_theta: spec_theta.gamma,
        ridge: config.ridge,
        kernel_family: config.kernel,
    })
}
