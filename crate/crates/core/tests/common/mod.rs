//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ellipkit::embedstat::{build_gram_pair, p0_double_integral, p0_single_integral};
use ellipkit::kernels::{k_theta, k_theta_grad2, k_u, k_u_d2, KernelSpec};
use ellipkit::nulldist::{coeffs_abc, influence_mu_sigma, influence_u_theta};
use ellipkit::polar::sphere_to_angles;
use ellipkit::standardize::{standardize_sample, sym_inv, sym_inv_sqrt, sym_sqrt, SampleMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_sample(seed: u64, n: usize, d: usize) -> SampleMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SampleMatrix::new(DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap()
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

/// The null matrix built by forming every coordinate vector `a_i` of
/// length `n^2` from its three-term sum and applying
/// `(K_U^{1/2} (x) K_Theta^{1/2})` explicitly.
pub fn materialized_mtm(x: &SampleMatrix, su: &KernelSpec, st: &KernelSpec, ridge: f64) -> DMatrix<f64> {
    let (n, d) = (x.n(), x.d());
    let std = standardize_sample(x, ridge).unwrap();
    let g = build_gram_pair(&std, su, st).unwrap();
    let ku_inv = sym_inv(&g.k_u, ridge).unwrap();
    let kt_inv = sym_inv(&g.k_theta, ridge).unwrap();
    let root = sym_sqrt(&g.k_u, ridge)
        .unwrap()
        .kronecker(&sym_sqrt(&g.k_theta, ridge).unwrap());
    let ones = DVector::from_element(n, 1.0 / n as f64);
    let rows: Vec<DVector<f64>> = (0..n).map(|i| x.matrix().row(i).transpose()).collect();

    let mut m = DMatrix::zeros(n * n, n);
    for i in 0..n {
        let (mu_star, sigma_star) = influence_mu_sigma(&rows[i], &std.mu_hat, &std.sigma_hat).unwrap();
        let mut a = unit(n, i).kronecker(&(unit(n, i) - &ones));
        for (j, row) in rows.iter().enumerate() {
            let coeffs = coeffs_abc(row, &std.mu_hat, &std.sigma_hat, ridge).unwrap();
            let (u_star, theta_star) = influence_u_theta(&coeffs, &mu_star, &sigma_star).unwrap();

            let kdot_u = DVector::from_fn(n, |l, _| k_u_d2(su, std.u_hat[l], std.u_hat[j]));
            let p = &ku_inv * kdot_u * u_star;
            a += p.kronecker(&(unit(n, j) - &ones)) / n as f64;

            let theta_j = std.theta_row(j);
            let mut kdot_t = DMatrix::zeros(n, d - 1);
            for l in 0..n {
                let grad = k_theta_grad2(st, &std.theta_row(l), &theta_j).unwrap();
                for (r, v) in grad.into_iter().enumerate() {
                    kdot_t[(l, r)] = v;
                }
            }
            let q = &kt_inv * kdot_t * &theta_star;
            a += unit(n, j).kronecker(&q) / n as f64;
        }
        m.set_column(i, &(&root * a / (n as f64).sqrt()));
    }
    m.transpose() * m
}

/// `(1/n) sum_ij k_U(U_i, U_j) <kt(., T_i), kt(., T_j)>` by a plain double loop.
pub fn brute_force_statistic(x: &SampleMatrix, su: &KernelSpec, st: &KernelSpec, ridge: f64) -> f64 {
    let std = standardize_sample(x, ridge).unwrap();
    let (n, d) = (std.n(), std.d());
    let thetas: Vec<Vec<f64>> = (0..n).map(|i| std.theta_row(i)).collect();
    let singles: Vec<f64> = thetas.iter().map(|t| p0_single_integral(st, d, t).unwrap()).collect();
    let double = p0_double_integral(st, d).unwrap();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let inner = k_theta(st, &thetas[i], &thetas[j]).unwrap() - singles[i] - singles[j] + double;
            total += k_u(su, std.u_hat[i], std.u_hat[j]) * inner;
        }
    }
    total / n as f64
}

/// A draw from the angular law of a uniform direction on the sphere.
pub fn draw_p0(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let v: Vec<f64> = z.iter().map(|x| x / norm).collect();
            return sphere_to_angles(&v).unwrap();
        }
    }
}

/// Mean and standard error of a sample given its running sums.
pub fn mean_se(sum: f64, sum_sq: f64, count: usize) -> (f64, f64) {
    let m = count as f64;
    let mean = sum / m;
    (mean, ((sum_sq / m - mean * mean).max(0.0) / m).sqrt())
}

/// Moments of the contaminated law `(1 - eps) F_n + eps delta_z`.
pub fn mixture_moments(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    z: &DVector<f64>,
    eps: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let mu_f = mu * (1.0 - eps) + z * eps;
    let a = mu - &mu_f;
    let b = z - &mu_f;
    let sigma_f = (sigma + &a * a.transpose()) * (1.0 - eps) + &b * b.transpose() * eps;
    (mu_f, sigma_f)
}

/// Radius and angles of `x` standardized by the given moments.
pub fn radius_and_angles(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, ridge: f64) -> (f64, Vec<f64>) {
    let w = sym_inv_sqrt(sigma, ridge).unwrap() * (x - mu);
    let r = w.norm();
    let v: Vec<f64> = w.iter().map(|c| c / r).collect();
    (r, sphere_to_angles(&v).unwrap())
}
