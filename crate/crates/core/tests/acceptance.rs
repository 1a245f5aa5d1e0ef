//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

mod common;

use std::time::Instant;

use common::{
    brute_force_statistic, draw_p0, gaussian_sample, materialized_mtm, mean_se, mixture_moments, radius_and_angles,
};
use ellipkit::embedstat::{
    angle_interval, build_gram_pair, p0_double_integral, p0_single_integral, test_statistic, theta_marginal_density,
};
use ellipkit::kernels::{k_theta, KernelSpec};
use ellipkit::nulldist::{build_mtm, coeffs_abc, influence_mu_sigma, influence_u_theta, null_eigenvalues, TestConfig};
use ellipkit::numquad::{imhof_tail, integrate1d, WeightSpectrum};
use ellipkit::polar::{angles_to_sphere, dg_dv, sphere_to_angles};
use ellipkit::simharness::{run_experiment, Scenario, ScenarioKind};
use ellipkit::standardize::{sample_moments, standardize_sample};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const RIDGE: f64 = 1e-6;
const ALPHA: f64 = 0.1;
const SEED: u64 = 2024;

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn rate(kind: ScenarioKind, n: usize, d: usize, reps: usize) -> (f64, usize, f64) {
    let s = Scenario {
        kind,
        n,
        d,
        master_seed: SEED,
    };
    let start = Instant::now();
    let r = run_experiment(&s, reps, ALPHA, &TestConfig::default()).expect("experiment");
    (r.rejection_rate, r.failures.len(), start.elapsed().as_secs_f64())
}

fn type_one_error(rep: &mut Report) {
    let (r, fails, secs) = rate(ScenarioKind::NullGaussian, 500, 3, 100);
    rep.record(
        "type-I error n=500 d=3",
        r <= 0.15,
        format!("rejection rate {r:.3} (<= 0.15), {fails} failed replicates, {secs:.0}s"),
    );
    let (r, fails, secs) = rate(ScenarioKind::NullGaussian, 200, 3, 50);
    rep.record(
        "type-I error n=200 d=3 (fast)",
        r <= 0.2 && secs <= 300.0,
        format!("rejection rate {r:.3} (<= 0.2), {fails} failed replicates, {secs:.0}s (<= 300s)"),
    );
}

fn power_and_ordering(rep: &mut Report) {
    let (r2, f2, s2) = rate(ScenarioKind::AltChisq { df: 2 }, 500, 3, 100);
    let (r10, f10, s10) = rate(ScenarioKind::AltChisq { df: 4 }, 500, 10, 100);
    rep.record(
        "power chi2(2) n=500 d=3",
        r2 >= 0.85,
        format!("rejection rate {r2:.3} (>= 0.85), {f2} failed replicates, {s2:.0}s"),
    );
    rep.record(
        "power chi2(4) n=500 d=10",
        r10 >= 0.80,
        format!("rejection rate {r10:.3} (>= 0.80), {f10} failed replicates, {s10:.0}s"),
    );

    let (r3, _, _) = rate(ScenarioKind::AltChisq { df: 4 }, 500, 3, 100);
    let (r15, f15, s15) = rate(ScenarioKind::AltChisq { df: 4 }, 500, 15, 100);
    rep.record(
        "power ordering chi2(4) d=3 vs d=15",
        r3 >= r15 - 0.05,
        format!("d=3 rate {r3:.3}, d=15 rate {r15:.3} ({f15} failed, {s15:.0}s)"),
    );
}

fn statistic_oracle(rep: &mut Report) {
    let mut worst = 0.0_f64;
    for k in 0..20u64 {
        let d = 2 + (k % 2) as usize;
        let x = gaussian_sample(100 + k, 30, d);
        let std = standardize_sample(&x, RIDGE).unwrap();
        let su = KernelSpec::gaussian(0.5 + 0.05 * k as f64).unwrap();
        let st = KernelSpec::gaussian(0.3 + 0.03 * k as f64).unwrap();
        let g = build_gram_pair(&std, &su, &st).unwrap();
        let fast = test_statistic(&g, 30).unwrap();
        let slow = brute_force_statistic(&x, &su, &st, RIDGE);
        worst = worst.max((fast - slow).abs());
    }
    rep.record(
        "statistic vs double sum",
        worst <= 1e-10,
        format!("max abs difference {worst:.2e} (<= 1e-10) over 20 datasets"),
    );
}

fn null_matrix_oracle(rep: &mut Report) {
    let x = gaussian_sample(7, 20, 3);
    let su = KernelSpec::gaussian(0.7).unwrap();
    let st = KernelSpec::gaussian(0.35).unwrap();
    let std = standardize_sample(&x, RIDGE).unwrap();
    let g = build_gram_pair(&std, &su, &st).unwrap();
    let structured = build_mtm(&std, &g, &su, &st, RIDGE).unwrap();
    let explicit = materialized_mtm(&x, &su, &st, RIDGE);
    let diff = (&structured - &explicit).amax();
    let spectrum = null_eigenvalues(&structured).unwrap();
    let trace_gap = (spectrum.sum() - structured.trace()).abs();
    rep.record(
        "null matrix vs materialized n=20 d=3",
        diff <= 1e-8 && trace_gap <= 1e-8,
        format!("max abs difference {diff:.2e}, |sum eigenvalues - trace| {trace_gap:.2e} (<= 1e-8)"),
    );
}

fn rel_err(fd: &DVector<f64>, an: &DVector<f64>) -> f64 {
    (fd - an).norm() / an.norm().max(1e-12)
}

fn influence_fd(rep: &mut Report) {
    let eps = 1e-6;
    let mut worst = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for d in [2, 3] {
        let x = gaussian_sample(40 + d as u64, 50, d);
        let (mu, sigma) = sample_moments(&x);
        for _ in 0..10 {
            let xi = x.matrix().row(rng.random_range(0..50)).transpose();
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * 1.5);
            let (mu_f, sigma_f) = mixture_moments(&mu, &sigma, &z, eps);
            let (ms, ss) = influence_mu_sigma(&z, &mu, &sigma).unwrap();
            worst = worst.max(rel_err(&((&mu_f - &mu) / eps), &ms));
            let fd_sigma = (&sigma_f - &sigma) / eps;
            worst = worst.max(rel_err(&DVector::from_column_slice(fd_sigma.as_slice()), &ss));

            let c = coeffs_abc(&xi, &mu, &sigma, RIDGE).unwrap();
            let (us, ts) = influence_u_theta(&c, &ms, &ss).unwrap();
            let (u0, t0) = radius_and_angles(&xi, &mu, &sigma, RIDGE);
            let (u1, t1) = radius_and_angles(&xi, &mu_f, &sigma_f, RIDGE);
            worst = worst.max(((u1 - u0) / eps - us).abs() / us.abs().max(1e-12));
            let fd_t = DVector::from_iterator(d - 1, t1.iter().zip(&t0).map(|(a, b)| (a - b) / eps));
            worst = worst.max(rel_err(&fd_t, &ts));
        }
    }
    rep.record(
        "influence functions vs mixture difference",
        worst < 1e-3,
        format!("max relative error {worst:.2e} (< 1e-3) over 20 probes"),
    );
}

fn polar_checks(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_trip = 0.0_f64;
    let mut worst_jac = 0.0_f64;
    for k in 0..10_000 {
        let d = 2 + k % 9;
        let v = loop {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            if z.norm() > 1e-3 {
                break z.normalize();
            }
        };
        let theta = sphere_to_angles(v.as_slice()).unwrap();
        let back = angles_to_sphere(&theta).unwrap();
        worst_trip = worst_trip.max((&back - &v).amax());

        if k % 10 == 0 {
            let jac = dg_dv(v.as_slice()).unwrap();
            let h = 1e-6;
            let mut fd = DMatrix::zeros(d - 1, d);
            for c in 0..d {
                let (mut p, mut m) = (v.clone(), v.clone());
                p[c] += h;
                m[c] -= h;
                let tp = sphere_to_angles(p.as_slice()).unwrap();
                let tm = sphere_to_angles(m.as_slice()).unwrap();
                for r in 0..d - 1 {
                    fd[(r, c)] = (tp[r] - tm[r]) / (2.0 * h);
                }
            }
            worst_jac = worst_jac.max((&fd - &jac).norm() / jac.norm());
        }
    }
    rep.record(
        "polar round trip",
        worst_trip <= 1e-10,
        format!("max abs error {worst_trip:.2e} (<= 1e-10) over 10000 directions"),
    );
    rep.record(
        "polar Jacobian",
        worst_jac < 1e-5,
        format!("max relative error {worst_jac:.2e} (< 1e-5) over 1000 directions"),
    );
}

fn imhof_checks(rep: &mut Report) {
    let chi = ChiSquared::new(1.0).unwrap();
    let one = WeightSpectrum::new(vec![1.0]).unwrap();
    let mut worst = 0.0_f64;
    for x in [0.016, 0.1, 0.45, 1.0, 1.64, 2.71, 3.84, 5.02, 6.63, 10.83] {
        worst = worst.max((imhof_tail(&one, x, 1e-6).unwrap() - chi.sf(x)).abs());
    }

    let weights = [0.5, 0.3, 0.2];
    let spectrum = WeightSpectrum::new(weights.to_vec()).unwrap();
    let quantiles = [0.2, 0.6, 1.2, 2.0, 3.0];
    let mut exceed = [0usize; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let draws = 10_000_000;
    for _ in 0..draws {
        let q: f64 = weights
            .iter()
            .map(|w| w * rng.sample::<f64, _>(StandardNormal).powi(2))
            .sum();
        for (e, x) in exceed.iter_mut().zip(quantiles) {
            *e += (q > x) as usize;
        }
    }
    let mut worst_mc = 0.0_f64;
    for (e, x) in exceed.iter().zip(quantiles) {
        worst_mc = worst_mc.max((imhof_tail(&spectrum, x, 1e-6).unwrap() - *e as f64 / draws as f64).abs());
    }
    rep.record(
        "Imhof vs chi-square(1)",
        worst <= 1e-4,
        format!("max abs error {worst:.2e} (<= 1e-4) at 10 quantiles"),
    );
    rep.record(
        "Imhof vs Monte Carlo",
        worst_mc <= 0.003,
        format!("max abs error {worst_mc:.2e} (<= 0.003), 1e7 draws"),
    );
}

fn p0_checks(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let draws = 10_000_000;
    let mut worst_z = 0.0_f64;
    for d in [2, 3, 5] {
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let anchor = draw_p0(&mut rng, d);
        let (mut s1, mut q1, mut s2, mut q2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..draws {
            let a = draw_p0(&mut rng, d);
            let b = draw_p0(&mut rng, d);
            let k1 = k_theta(&spec, &anchor, &a).unwrap();
            let k2 = k_theta(&spec, &a, &b).unwrap();
            s1 += k1;
            q1 += k1 * k1;
            s2 += k2;
            q2 += k2 * k2;
        }
        let (m1, se1) = mean_se(s1, q1, draws);
        let (m2, se2) = mean_se(s2, q2, draws);
        let single = p0_single_integral(&spec, d, &anchor).unwrap();
        let double = p0_double_integral(&spec, d).unwrap();
        worst_z = worst_z.max((single - m1).abs() / se1).max((double - m2).abs() / se2);
    }
    rep.record(
        "P0 integrals vs Monte Carlo",
        worst_z <= 3.0,
        format!("max deviation {worst_z:.2} SE (<= 3) for d in {{2,3,5}}"),
    );

    let mut worst = 0.0_f64;
    for d in 2..=20 {
        for j in 1..d {
            let (a, b) = angle_interval(j, d);
            let mass = integrate1d(|t| theta_marginal_density(j, d, t).unwrap_or(0.0), a, b, 1e-12)
                .unwrap()
                .value;
            worst = worst.max((mass - 1.0).abs());
        }
    }
    rep.record(
        "angle marginals integrate to one",
        worst <= 1e-8,
        format!("max |mass - 1| {worst:.2e} (<= 1e-8) for d <= 20"),
    );
}

fn main() {
    let mut rep = Report { failed: 0 };
    statistic_oracle(&mut rep);
    null_matrix_oracle(&mut rep);
    influence_fd(&mut rep);
    polar_checks(&mut rep);
    imhof_checks(&mut rep);
    p0_checks(&mut rep);
    type_one_error(&mut rep);
    power_and_ordering(&mut rep);
    if rep.failed > 0 {
        println!("{} acceptance criteria failed", rep.failed);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
