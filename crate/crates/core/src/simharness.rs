//! Seeded generators for null and skewed alternative samples, a Monte Carlo
//! runner for rejection rates, and a Box-Cox power transform.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::nulldist::{run_test, TestConfig};
use crate::standardize::{sym_sqrt, SampleMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    NullGaussian,
    AltChisq { df: u32 },
}

impl ScenarioKind {
    pub fn label(&self) -> String {
        match self {
            ScenarioKind::NullGaussian => "null".to_string(),
            ScenarioKind::AltChisq { df } => format!("alt{df}"),
        }
    }

    pub fn df(&self) -> Option<u32> {
        match self {
            ScenarioKind::NullGaussian => None,
            ScenarioKind::AltChisq { df } => Some(*df),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub d: usize,
    pub master_seed: u64,
}

impl Scenario {
    pub fn generate(&self, rng: &mut impl Rng) -> Result<SampleMatrix> {
        match self.kind {
            ScenarioKind::NullGaussian => gen_null_sample(self.n, self.d, rng),
            ScenarioKind::AltChisq { df } => gen_alt_sample(self.n, self.d, df, rng),
        }
    }

    /// The sample of replicate `index`, as drawn by [`run_experiment`].
    pub fn generate_replicate(&self, index: u64) -> Result<SampleMatrix> {
        check_shape(self.n, self.d)?;
        self.generate(&mut ChaCha8Rng::seed_from_u64(child_seed(self.master_seed, index)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub reps: usize,
    pub alpha: f64,
    /// p-values of successful replicates, in replicate order.
    pub p_values: Vec<f64>,
    /// Replicate index of each entry in `p_values`.
    pub replicates: Vec<usize>,
    pub failures: Vec<ReplicateFailure>,
    /// Share of successful replicates with `p < alpha`.
    pub rejection_rate: f64,
}

impl ExperimentReport {
    pub fn succeeded(&self) -> usize {
        self.p_values.len()
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// `Q diag(lambda) Q'` with `lambda_k ~ U[1, 10]` and Haar-distributed `Q`.
pub fn random_covariance(d: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
    }
    let lambdas = DVector::from_fn(d, |_, _| rng.random_range(1.0..=10.0));
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..d {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    let mut scaled = q.clone();
    for (mut col, l) in scaled.column_iter_mut().zip(lambdas.iter()) {
        col *= *l;
    }
    let sigma = scaled * q.transpose();
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// A generated sample with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub sample: SampleMatrix,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Innovations `Z` before the affine map, one row per observation.
    pub innovations: DMatrix<f64>,
    /// Coordinates replaced by centered chi-square draws.
    pub skewed: Vec<usize>,
}

fn check_shape(n: usize, d: usize) -> Result<()> {
    if d < 2 || n <= d {
        return Err(Error::Domain(format!("need n > d >= 2, got n={n}, d={d}")));
    }
    Ok(())
}

fn assemble(mu: DVector<f64>, sigma: DMatrix<f64>, z: DMatrix<f64>, skewed: Vec<usize>) -> Result<GeneratedSample> {
    let root = sym_sqrt(&sigma, 0.0)?;
    let mut x = &z * &root;
    for mut row in x.row_iter_mut() {
        row += mu.transpose();
    }
    Ok(GeneratedSample {
        sample: SampleMatrix::new(x)?,
        mu,
        sigma,
        innovations: z,
        skewed,
    })
}

pub fn gen_null_sample_detailed(n: usize, d: usize, rng: &mut impl Rng) -> Result<GeneratedSample> {
    check_shape(n, d)?;
    let mu = DVector::from_fn(d, |_, _| 10.0 * rng.sample::<f64, _>(StandardNormal));
    let sigma = random_covariance(d, rng)?;
    let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    assemble(mu, sigma, z, Vec::new())
}

pub fn gen_null_sample(n: usize, d: usize, rng: &mut impl Rng) -> Result<SampleMatrix> {
    Ok(gen_null_sample_detailed(n, d, rng)?.sample)
}

/// Skewed alternative. `force_no_skew` empties the replaced subset.
pub fn gen_alt_sample_detailed(
    n: usize,
    d: usize,
    df: u32,
    rng: &mut impl Rng,
    force_no_skew: bool,
) -> Result<GeneratedSample> {
    check_shape(n, d)?;
    if df == 0 {
        return Err(Error::Domain("chi-square degrees of freedom must be >= 1".into()));
    }
    let beta = Beta::new(0.5, 0.5).map_err(|e| Error::Domain(e.to_string()))?;
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Domain(e.to_string()))?;

    let mu = DVector::from_fn(d, |_, _| 40.0 * beta.sample(rng) - 20.0);
    let sigma = random_covariance(d, rng)?;
    let mut skewed = if force_no_skew {
        Vec::new()
    } else {
        sample_indices(rng, d, d.div_ceil(3)).into_vec()
    };
    skewed.sort_unstable();

    let mut z = DMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            z[(i, k)] = if skewed.binary_search(&k).is_ok() {
                chi.sample(rng) - df as f64
            } else {
                2.0 * rng.sample::<f64, _>(StandardNormal)
            };
        }
    }
    assemble(mu, sigma, z, skewed)
}

pub fn gen_alt_sample(n: usize, d: usize, df: u32, rng: &mut impl Rng) -> Result<SampleMatrix> {
    Ok(gen_alt_sample_detailed(n, d, df, rng, false)?.sample)
}

pub fn run_experiment(s: &Scenario, reps: usize, alpha: f64, config: &TestConfig) -> Result<ExperimentReport> {
    if reps == 0 {
        return Err(Error::Domain("reps must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    check_shape(s.n, s.d)?;

    let outcomes = exec::map_indexed(config.exec, reps, |r| {
        s.generate_replicate(r as u64)
            .and_then(|x| run_test(&x, config))
            .map(|t| t.p_value)
    });

    let mut p_values = Vec::with_capacity(reps);
    let mut replicates = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (replicate, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(p) => {
                p_values.push(p);
                replicates.push(replicate);
            }
            Err(e) => failures.push(ReplicateFailure {
                replicate,
                message: e.to_string(),
            }),
        }
    }
    let rejected = p_values.iter().filter(|p| **p < alpha).count();
    let rejection_rate = if p_values.is_empty() {
        f64::NAN
    } else {
        rejected as f64 / p_values.len() as f64
    };
    Ok(ExperimentReport {
        scenario: *s,
        reps,
        alpha,
        p_values,
        replicates,
        failures,
        rejection_rate,
    })
}

fn check_positive(column: &[f64]) -> Result<()> {
    if column.is_empty() {
        return Err(Error::Domain("column is empty".into()));
    }
    if let Some(i) = column.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!(
            "Box-Cox needs positive finite values, entry {i} is {}",
            column[i]
        )));
    }
    Ok(())
}

/// Grid points `lambda = k / 1000` for `k` in `-2000..=2000`.
const BOXCOX_STEPS: i32 = 2000;
pub const BOXCOX_STEP: f64 = 1e-3;

fn boxcox_value(ln_x: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        ln_x
    } else {
        (lambda * ln_x).exp_m1() / lambda
    }
}

/// Maximizer of the Gaussian profile log-likelihood over `[-2, 2]`.
pub fn boxcox_fit(column: &[f64]) -> Result<f64> {
    check_positive(column)?;
    if column.iter().all(|x| *x == column[0]) {
        return Err(Error::Domain("Box-Cox undefined for a constant column".into()));
    }
    let n = column.len() as f64;
    let logs: Vec<f64> = column.iter().map(|x| x.ln()).collect();
    let sum_log: f64 = logs.iter().sum();

    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in -BOXCOX_STEPS..=BOXCOX_STEPS {
        let lambda = k as f64 / 1000.0;
        let mean = logs.iter().map(|l| boxcox_value(*l, lambda)).sum::<f64>() / n;
        let var = logs
            .iter()
            .map(|l| (boxcox_value(*l, lambda) - mean).powi(2))
            .sum::<f64>()
            / n;
        if !(var > 0.0) {
            continue;
        }
        let ll = -0.5 * n * var.ln() + (lambda - 1.0) * sum_log;
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return Err(Error::Numeric("Box-Cox likelihood is not finite on the grid".into()));
    }
    Ok(best.1)
}

pub fn boxcox_apply(column: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_positive(column)?;
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be finite, got {lambda}")));
    }
    Ok(column.iter().map(|x| boxcox_value(x.ln(), lambda)).collect())
}
