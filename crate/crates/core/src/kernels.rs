//! Characteristic kernels on radii and angle vectors.
//!
//! Both families are translation invariant and bounded by one. On angle
//! vectors the kernel is the product of scalar factors, which for the
//! Gaussian family equals `exp(-gamma ||theta - theta'||^2)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    /// Inverse quadratic `1 / (1 + gamma t^2)`.
    Piq,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Piq => "piq",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "piq" => Ok(KernelFamily::Piq),
            other => Err(Error::Domain(format!("unknown kernel family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!(
                "kernel gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { family, gamma })
    }

    pub fn gaussian(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, gamma)
    }

    pub fn piq(gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::Piq, gamma)
    }

    /// Scalar kernel value at `u - u'`.
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let t = u - v;
        match self.family {
            KernelFamily::Gaussian => (-self.gamma * t * t).exp(),
            KernelFamily::Piq => 1.0 / (1.0 + self.gamma * t * t),
        }
    }

    /// Derivative of [`KernelSpec::eval`] in its second argument.
    #[inline]
    pub fn d2(&self, u: f64, v: f64) -> f64 {
        let t = u - v;
        match self.family {
            KernelFamily::Gaussian => 2.0 * self.gamma * t * (-self.gamma * t * t).exp(),
            KernelFamily::Piq => {
                let q = 1.0 + self.gamma * t * t;
                2.0 * self.gamma * t / (q * q)
            }
        }
    }

    /// `d2 / eval`, the log-derivative in the second argument.
    #[inline]
    pub fn log_d2(&self, u: f64, v: f64) -> f64 {
        let t = u - v;
        match self.family {
            KernelFamily::Gaussian => 2.0 * self.gamma * t,
            KernelFamily::Piq => 2.0 * self.gamma * t / (1.0 + self.gamma * t * t),
        }
    }
}

pub fn k_u(spec: &KernelSpec, u: f64, u2: f64) -> f64 {
    spec.eval(u, u2)
}

pub fn k_u_d2(spec: &KernelSpec, u: f64, u2: f64) -> f64 {
    spec.d2(u, u2)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "angle vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn k_theta(spec: &KernelSpec, theta: &[f64], theta2: &[f64]) -> Result<f64> {
    check_lengths(theta, theta2)?;
    Ok(theta.iter().zip(theta2).map(|(a, b)| spec.eval(*a, *b)).product())
}

pub fn k_theta_grad2(spec: &KernelSpec, theta: &[f64], theta2: &[f64]) -> Result<Vec<f64>> {
    check_lengths(theta, theta2)?;
    let factors: Vec<f64> = theta.iter().zip(theta2).map(|(a, b)| spec.eval(*a, *b)).collect();
    Ok((0..theta.len())
        .map(|r| {
            let others: f64 = factors
                .iter()
                .enumerate()
                .filter(|(s, _)| *s != r)
                .map(|(_, f)| f)
                .product();
            spec.d2(theta[r], theta2[r]) * others
        })
        .collect())
}

/// `gamma = 1 / m^2` where `m` is the mean pairwise Euclidean distance.
pub fn bandwidth_heuristic<P: AsRef<[f64]>>(points: &[P]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 points, got {n}")));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::Domain("points have inconsistent dimensions".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = points[i].as_ref();
        for b in &points[i + 1..] {
            let sq: f64 = a.iter().zip(b.as_ref()).map(|(x, y)| (x - y) * (x - y)).sum();
            total += sq.sqrt();
        }
    }
    let mean = total / (n * (n - 1) / 2) as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(1.0 / (mean * mean))
}
