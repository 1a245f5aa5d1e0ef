//! Adaptive quadrature on finite intervals and rectangles, and upper-tail
//! probabilities of weighted sums of independent chi-square(1) variables.
//!
//! The one-dimensional rule is a globally adaptive 21-point Gauss-Kronrod
//! scheme: the segment with the largest error estimate is bisected until the
//! summed estimate drops below the absolute tolerance. Rectangles are handled
//! as iterated one-dimensional integrals.
//!
//! Tail probabilities `P(sum_i lambda_i Z_i^2 > x)` are computed by numerical
//! inversion of the characteristic function:
//!
//! ```text
//! P = 1/2 + (1/pi) * int_0^inf sin(theta(u)) / (u rho(u)) du
//! theta(u) = 1/2 sum_i atan(lambda_i u) - x u / 2
//! rho(u)   = prod_i (1 + lambda_i^2 u^2)^(1/4)
//! ```

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Default absolute tolerance for [`integrate1d`] and [`integrate2d`].
pub const DEFAULT_TOL: f64 = 1e-8;

/// Maximum number of integrand evaluations per call.
pub const EVAL_BUDGET: usize = 1_000_000;

/// Weights below this fraction of the largest weight are discarded before
/// inversion.
pub const RELATIVE_WEIGHT_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn eval_checked<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::IntegrationFailure { abscissa: x })
    }
}

/// 21-point Kronrod estimate on `[a, b]` with the QUADPACK error heuristic.
fn kronrod21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let f_center = eval_checked(f, center)?;

    let mut gauss = 0.0;
    let mut kronrod = WGK[10] * f_center;
    let mut abs_sum = kronrod.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval_checked(f, center - dx)?;
        let f2 = eval_checked(f, center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * kronrod;
    let mut asc = WGK[10] * (f_center - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let result = kronrod * half;
    let res_abs = abs_sum * half.abs();
    let res_asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    let round_off = 50.0 * f64::EPSILON * res_abs;
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(round_off);
    }

    Ok(Segment {
        a,
        b,
        value: result,
        error,
    })
}

fn check_interval(a: f64, b: f64, tol: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::Domain(format!(
            "integration interval [{a}, {b}] must be finite with a < b"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<QuadResult> {
    integrate_panels(&f, a, b, 1, tol, EVAL_BUDGET)
}

/// Adaptive integration starting from `panels` equal subintervals.
pub(crate) fn integrate_panels<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    panels: usize,
    tol: f64,
    budget: usize,
) -> Result<QuadResult> {
    check_interval(a, b, tol)?;
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let breaks: Vec<f64> = (0..=panels)
        .map(|p| if p == panels { b } else { a + width * p as f64 })
        .collect();
    integrate_breaks(f, &breaks, tol, budget)
}

/// Adaptive integration over `[breaks[0], breaks[last]]` starting from the
/// segments between consecutive (increasing) break points. Useful for
/// oscillatory integrands where a single initial segment would be too coarse.
pub(crate) fn integrate_breaks<F: Fn(f64) -> f64>(
    f: &F,
    breaks: &[f64],
    tol: f64,
    budget: usize,
) -> Result<QuadResult> {
    let (Some(&a), Some(&b)) = (breaks.first(), breaks.last()) else {
        return Err(Error::Domain("at least two break points are required".into()));
    };
    check_interval(a, b, tol)?;
    if breaks.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("break points must be strictly increasing".into()));
    }
    let panels = breaks.len() - 1;
    let mut evaluations = 0usize;
    if panels.saturating_mul(21) > budget {
        return Err(Error::BudgetExceeded {
            budget,
            error_estimate: f64::INFINITY,
        });
    }

    let mut heap = BinaryHeap::with_capacity(panels * 2);
    for w in breaks.windows(2) {
        heap.push(kronrod21(f, w[0], w[1])?);
        evaluations += 21;
    }

    let mut error: f64 = heap.iter().map(|s| s.error).sum();
    loop {
        if error <= tol {
            // Re-sum exactly; the running total accumulates rounding.
            let (value, exact) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
            if exact <= tol {
                return Ok(QuadResult {
                    value,
                    abs_error_estimate: exact,
                    evaluations,
                });
            }
            error = exact;
        }
        if evaluations + 42 > budget {
            return Err(Error::BudgetExceeded {
                budget,
                error_estimate: error,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Segment cannot be split further in double precision.
            return Err(Error::BudgetExceeded {
                budget,
                error_estimate: error,
            });
        }
        let left = kronrod21(f, worst.a, mid)?;
        let right = kronrod21(f, mid, worst.b)?;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        evaluations += 42;
    }
}

/// Integrates `f(x, y)` over the rectangle `[x0, x1] x [y0, y1]` as an
/// iterated integral. Half of `tol` goes to the outer integral and half,
/// spread over the outer width, to each inner integral.
pub fn integrate2d<F: Fn(f64, f64) -> f64>(
    f: F,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    tol: f64,
) -> Result<QuadResult> {
    check_interval(x0, x1, tol)?;
    check_interval(y0, y1, tol)?;

    let inner_tol = 0.5 * tol / (x1 - x0);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let inner_evals = RefCell::new(0usize);
    let inner_err = RefCell::new(0.0f64);

    let outer = |x: f64| -> f64 {
        if failure.borrow().is_some() {
            return 0.0;
        }
        let used = *inner_evals.borrow();
        let remaining = EVAL_BUDGET.saturating_sub(used);
        match integrate_panels(&|y| f(x, y), y0, y1, 1, inner_tol, remaining) {
            Ok(r) => {
                *inner_evals.borrow_mut() += r.evaluations;
                let mut e = inner_err.borrow_mut();
                *e = e.max(r.abs_error_estimate);
                r.value
            }
            Err(err) => {
                *failure.borrow_mut() = Some(err);
                0.0
            }
        }
    };

    let result = integrate_panels(&outer, x0, x1, 1, 0.5 * tol, EVAL_BUDGET);
    if let Some(err) = failure.into_inner() {
        return Err(err);
    }
    let outer = result?;
    let evaluations = inner_evals.into_inner();
    if evaluations > EVAL_BUDGET {
        return Err(Error::BudgetExceeded {
            budget: EVAL_BUDGET,
            error_estimate: outer.abs_error_estimate,
        });
    }
    Ok(QuadResult {
        value: outer.value,
        abs_error_estimate: outer.abs_error_estimate + (x1 - x0) * inner_err.into_inner(),
        evaluations: evaluations.max(1),
    })
}

/// Non-negative weights `lambda_i` of a quadratic form `sum_i lambda_i Z_i^2`,
/// kept in descending order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightSpectrum {
    lambdas: Vec<f64>,
}

impl WeightSpectrum {
    pub fn new(mut lambdas: Vec<f64>) -> Result<Self> {
        if let Some(bad) = lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(Error::Domain(format!(
                "weights must be finite and non-negative, got {bad}"
            )));
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { lambdas })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.lambdas.first().copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// Weights that survive the relative cutoff.
    fn effective(&self) -> Result<Vec<f64>> {
        let top = self.max();
        if !(top > 0.0) {
            return Err(Error::DegenerateSpectrum);
        }
        let cutoff = RELATIVE_WEIGHT_CUTOFF * top;
        Ok(self.lambdas.iter().copied().filter(|&l| l >= cutoff).collect())
    }
}

struct Inversion<'a> {
    lambdas: &'a [f64],
    x: f64,
}

impl Inversion<'_> {
    fn phase(&self, u: f64) -> f64 {
        0.5 * self.lambdas.iter().map(|l| (l * u).atan()).sum::<f64>() - 0.5 * self.x * u
    }

    fn phase_slope(&self, u: f64) -> f64 {
        0.5 * self.lambdas.iter().map(|l| l / (1.0 + l * l * u * u)).sum::<f64>() - 0.5 * self.x
    }

    fn ln_rho(&self, u: f64) -> f64 {
        0.25 * self.lambdas.iter().map(|l| (l * l * u * u).ln_1p()).sum::<f64>()
    }

    fn integrand(&self, u: f64) -> f64 {
        if u == 0.0 {
            return self.phase_slope(0.0);
        }
        self.phase(u).sin() / (u * self.ln_rho(u).exp())
    }

    /// Smallest cutoff for which `|sin| <= 1` and `rho(u) >= prod_{i<=m}
    /// (lambda_i u)^(1/2)` bound the neglected tail (divided by pi) by
    /// `target`, minimised over the number `m` of leading weights used.
    fn absolute_cutoff(&self, target: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut half_log_prod = 0.0;
        for (i, l) in self.lambdas.iter().enumerate() {
            let m = (i + 1) as f64;
            half_log_prod += 0.5 * l.ln();
            let ln_u = (2.0 / m) * (-(PI * m / 2.0).ln() - half_log_prod - target.ln());
            best = best.min(ln_u.exp());
        }
        best
    }

    /// Tail bound from one integration by parts, valid once the phase is
    /// strictly decreasing: `2 / (pi |theta'(U)| U rho(U))`.
    fn oscillatory_bound(&self, u: f64) -> f64 {
        let slope = self.phase_slope(u);
        if slope >= 0.0 {
            return f64::INFINITY;
        }
        2.0 / (PI * slope.abs() * u * self.ln_rho(u).exp())
    }

    fn oscillatory_cutoff(&self, target: f64, limit: f64) -> f64 {
        if self.x <= 0.0 {
            return f64::INFINITY;
        }
        // theta' is decreasing in u; find where it turns negative.
        let mut hi = 1.0 / self.lambdas[0];
        while self.phase_slope(hi) >= 0.0 {
            hi *= 2.0;
            if hi > limit {
                return f64::INFINITY;
            }
        }
        while self.oscillatory_bound(hi) > target {
            hi *= 2.0;
            if hi > limit {
                return f64::INFINITY;
            }
        }
        let mut lo = hi / 2.0;
        if self.oscillatory_bound(lo) <= target {
            return lo;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.oscillatory_bound(mid) <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// `P(sum_i lambda_i Z_i^2 > x)` for independent standard normal `Z_i`,
/// accurate to roughly `tol` in absolute terms.
pub fn imhof_tail(spectrum: &WeightSpectrum, x: f64, tol: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("quantile must be finite and >= 0, got {x}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let lambdas = spectrum.effective()?;
    if x == 0.0 {
        return Ok(1.0);
    }

    let inv = Inversion { lambdas: &lambdas, x };
    // Half of the tolerance (in probability units) for the neglected tail.
    let target = 0.5 * tol;
    let absolute = inv.absolute_cutoff(target);
    let cutoff = absolute.min(inv.oscillatory_cutoff(target, absolute));
    if !cutoff.is_finite() {
        return Err(Error::BudgetExceeded {
            budget: EVAL_BUDGET,
            error_estimate: f64::INFINITY,
        });
    }

    // Break points a quarter turn of the phase apart. The slope bound
    // `s(u) = (sum_i lambda_i / (1 + lambda_i^2 u^2) + x) / 2` is decreasing,
    // so its value at the left end bounds the slope over the whole segment.
    let mut breaks = vec![0.0];
    let mut u = 0.0;
    while u < cutoff {
        if breaks.len() * 21 > EVAL_BUDGET {
            return Err(Error::BudgetExceeded {
                budget: EVAL_BUDGET,
                error_estimate: f64::INFINITY,
            });
        }
        let slope = inv.phase_slope(u) + x;
        u = (u + 0.5 * PI / slope).min(cutoff);
        breaks.push(u);
    }

    let integral = integrate_breaks(&|u| inv.integrand(u), &breaks, 0.5 * tol * PI, EVAL_BUDGET)?;
    let p = 0.5 + integral.value / PI;
    Ok(p.clamp(0.0, 1.0))
}
