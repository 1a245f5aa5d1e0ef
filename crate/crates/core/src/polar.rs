//! Polar coordinates on the unit sphere `S^{d-1}`.
//!
//! A unit vector `v` in `R^d` maps to an angle vector `theta` of length
//! `d - 1` with `theta_j` in `(-pi/2, pi/2]` for `j < d - 1` and the last
//! angle in `(-pi, pi]`:
//!
//! ```text
//! v_1 = sin(theta_1)
//! v_j = cos(theta_1) ... cos(theta_{j-1}) sin(theta_j)      2 <= j <= d-1
//! v_d = cos(theta_1) ... cos(theta_{d-1})
//! ```
//!
//! The inverse uses the tail norms `S_j = ||(v_j, ..., v_d)||`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tail norms below this make the polar Jacobian singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Four-quadrant arc tangent of `y / x` with values in `(-pi, pi]`.
pub fn arctan_xy(x: f64, y: f64) -> Result<f64> {
    if x > 0.0 {
        Ok((y / x).atan())
    } else if x < 0.0 {
        if y >= 0.0 {
            Ok((y / x).atan() + PI)
        } else {
            Ok((y / x).atan() - PI)
        }
    } else if y > 0.0 {
        Ok(FRAC_PI_2)
    } else if y < 0.0 {
        Ok(-FRAC_PI_2)
    } else {
        Err(Error::UndefinedAngle)
    }
}

/// Whether `theta` lies in the angle box for dimension `theta.len() + 1`.
pub fn in_angle_box(theta: &[f64]) -> bool {
    let Some((last, head)) = theta.split_last() else {
        return false;
    };
    head.iter().all(|t| *t > -FRAC_PI_2 && *t <= FRAC_PI_2) && *last > -PI && *last <= PI
}

pub fn angles_to_sphere(theta: &[f64]) -> Result<DVector<f64>> {
    if theta.is_empty() {
        return Err(Error::Domain("angle vector must have length >= 1".into()));
    }
    if !in_angle_box(theta) {
        return Err(Error::Domain(format!("angles {theta:?} outside the angle box")));
    }
    let d = theta.len() + 1;
    let mut v = DVector::zeros(d);
    let mut cos_prod = 1.0;
    for (j, t) in theta.iter().enumerate() {
        v[j] = cos_prod * t.sin();
        cos_prod *= t.cos();
    }
    v[d - 1] = cos_prod;
    Ok(v)
}

/// `S_j = ||(v_j, ..., v_d)||` for `j = 1..d` (zero-based index `j - 1`).
pub fn tail_norms(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut sq = vec![0.0; d];
    let mut acc = 0.0;
    for j in (0..d).rev() {
        acc += v[j] * v[j];
        sq[j] = acc;
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Inverse of [`angles_to_sphere`].
///
/// Directions with vanishing tail norms are mapped deterministically: once
/// `S_{j+1} = 0` the remaining coordinates after `v_j` are zero, so
/// `theta_j = +-pi/2` and every later angle is set to `0`.
pub fn sphere_to_angles(v: &[f64]) -> Result<Vec<f64>> {
    let d = v.len();
    if d < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("direction has non-finite entries".into()));
    }
    let s = tail_norms(v);
    if s[0] == 0.0 {
        return Err(Error::Domain("zero vector has no direction".into()));
    }

    let mut theta = vec![0.0; d - 1];
    for j in 0..d - 2 {
        if s[j] == 0.0 {
            break;
        }
        theta[j] = arctan_xy(s[j + 1], v[j])?;
    }
    if s[d - 2] > 0.0 {
        theta[d - 2] = arctan_xy(v[d - 1], v[d - 2])?;
    }
    Ok(theta)
}

/// Jacobian `d theta / d v^T` of [`sphere_to_angles`], a `(d-1) x d` matrix.
pub fn dg_dv(v: &[f64]) -> Result<DMatrix<f64>> {
    let d = v.len();
    if d < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {d}")));
    }
    let s = tail_norms(v);
    for (j, sj) in s.iter().enumerate().take(d - 1) {
        if *sj <= SINGULAR_TOL {
            return Err(Error::SingularJacobian {
                index: j + 1,
                value: *sj,
            });
        }
    }

    let mut jac = DMatrix::zeros(d - 1, d);
    for j in 0..d - 2 {
        let sj2 = s[j] * s[j];
        jac[(j, j)] = s[j + 1] / sj2;
        let scale = -v[j] / (sj2 * s[j + 1]);
        for k in j + 1..d {
            jac[(j, k)] = scale * v[k];
        }
    }
    let last2 = s[d - 2] * s[d - 2];
    jac[(d - 2, d - 2)] = v[d - 1] / last2;
    jac[(d - 2, d - 1)] = -v[d - 2] / last2;
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_unit(rng: &mut impl Rng, d: usize) -> DVector<f64> {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        v.normalize()
    }

    #[test]
    fn arctan_cases() {
        assert_abs_diff_eq!(arctan_xy(1.0, 1.0).unwrap(), PI / 4.0);
        assert_eq!(arctan_xy(0.0, 1.0).unwrap(), FRAC_PI_2);
        assert_eq!(arctan_xy(0.0, -2.0).unwrap(), -FRAC_PI_2);
        assert_eq!(arctan_xy(-1.0, 0.0).unwrap(), PI);
        assert_abs_diff_eq!(arctan_xy(-1.0, -1.0).unwrap(), -3.0 * PI / 4.0);
        assert!(matches!(arctan_xy(0.0, 0.0), Err(Error::UndefinedAngle)));
    }

    #[test]
    fn forward_map_examples() {
        let v = angles_to_sphere(&[0.0, 0.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0, 1.0]);
        let v = angles_to_sphere(&[FRAC_PI_2]).unwrap();
        assert_abs_diff_eq!(v[0], 1.0);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-16);
        assert!(angles_to_sphere(&[2.0, 0.0]).is_err());
        assert!(angles_to_sphere(&[0.0, -PI]).is_err());
    }

    #[test]
    fn round_trip_in_four_dimensions() {
        let theta = [0.3, -0.7, 2.0];
        let v = angles_to_sphere(&theta).unwrap();
        assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
        let back = sphere_to_angles(v.as_slice()).unwrap();
        for (a, b) in back.iter().zip(theta) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(sphere_to_angles(&[0.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let theta = sphere_to_angles(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(theta, vec![FRAC_PI_2, 0.0]);
        let v = angles_to_sphere(&theta).unwrap();
        assert_abs_diff_eq!(v[0], 1.0);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-16);
        assert!(sphere_to_angles(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn random_sphere_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v = random_unit(&mut rng, 4);
            let theta = sphere_to_angles(v.as_slice()).unwrap();
            assert!(in_angle_box(&theta));
            let back = angles_to_sphere(&theta).unwrap();
            assert!((back - &v).amax() < 1e-10);
        }
    }

    #[test]
    fn jacobian_examples() {
        let j = dg_dv(&[0.0, 1.0]).unwrap();
        assert_eq!(j.shape(), (1, 2));
        assert_eq!((j[(0, 0)], j[(0, 1)]), (1.0, 0.0));

        let j = dg_dv(&[0.0, 0.0, 1.0]).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(j, expected);

        assert!(matches!(
            dg_dv(&[1.0, 0.0, 0.0]),
            Err(Error::SingularJacobian { index: 2, .. })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..200 {
            let v = random_unit(&mut rng, 5);
            let jac = dg_dv(v.as_slice()).unwrap();
            // Tangent direction: project a random vector off v.
            let w = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let t = (&w - &v * v.dot(&w)).normalize();
            let plus = sphere_to_angles((&v + &t * h).normalize().as_slice()).unwrap();
            let minus = sphere_to_angles((&v - &t * h).normalize().as_slice()).unwrap();
            let fd = DVector::from_iterator(4, plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)));
            let analytic = &jac * &t;
            let rel = (&analytic - &fd).norm() / analytic.norm().max(1e-12);
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    fn sphere_jacobian(theta: &[f64]) -> DMatrix<f64> {
        let d = theta.len() + 1;
        let h = 1e-6;
        let mut out = DMatrix::zeros(d, d - 1);
        for k in 0..d - 1 {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[k] += h;
            m[k] -= h;
            let col = (angles_to_sphere(&p).unwrap() - angles_to_sphere(&m).unwrap()) / (2.0 * h);
            out.set_column(k, &col);
        }
        out
    }

    #[test]
    fn chain_rule_through_sphere_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.4..1.4)).collect();
            theta.push(rng.random_range(-3.0..3.0));
            let v = angles_to_sphere(&theta).unwrap();
            let product = dg_dv(v.as_slice()).unwrap() * sphere_jacobian(&theta);
            assert!((product - DMatrix::identity(4, 4)).amax() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn arctan_range_and_tangent(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            prop_assume!(x != 0.0 || y != 0.0);
            let a = arctan_xy(x, y).unwrap();
            prop_assert!(a > -PI && a <= PI);
            if x.abs() > 1e-3 && (a.abs() - FRAC_PI_2).abs() > 1e-6 && (a - PI).abs() > 1e-12 {
                prop_assert!((a.tan() - y / x).abs() <= 1e-10 * (1.0 + (y / x).abs()));
            }
        }

        #[test]
        fn angles_round_trip(
            head in proptest::collection::vec((1e-4 - FRAC_PI_2)..(FRAC_PI_2 - 1e-4), 0..5),
            last in (1e-4 - PI)..(PI - 1e-4),
        ) {
            let mut theta = head.clone();
            theta.push(last);
            let v = angles_to_sphere(&theta).unwrap();
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            let back = sphere_to_angles(v.as_slice()).unwrap();
            prop_assert!(in_angle_box(&back));
            for (a, b) in back.iter().zip(&theta) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
