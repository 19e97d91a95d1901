//! Axis-angle (rotation vector) helpers: exponential and logarithm maps,
//! the derivative of the exponential map and canonicalization.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

const SMALL_ANGLE: f64 = 1e-4;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    if theta2 < 1e-16 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + a * k + b * k * k
}

/// Rotation vector of a rotation matrix, with angle in `[0, pi]`.
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let (mut w, mut v) = (q.w, q.imag());
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-12 {
        // First-order: q ~ (1, omega / 2).
        return 2.0 * v / w.max(f64::MIN_POSITIVE);
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Maps a rotation vector to the equivalent one with norm at most pi.
pub fn canonicalize(omega: &Vector3<f64>) -> Vector3<f64> {
    let theta = omega.norm();
    if theta <= PI {
        return *omega;
    }
    let wrapped = theta.rem_euclid(2.0 * PI);
    let axis = omega / theta;
    if wrapped <= PI {
        axis * wrapped
    } else {
        axis * (wrapped - 2.0 * PI)
    }
}

/// Partial derivatives `dR/d omega_k` of the exponential map, k = 0, 1, 2.
pub fn exp_derivatives(omega: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = omega.norm_squared();
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // Series of exp(K) up to the cubic term.
        let k = skew(omega);
        let k2 = k * k;
        return basis.map(|e| {
            let ek = skew(&e);
            ek + 0.5 * (ek * k + k * ek) + (ek * k2 + k * ek * k + k2 * ek) / 6.0
        });
    }
    let r = exp(omega);
    let k = skew(omega);
    let i_minus_r = Matrix3::identity() - r;
    basis.map(|e| {
        let v = omega.cross(&(i_minus_r * e));
        (omega.dot(&e) * k + skew(&v)) * r / theta2
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_log_round_trip() {
        for omega in [
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(1e-9, 0.0, 2e-9),
            Vector3::new(0.0, 3.0, 0.0),
            Vector3::new(-1.2, 0.4, 2.2),
        ] {
            let back = log(&exp(&omega));
            assert!((back - omega).norm() < 1e-10, "{omega:?} -> {back:?}");
        }
    }

    #[test]
    fn exp_matches_nalgebra() {
        let omega = Vector3::new(0.4, -1.1, 0.25);
        let reference = Rotation3::from_scaled_axis(omega);
        assert!((exp(&omega) - reference.matrix()).norm() < 1e-14);
    }

    #[test]
    fn canonical_range() {
        let omega = Vector3::new(0.0, 0.0, 1.5 * PI);
        let c = canonicalize(&omega);
        assert!((c.z + 0.5 * PI).abs() < 1e-12);
        assert!((exp(&c) - exp(&omega)).norm() < 1e-12);
        let big = Vector3::new(4.0 * PI + 0.3, 0.0, 0.0);
        assert!((canonicalize(&big).x - 0.3).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for omega in [
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(2e-5, -1e-5, 3e-5),
            Vector3::zeros(),
            Vector3::new(2.9, 0.1, -0.3),
        ] {
            let d = exp_derivatives(&omega);
            for k in 0..3 {
                let mut plus = omega;
                let mut minus = omega;
                plus[k] += h;
                minus[k] -= h;
                let fd = (exp(&plus) - exp(&minus)) / (2.0 * h);
                assert!((fd - d[k]).norm() < 1e-8, "k={k} omega={omega:?}");
            }
        }
    }
}
