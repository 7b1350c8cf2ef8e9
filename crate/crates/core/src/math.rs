//! Small linear-algebra helpers shared by the camera, scene and renderer.
//! Quaternions are `[w, x, y, z]`.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Unit quaternion; a zero quaternion maps to identity.
pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    if n == 0.0 || !n.is_finite() {
        return IDENTITY_QUAT;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Hamilton product `a * b` (apply `b`, then `a`).
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_conj(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

pub fn quat_from_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

/// Rotation angle between two unit quaternions, in `[0, pi]`.
pub fn quat_angle_between(a: &Quat, b: &Quat) -> f64 {
    let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]).abs();
    2.0 * d.min(1.0).acos()
}

/// Rotation matrix of a unit quaternion (the input is not renormalised).
pub fn quat_to_matrix_unit(q: &Quat) -> Mat3 {
    let [w, x, y, z] = *q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn quat_to_matrix(q: &Quat) -> Mat3 {
    quat_to_matrix_unit(&quat_normalize(q))
}

/// Quaternion of a proper rotation matrix (Shepperd's method), `w >= 0`.
pub fn matrix_to_quat(m: &Mat3) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = quat_normalize(&q);
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// Pulls `dL/dR` back to `dL/dq` for `R = quat_to_matrix_unit(q)`.
pub fn quat_matrix_backward(q: &Quat, g: &Mat3) -> Quat {
    let [w, x, y, z] = *q;
    let g = |r: usize, c: usize| g[(r, c)];
    [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ]
}

/// Pulls a gradient w.r.t. the normalised quaternion back to the raw one.
pub fn quat_normalize_backward(raw: &Quat, grad_unit: &Quat) -> Quat {
    let n = quat_norm(raw);
    if n == 0.0 {
        return [0.0; 4];
    }
    let u = [raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n];
    let dot = u.iter().zip(grad_unit).map(|(a, b)| a * b).sum::<f64>();
    [
        (grad_unit[0] - u[0] * dot) / n,
        (grad_unit[1] - u[1] * dot) / n,
        (grad_unit[2] - u[2] * dot) / n,
        (grad_unit[3] - u[3] * dot) / n,
    ]
}

/// Shorter-arc spherical interpolation between unit quaternions.
pub fn quat_slerp(a: &Quat, b: &Quat, s: f64) -> Quat {
    let mut b = *b;
    let mut dot = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
    if dot < 0.0 {
        b = [-b[0], -b[1], -b[2], -b[3]];
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        let q = [
            a[0] + s * (b[0] - a[0]),
            a[1] + s * (b[1] - a[1]),
            a[2] + s * (b[2] - a[2]),
            a[3] + s * (b[3] - a[3]),
        ];
        return quat_normalize(&q);
    }
    let theta = dot.min(1.0).acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin_theta;
    let wb = (s * theta).sin() / sin_theta;
    quat_normalize(&[
        wa * a[0] + wb * b[0],
        wa * a[1] + wb * b[1],
        wa * a[2] + wb * b[2],
        wa * a[3] + wb * b[3],
    ])
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_quat_round_trip() {
        let q = quat_normalize(&[0.3, -0.5, 0.7, 0.2]);
        let m = quat_to_matrix_unit(&q);
        let back = matrix_to_quat(&m);
        let m2 = quat_to_matrix_unit(&back);
        assert!((m - m2).norm() < 1e-12);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quat_product_matches_matrix_product() {
        let a = quat_normalize(&[0.9, 0.1, -0.3, 0.2]);
        let b = quat_normalize(&[-0.2, 0.6, 0.1, 0.4]);
        let lhs = quat_to_matrix_unit(&quat_mul(&a, &b));
        let rhs = quat_to_matrix_unit(&a) * quat_to_matrix_unit(&b);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn rotation_backward_matches_finite_differences() {
        let q = [0.4, -0.2, 0.7, 0.1];
        let g = Mat3::new(0.3, -1.0, 0.5, 0.2, 0.9, -0.4, 1.1, 0.05, -0.7);
        let f = |q: &Quat| (quat_to_matrix(q).component_mul(&g)).sum();
        let grad_unit = quat_matrix_backward(&quat_normalize(&q), &g);
        let grad = quat_normalize_backward(&q, &grad_unit);
        for i in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (f(&qp) - f(&qm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn slerp_endpoints_and_shorter_arc() {
        let a = IDENTITY_QUAT;
        let b = quat_from_axis_angle(Vec3::z(), 1.0);
        assert_eq!(quat_slerp(&a, &b, 0.0), a);
        let end = quat_slerp(&a, &b, 1.0);
        assert!(quat_angle_between(&end, &b) < 1e-9);
        let neg_b = [-b[0], -b[1], -b[2], -b[3]];
        let mid = quat_slerp(&a, &neg_b, 0.5);
        assert!((quat_angle_between(&mid, &a) - 0.5).abs() < 1e-9);
    }
}
