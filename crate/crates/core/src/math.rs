//! Scalar activations and quaternion helpers shared by spawning and rendering.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unit quaternion `(w, x, y, z)`; the all-zero quaternion maps to identity.
pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    if n == 0.0 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    }
}

pub fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Backpropagates through `q / |q|`. Zero input has zero gradient.
pub fn normalize_quat_backward(q: [f64; 4], d_unit: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    if n == 0.0 {
        return [0.0; 4];
    }
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let dot = (0..4).map(|i| u[i] * d_unit[i]).sum::<f64>();
    std::array::from_fn(|i| (d_unit[i] - u[i] * dot) / n)
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
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

/// Gradient of a scalar w.r.t. the (unit) quaternion given its gradient
/// w.r.t. the rotation matrix built by [`quat_to_rotation`].
pub fn quat_to_rotation_backward(q: [f64; 4], d_r: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |i: usize, j: usize| d_r[(i, j)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    [dw, dx, dy, dz]
}

/// Quaternion `(w, x, y, z)` for a rotation matrix (Shepperd's method).
pub fn rotation_to_quat(r: &Mat3) -> [f64; 4] {
    let tr = r.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    normalize_quat(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn quaternion_rotation_round_trip() {
        let q = normalize_quat([0.3, -0.5, 0.7, 0.2]);
        let r = quat_to_rotation(q);
        assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let back = rotation_to_quat(&r);
        let sign = if back[0] * q[0] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..4 {
            assert!((back[i] * sign - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_backward_matches_finite_differences() {
        let q = [0.4, -0.2, 0.6, 0.3];
        let weights = Mat3::new(0.3, -1.0, 0.5, 0.2, 0.9, -0.4, 1.1, 0.7, -0.6);
        let f = |q: [f64; 4]| quat_to_rotation(q).component_mul(&weights).sum();
        let g = quat_to_rotation_backward(q, &weights);
        for i in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (f(qp) - f(qm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let q = [0.4, -1.2, 0.6, 0.3];
        let w = [0.7, 0.1, -0.3, 0.9];
        let f = |q: [f64; 4]| {
            let u = normalize_quat(q);
            (0..4).map(|i| u[i] * w[i]).sum::<f64>()
        };
        let g = normalize_quat_backward(q, w);
        for i in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            assert!(((f(qp) - f(qm)) / (2.0 * h) - g[i]).abs() < 1e-8);
        }
        assert_eq!(normalize_quat([0.0; 4]), [1.0, 0.0, 0.0, 0.0]);
    }
}
