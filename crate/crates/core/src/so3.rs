//! Small helpers on rotation matrices: the SO(3) exponential and logarithm,
//! orthonormality checks and quaternion conversion for logging.

use nalgebra::{Matrix3, Vector3, Vector4};

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp_map(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-12 {
        return Matrix3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

/// Scaled axis `theta * axis` with `theta` in `[0, pi]`.
///
/// At exactly `pi` the axis sign is ambiguous; the sign is then chosen so
/// that the first non-negligible component is positive.
pub fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = v.norm();
    let theta = sin.atan2(cos);

    if theta < 1e-6 {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return v * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-4 {
        return v * (theta / sin);
    }

    // Near pi: sym(R) = cos I + (1 - cos) a a^T; pick the best-conditioned column.
    let b = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos) / (1.0 - cos);
    let k = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis = b.column(k).into_owned();
    axis /= axis.norm();
    if v.norm() > 1e-12 {
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-9) {
        if first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Geodesic distance between two rotations.
pub fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    log_map(&(a.transpose() * b)).norm()
}

/// `max |R^T R - I|` and `|det R - 1|`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|x| x.is_finite()) && orthonormality_error(r) < tol
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Unit quaternion `(w, x, y, z)` with `w >= 0`.
pub fn to_quaternion(r: &Matrix3<f64>) -> Vector4<f64> {
    let w = log_map(r);
    let theta = w.norm();
    let (s, c) = (0.5 * theta).sin_cos();
    let axis = if theta > 1e-12 {
        w / theta
    } else {
        Vector3::zeros()
    };
    let q = Vector4::new(c, axis.x * s, axis.y * s, axis.z * s);
    if q.x < 0.0 {
        -q
    } else {
        q
    }
}
