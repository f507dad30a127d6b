//! Small fixed-size linear algebra: 3-vectors, 3x3 matrices and Hamilton
//! quaternions stored as `[w, x, y, z]`.
//!
//! Forward helpers are generic over [`Scalar`]; the matching `*_backward`
//! functions are f64-only adjoints used by the analytic gradient.

use crate::scalar::Scalar;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];
pub type Quat<T> = [T; 4];

/// Below this rotation angle the axis-angle exponential switches to its series.
pub const EXP_SERIES_ANGLE: f64 = 1e-8;

pub fn dot3<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn identity3() -> Mat3<f64> {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn transpose3(m: &Mat3<f64>) -> Mat3<f64> {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

pub fn matmul3(a: &Mat3<f64>, b: &Mat3<f64>) -> Mat3<f64> {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

/// `m * v` with a constant matrix.
pub fn mat_vec<T: Scalar>(m: &Mat3<f64>, v: &Vec3<T>) -> Vec3<T> {
    [
        v[0] * m[0][0] + v[1] * m[0][1] + v[2] * m[0][2],
        v[0] * m[1][0] + v[1] * m[1][1] + v[2] * m[1][2],
        v[0] * m[2][0] + v[1] * m[2][1] + v[2] * m[2][2],
    ]
}

/// `mᵀ * v` with a constant matrix.
pub fn mat_t_vec(m: &Mat3<f64>, v: &Vec3<f64>) -> Vec3<f64> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn quat_mul<T: Scalar>(p: &Quat<T>, r: &Quat<T>) -> Quat<T> {
    [
        p[0] * r[0] - p[1] * r[1] - p[2] * r[2] - p[3] * r[3],
        p[0] * r[1] + p[1] * r[0] + p[2] * r[3] - p[3] * r[2],
        p[0] * r[2] - p[1] * r[3] + p[2] * r[0] + p[3] * r[1],
        p[0] * r[3] + p[1] * r[2] - p[2] * r[1] + p[3] * r[0],
    ]
}

/// Adjoint of [`quat_mul`]: returns `(dp, dr)`.
pub fn quat_mul_backward(p: &Quat<f64>, r: &Quat<f64>, dq: &Quat<f64>) -> (Quat<f64>, Quat<f64>) {
    let dp = [
        dq[0] * r[0] + dq[1] * r[1] + dq[2] * r[2] + dq[3] * r[3],
        -dq[0] * r[1] + dq[1] * r[0] - dq[2] * r[3] + dq[3] * r[2],
        -dq[0] * r[2] + dq[1] * r[3] + dq[2] * r[0] - dq[3] * r[1],
        -dq[0] * r[3] - dq[1] * r[2] + dq[2] * r[1] + dq[3] * r[0],
    ];
    let dr = [
        dq[0] * p[0] + dq[1] * p[1] + dq[2] * p[2] + dq[3] * p[3],
        -dq[0] * p[1] + dq[1] * p[0] + dq[2] * p[3] - dq[3] * p[2],
        -dq[0] * p[2] - dq[1] * p[3] + dq[2] * p[0] + dq[3] * p[1],
        -dq[0] * p[3] + dq[1] * p[2] - dq[2] * p[1] + dq[3] * p[0],
    ];
    (dp, dr)
}

pub fn quat_normalize<T: Scalar>(q: &Quat<T>) -> Quat<T> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Adjoint of [`quat_normalize`] evaluated at the raw quaternion `q`.
pub fn quat_normalize_backward(q: &Quat<f64>, dn: &Quat<f64>) -> Quat<f64> {
    let norm = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let u = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
    let proj: f64 = (0..4).map(|i| u[i] * dn[i]).sum();
    [
        (dn[0] - u[0] * proj) / norm,
        (dn[1] - u[1] * proj) / norm,
        (dn[2] - u[2] * proj) / norm,
        (dn[3] - u[3] * proj) / norm,
    ]
}

/// Axis-angle vector to unit quaternion `(cos(θ/2), sin(θ/2)·ω/θ)`.
pub fn exp_quat<T: Scalar>(omega: &Vec3<T>) -> Quat<T> {
    let theta2 = dot3(omega, omega);
    if theta2.branch().sqrt() < EXP_SERIES_ANGLE {
        let half = T::cst(0.5) - theta2 / 48.0;
        [T::cst(1.0) - theta2 / 8.0, omega[0] * half, omega[1] * half, omega[2] * half]
    } else {
        let theta = theta2.sqrt();
        let half = theta * 0.5;
        let s = half.sin() / theta;
        [half.cos(), omega[0] * s, omega[1] * s, omega[2] * s]
    }
}

/// Adjoint of [`exp_quat`].
pub fn exp_quat_backward(omega: &Vec3<f64>, dq: &Quat<f64>) -> Vec3<f64> {
    let theta2 = omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2];
    let theta = theta2.sqrt();
    if theta < EXP_SERIES_ANGLE {
        // q0 = 1 - θ²/8, qv = ω (1/2 - θ²/48)
        let half = 0.5 - theta2 / 48.0;
        let vdot = omega[0] * dq[1] + omega[1] * dq[2] + omega[2] * dq[3];
        let mut g = [0.0; 3];
        for i in 0..3 {
            g[i] = -omega[i] / 4.0 * dq[0] + half * dq[i + 1] - omega[i] / 24.0 * vdot;
        }
        return g;
    }
    let (sh, ch) = (0.5 * theta).sin_cos();
    // s(θ) = sin(θ/2)/θ and s'(θ)/θ
    let s = sh / theta;
    let ds_over_theta = if theta < 1e-3 {
        -1.0 / 24.0 + theta2 / 960.0
    } else {
        (0.5 * ch * theta - sh) / (theta2 * theta)
    };
    let vdot = omega[0] * dq[1] + omega[1] * dq[2] + omega[2] * dq[3];
    let mut g = [0.0; 3];
    for i in 0..3 {
        g[i] = -0.5 * s * omega[i] * dq[0] + s * dq[i + 1] + ds_over_theta * omega[i] * vdot;
    }
    g
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_mat<T: Scalar>(q: &Quat<T>) -> Mat3<T> {
    let [w, x, y, z] = *q;
    let one = T::cst(1.0);
    [
        [one - (y * y + z * z) * 2.0, (x * y - w * z) * 2.0, (x * z + w * y) * 2.0],
        [(x * y + w * z) * 2.0, one - (x * x + z * z) * 2.0, (y * z - w * x) * 2.0],
        [(x * z - w * y) * 2.0, (y * z + w * x) * 2.0, one - (x * x + y * y) * 2.0],
    ]
}

/// Adjoint of [`quat_to_mat`].
pub fn quat_to_mat_backward(q: &Quat<f64>, dr: &Mat3<f64>) -> Quat<f64> {
    let [w, x, y, z] = *q;
    let d = dr;
    let dw = 2.0
        * (-z * d[0][1] + y * d[0][2] + z * d[1][0] - x * d[1][2] - y * d[2][0] + x * d[2][1]);
    let dx = 2.0
        * (y * d[0][1] + z * d[0][2] + y * d[1][0] - 2.0 * x * d[1][1] - w * d[1][2]
            + z * d[2][0]
            + w * d[2][1]
            - 2.0 * x * d[2][2]);
    let dy = 2.0
        * (-2.0 * y * d[0][0] + x * d[0][1] + w * d[0][2] + x * d[1][0] + z * d[1][2]
            - w * d[2][0]
            + z * d[2][1]
            - 2.0 * y * d[2][2]);
    let dz = 2.0
        * (-2.0 * z * d[0][0] - w * d[0][1] + x * d[0][2] + w * d[1][0] - 2.0 * z * d[1][1]
            + y * d[1][2]
            + x * d[2][0]
            + y * d[2][1]);
    [dw, dx, dy, dz]
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::cst(1.0) / ((-x).exp() + 1.0)
}

/// Eigenvalues of a symmetric 3x3 matrix (ascending), closed-form trigonometric solution.
pub fn sym_eigenvalues3(m: &Mat3<f64>) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 <= f64::EPSILON * (q * q).max(f64::MIN_POSITIVE) {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(|a, b| a.total_cmp(b));
        return e;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(|a, b| a.total_cmp(b));
    e
}
