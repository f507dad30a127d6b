//! Time-embedded Gaussian primitives.
//!
//! A primitive is stored at normalized time 0. Evaluating it at time `t`
//! advances the center by `velocity·t`, composes the rotation with the
//! axis-angle exponential of `rotor_rate·t`, and modulates opacity by a
//! Gaussian temporal window `exp(-(t - t_center)² / (2 t_sigma²))`.
//!
//! Unconstrained storage: scales as logs, opacity as a logit, rotation as a raw
//! 4-vector that is normalized on use.

use crate::error::FieldError;
use crate::math::{self, Mat3, Quat, Vec3};
use crate::scalar::Scalar;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Floor applied to `t_sigma` after every parameter update.
pub const T_SIGMA_MIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub center: Vec3<f64>,
    pub log_scale: Vec3<f64>,
    pub rotation: Quat<f64>,
    pub opacity_logit: f64,
    pub sh_coeffs: Vec<[f64; 3]>,
    pub velocity: Vec3<f64>,
    pub rotor_rate: Vec3<f64>,
    pub t_center: f64,
    pub t_sigma: f64,
}

impl GaussianPrimitive {
    /// Static primitive with a degree-0 colour; convenient for tests and synthesis.
    pub fn new(center: Vec3<f64>, log_scale: Vec3<f64>, opacity: f64, rgb: [f64; 3]) -> Self {
        let sh0 = [(rgb[0] - 0.5) / SH_C0, (rgb[1] - 0.5) / SH_C0, (rgb[2] - 0.5) / SH_C0];
        Self {
            center,
            log_scale,
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            sh_coeffs: vec![sh0],
            velocity: [0.0; 3],
            rotor_rate: [0.0; 3],
            t_center: 0.5,
            t_sigma: 1e3,
        }
    }

    pub fn sh_degree(&self) -> Result<u32, FieldError> {
        sh_degree_of(self.sh_coeffs.len())
    }

    /// Pads or truncates the SH coefficient list to the given degree.
    pub fn with_sh_degree(mut self, degree: u32) -> Self {
        self.sh_coeffs.resize(sh_len(degree), [0.0; 3]);
        self
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    pub fn is_finite(&self) -> bool {
        self.center
            .iter()
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(self.sh_coeffs.iter().flatten())
            .chain(&self.velocity)
            .chain(&self.rotor_rate)
            .chain([&self.opacity_logit, &self.t_center, &self.t_sigma])
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianField {
    pub primitives: Vec<GaussianPrimitive>,
    /// Global training iteration.
    pub step: u64,
    pub sh_degree: u32,
}

impl GaussianField {
    pub fn new(sh_degree: u32) -> Self {
        Self { primitives: Vec::new(), step: 0, sh_degree }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sh_len(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

pub fn sh_degree_of(len: usize) -> Result<u32, FieldError> {
    match len {
        1 => Ok(0),
        4 => Ok(1),
        n => Err(FieldError::UnsupportedShDegree(n)),
    }
}

/// `Σ = R·S²·Rᵀ` with `S = diag(exp(log_scale))` and `R` from the normalized quaternion.
pub fn covariance(rotation: &Quat<f64>, log_scale: &Vec3<f64>) -> Result<Mat3<f64>, FieldError> {
    if !rotation.iter().chain(log_scale).all(|v| v.is_finite()) {
        return Err(FieldError::NonFinite);
    }
    if rotation.iter().all(|&v| v == 0.0) {
        return Err(FieldError::ZeroRotation);
    }
    let r = math::quat_to_mat(&math::quat_normalize(rotation));
    Ok(covariance_from_mat(&r, log_scale))
}

pub(crate) fn covariance_from_mat<T: Scalar>(r: &Mat3<T>, log_scale: &Vec3<T>) -> Mat3<T> {
    let s = [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()];
    let mut m = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    let mut cov = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
        }
    }
    cov
}

/// Moves a primitive forward by `dt`: linear center motion and rotor rotation.
pub fn advance(p: &GaussianPrimitive, dt: f64) -> Result<GaussianPrimitive, FieldError> {
    if !dt.is_finite() || !p.is_finite() {
        return Err(FieldError::NonFinite);
    }
    let mut out = p.clone();
    for i in 0..3 {
        out.center[i] += p.velocity[i] * dt;
    }
    let step = [p.rotor_rate[0] * dt, p.rotor_rate[1] * dt, p.rotor_rate[2] * dt];
    let q = math::quat_mul(&math::exp_quat(&step), &p.rotation);
    out.rotation = math::quat_normalize(&q);
    Ok(out)
}

/// `sigmoid(opacity_logit) · exp(-(t - t_center)² / (2 t_sigma²))`.
pub fn temporal_opacity(p: &GaussianPrimitive, t: f64) -> f64 {
    temporal_opacity_of(p.opacity_logit, p.t_center, p.t_sigma, t)
}

pub(crate) fn temporal_opacity_of<T: Scalar>(logit: T, t_center: T, t_sigma: T, t: f64) -> T {
    let dtc = -t_center + t;
    math::sigmoid(logit) * (-(dtc * dtc) / (t_sigma * t_sigma * 2.0)).exp()
}

/// Real SH evaluation up to degree 1, including the +0.5 offset, not clamped.
pub fn sh_color(sh_coeffs: &[[f64; 3]], view_dir: &Vec3<f64>) -> Result<[f64; 3], FieldError> {
    let degree = sh_degree_of(sh_coeffs.len())?;
    let coeffs: Vec<[f64; 3]> = sh_coeffs.to_vec();
    Ok(sh_eval(&coeffs, degree, view_dir))
}

pub(crate) fn sh_eval<T: Scalar>(sh: &[[T; 3]], degree: u32, dir: &Vec3<T>) -> [T; 3] {
    let mut rgb = [T::cst(0.5); 3];
    for c in 0..3 {
        rgb[c] += sh[0][c] * SH_C0;
        if degree >= 1 {
            rgb[c] += (-(dir[1] * sh[1][c]) + dir[2] * sh[2][c] - dir[0] * sh[3][c]) * SH_C1;
        }
    }
    rgb
}

/// A primitive's parameters in flat order, generic over the scalar type.
///
/// Field order matches [`GaussianPrimitive`] and the scene file columns.
#[derive(Clone, Copy, Debug)]
pub struct PrimParams<T> {
    pub center: Vec3<T>,
    pub log_scale: Vec3<T>,
    pub rotation: Quat<T>,
    pub opacity_logit: T,
    pub sh: [[T; 3]; 4],
    pub velocity: Vec3<T>,
    pub rotor_rate: Vec3<T>,
    pub t_center: T,
    pub t_sigma: T,
}

/// Per-primitive parameter groups in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attr {
    Center,
    LogScale,
    Rotation,
    OpacityLogit,
    Sh,
    Velocity,
    RotorRate,
    TCenter,
    TSigma,
}

impl Attr {
    pub const ALL: [Attr; 9] = [
        Attr::Center,
        Attr::LogScale,
        Attr::Rotation,
        Attr::OpacityLogit,
        Attr::Sh,
        Attr::Velocity,
        Attr::RotorRate,
        Attr::TCenter,
        Attr::TSigma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attr::Center => "center",
            Attr::LogScale => "log_scale",
            Attr::Rotation => "rotation",
            Attr::OpacityLogit => "opacity",
            Attr::Sh => "sh",
            Attr::Velocity => "velocity",
            Attr::RotorRate => "rotor",
            Attr::TCenter => "t_center",
            Attr::TSigma => "t_sigma",
        }
    }

    pub fn len(self, degree: u32) -> usize {
        match self {
            Attr::Center | Attr::LogScale | Attr::Velocity | Attr::RotorRate => 3,
            Attr::Rotation => 4,
            Attr::OpacityLogit | Attr::TCenter | Attr::TSigma => 1,
            Attr::Sh => 3 * sh_len(degree),
        }
    }

    /// Offset of this group inside one primitive's slice.
    pub fn offset(self, degree: u32) -> usize {
        Attr::ALL.iter().take_while(|&&a| a != self).map(|a| a.len(degree)).sum()
    }
}

pub fn prim_stride(degree: u32) -> usize {
    Attr::ALL.iter().map(|a| a.len(degree)).sum()
}

impl<T: Scalar> PrimParams<T> {
    pub fn from_slice(s: &[T], degree: u32) -> Self {
        let mut sh = [[T::zero(); 3]; 4];
        let nsh = sh_len(degree);
        for (k, row) in sh.iter_mut().enumerate().take(nsh) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = s[11 + 3 * k + c];
            }
        }
        let o = 11 + 3 * nsh;
        Self {
            center: [s[0], s[1], s[2]],
            log_scale: [s[3], s[4], s[5]],
            rotation: [s[6], s[7], s[8], s[9]],
            opacity_logit: s[10],
            sh,
            velocity: [s[o], s[o + 1], s[o + 2]],
            rotor_rate: [s[o + 3], s[o + 4], s[o + 5]],
            t_center: s[o + 6],
            t_sigma: s[o + 7],
        }
    }

    /// Center at time `t`.
    pub fn position_at(&self, t: f64) -> Vec3<T> {
        [
            self.center[0] + self.velocity[0] * t,
            self.center[1] + self.velocity[1] * t,
            self.center[2] + self.velocity[2] * t,
        ]
    }

    /// Unit rotation at time `t`: `exp(rotor_rate·t) ⊗ normalize(rotation)`.
    pub fn rotation_at(&self, t: f64) -> Quat<T> {
        let omega = [self.rotor_rate[0] * t, self.rotor_rate[1] * t, self.rotor_rate[2] * t];
        math::quat_mul(&math::exp_quat(&omega), &math::quat_normalize(&self.rotation))
    }

    pub fn opacity_at(&self, t: f64) -> T {
        temporal_opacity_of(self.opacity_logit, self.t_center, self.t_sigma, t)
    }
}

pub fn write_prim_slice(p: &GaussianPrimitive, degree: u32, out: &mut [f64]) {
    out[0..3].copy_from_slice(&p.center);
    out[3..6].copy_from_slice(&p.log_scale);
    out[6..10].copy_from_slice(&p.rotation);
    out[10] = p.opacity_logit;
    let nsh = sh_len(degree);
    for k in 0..nsh {
        let c = p.sh_coeffs.get(k).copied().unwrap_or([0.0; 3]);
        out[11 + 3 * k..14 + 3 * k].copy_from_slice(&c);
    }
    let o = 11 + 3 * nsh;
    out[o..o + 3].copy_from_slice(&p.velocity);
    out[o + 3..o + 6].copy_from_slice(&p.rotor_rate);
    out[o + 6] = p.t_center;
    out[o + 7] = p.t_sigma;
}

pub fn read_prim_slice(s: &[f64], degree: u32) -> GaussianPrimitive {
    let p = PrimParams::from_slice(s, degree);
    GaussianPrimitive {
        center: p.center,
        log_scale: p.log_scale,
        rotation: p.rotation,
        opacity_logit: p.opacity_logit,
        sh_coeffs: p.sh[..sh_len(degree)].to_vec(),
        velocity: p.velocity,
        rotor_rate: p.rotor_rate,
        t_center: p.t_center,
        t_sigma: p.t_sigma,
    }
}
