//! Flat parameter vectors and Adam.

use crate::error::{Error, Result};
use crate::field::{self, Attr, GaussianField};
use crate::math;

/// Where each primitive's attributes live in the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub degree: u32,
    pub count: usize,
}

impl Layout {
    pub fn stride(&self) -> usize {
        field::prim_stride(self.degree)
    }

    pub fn len(&self) -> usize {
        self.stride() * self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Offset and length of `attr` for primitive `index`.
    pub fn range(&self, index: usize, attr: Attr) -> std::ops::Range<usize> {
        let start = index * self.stride() + attr.offset(self.degree);
        start..start + attr.len(self.degree)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn flatten(field: &GaussianField) -> Self {
        let layout = Layout { degree: field.sh_degree, count: field.len() };
        let stride = layout.stride();
        let mut values = vec![0.0; layout.len()];
        for (p, chunk) in field.primitives.iter().zip(values.chunks_exact_mut(stride)) {
            field::write_prim_slice(p, layout.degree, chunk);
        }
        Self { values, layout }
    }

    pub fn unflatten(&self, step: u64) -> GaussianField {
        let primitives = self
            .values
            .chunks_exact(self.layout.stride())
            .map(|s| field::read_prim_slice(s, self.layout.degree))
            .collect();
        GaussianField { primitives, step, sh_degree: self.layout.degree }
    }

    /// Re-projects constrained fields: unit rotations and the t_sigma floor.
    pub fn renormalize(&mut self, t_sigma_min: f64) {
        for i in 0..self.layout.count {
            let r = self.layout.range(i, Attr::Rotation);
            let q = [self.values[r.start], self.values[r.start + 1], self.values[r.start + 2], self.values[r.start + 3]];
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            let q = if norm > 1e-12 && norm.is_finite() { math::quat_normalize(&q) } else { [1.0, 0.0, 0.0, 0.0] };
            self.values[r].copy_from_slice(&q);
            let ts = self.layout.range(i, Attr::TSigma).start;
            self.values[ts] = self.values[ts].max(t_sigma_min);
        }
    }
}

/// Learning-rate multipliers per attribute group.
#[derive(Clone, Debug, PartialEq)]
pub struct LrScales {
    pub center: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh: f64,
    pub velocity: f64,
    pub rotor: f64,
    pub temporal: f64,
}

impl Default for LrScales {
    fn default() -> Self {
        Self { center: 1.0, log_scale: 0.5, rotation: 0.1, opacity: 1.0, sh: 1.0, velocity: 1.0, rotor: 0.1, temporal: 0.5 }
    }
}

impl LrScales {
    pub fn get(&self, attr: Attr) -> f64 {
        match attr {
            Attr::Center => self.center,
            Attr::LogScale => self.log_scale,
            Attr::Rotation => self.rotation,
            Attr::OpacityLogit => self.opacity,
            Attr::Sh => self.sh,
            Attr::Velocity => self.velocity,
            Attr::RotorRate => self.rotor,
            Attr::TCenter | Attr::TSigma => self.temporal,
        }
    }

    /// Per-coordinate multipliers; attributes outside `active` get 0 (frozen).
    pub fn expand(&self, layout: &Layout, active: &[Attr]) -> Vec<f64> {
        let mut out = vec![0.0; layout.len()];
        for i in 0..layout.count {
            for &attr in active {
                let s = self.get(attr);
                out[layout.range(i, attr)].iter_mut().for_each(|v| *v = s);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const DEFAULT_LR: f64 = 1.6e-3;

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step_count: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Rebuilds moments after the parameter set changed. `origin[i]` is the
    /// previous index of new primitive `i`, or `None` for a fresh one.
    pub fn remap(&mut self, stride: usize, origin: &[Option<usize>]) {
        let mut m = vec![0.0; stride * origin.len()];
        let mut v = vec![0.0; stride * origin.len()];
        for (i, o) in origin.iter().enumerate() {
            if let Some(j) = *o {
                m[i * stride..(i + 1) * stride].copy_from_slice(&self.m[j * stride..(j + 1) * stride]);
                v[i * stride..(i + 1) * stride].copy_from_slice(&self.v[j * stride..(j + 1) * stride]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradient contained a non-finite value; parameters and moments untouched.
    Skipped,
}

/// One bias-corrected Adam update. `scale` multiplies the learning rate per
/// coordinate; coordinates with scale 0 are frozen and keep their moments.
pub fn adam_step(state: &mut AdamState, x: &mut [f64], g: &[f64], scale: Option<&[f64]>) -> StepOutcome {
    assert_eq!(x.len(), g.len(), "parameter and gradient lengths differ");
    assert_eq!(state.m.len(), x.len(), "optimizer state length differs");
    state.step_count += 1;
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        log::warn!("skipping Adam step {}: non-finite gradient at index {i}", state.step_count);
        return StepOutcome::Skipped;
    }
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..x.len() {
        let s = scale.map_or(1.0, |s| s[i]);
        if s == 0.0 {
            continue;
        }
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        x[i] -= s * state.lr * mh / (vh.sqrt() + state.eps);
    }
    StepOutcome::Applied
}

/// A scalar objective with an analytic gradient.
pub trait Objective {
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for F {
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}

pub fn gradient(objective: &dyn Objective, x: &[f64]) -> Result<Vec<f64>> {
    let (v, g) = objective.value_and_gradient(x);
    if !v.is_finite() {
        return Err(Error::Numerical(format!("objective is {v}")));
    }
    Ok(g)
}
