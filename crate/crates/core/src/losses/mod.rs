//! Supervision terms and their schedule.

pub mod depth;
pub mod regularizers;
pub mod ssim;

pub use depth::{
    grad_loss, normalize_depth, schedule_weight, silog_loss, valid_mask, Normalized, PriorFrame, ValidMask,
    MIN_VALID_FRACTION,
};
pub use regularizers::{opacity_entropy, velocity_coherence};

use crate::error::LossError;
use crate::image::Image;
use crate::raster::{Buffers, RenderOutput};
use crate::scalar::Scalar;

/// Loss weights and schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub lambda_si0: f64,
    pub lambda_grad0: f64,
    pub t_warm: u64,
    pub w_max: f64,
    pub lambda_dssim: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lambda_ent: f64,
    pub lambda_vel: f64,
    pub k_nn: usize,
    pub vel_subsample: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lambda_si0: 0.05,
            lambda_grad0: 0.5,
            t_warm: 100,
            w_max: 1.0,
            lambda_dssim: 0.2,
            beta: 0.15,
            epsilon: 1e-6,
            lambda_ent: 0.001,
            lambda_vel: 0.01,
            k_nn: 4,
            vel_subsample: 256,
        }
    }
}

/// Per-term values of one objective evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub photo: f64,
    pub silog: f64,
    pub grad: f64,
    pub entropy: f64,
    pub velocity: f64,
    pub w_si: f64,
    pub w_grad: f64,
    pub valid_fraction: f64,
    pub priors_active: bool,
    pub total: f64,
    /// Terms excluded from `total` because they evaluated to a non-finite value.
    pub dropped: Vec<&'static str>,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "step,photo,silog,grad,entropy,velocity,w_si,w_grad,valid_fraction,priors_active,total";

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.6},{},{:.9e}",
            self.photo,
            self.silog,
            self.grad,
            self.entropy,
            self.velocity,
            self.w_si,
            self.w_grad,
            self.valid_fraction,
            self.priors_active as u8,
            self.total
        )
    }
}

fn check_shape(a: &Image, b: &Image) -> Result<(), LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

pub fn photometric_generic<T: Scalar>(observed: &[f64], render: &[T], w: usize, h: usize, lambda_dssim: f64) -> T {
    let mut l1 = T::zero();
    for (&o, &r) in observed.iter().zip(render) {
        l1 += (r - o).abs();
    }
    let l1 = l1 / observed.len() as f64;
    let s = ssim::ssim_generic(observed, render, w, h, 3);
    l1 * (1.0 - lambda_dssim) + (-s + 1.0) * lambda_dssim
}

/// `(1−λ)·mean|I − Î| + λ·(1 − SSIM(I, Î))`.
pub fn photometric_loss(observed: &Image, render: &Image, lambda_dssim: f64) -> Result<f64, LossError> {
    check_shape(observed, render)?;
    let (w, h) = (observed.width, observed.height);
    let mut l1 = 0.0;
    for (o, r) in observed.data.iter().zip(&render.data) {
        l1 += (r - o).abs();
    }
    let l1 = l1 / observed.data.len() as f64;
    let s = ssim::ssim_images(&observed.data, &render.data, w, h, observed.channels);
    Ok((1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s))
}

/// Gradient of the photometric loss with respect to the rendered RGB, times `scale`.
pub fn photometric_backward(observed: &[f64], render: &[f64], w: usize, h: usize, lambda_dssim: f64, scale: f64) -> Vec<f64> {
    let n = observed.len() as f64;
    let mut g = if lambda_dssim != 0.0 {
        ssim::ssim_backward(observed, render, w, h, 3, -lambda_dssim * scale)
    } else {
        vec![0.0; observed.len()]
    };
    let l1 = (1.0 - lambda_dssim) * scale / n;
    for ((gi, &o), &r) in g.iter_mut().zip(observed).zip(render) {
        *gi += if r - o < 0.0 { -l1 } else { l1 };
    }
    g
}

/// Frame-constant prior data: valid set and normalized target depth.
#[derive(Clone, Debug)]
pub struct PreparedPrior {
    pub valid: ValidMask,
    pub star: Normalized<f64>,
    pub width: usize,
    pub height: usize,
}

impl PreparedPrior {
    pub fn new(prior: &PriorFrame) -> Self {
        let valid = valid_mask(prior);
        let star = normalize_depth(&prior.depth_star.data, &valid.mask);
        Self { valid, star, width: prior.depth_star.width, height: prior.depth_star.height }
    }
}

/// Photometric and prior terms before weighting.
#[derive(Clone, Debug)]
pub struct GeoTerms<T> {
    pub photo: T,
    pub silog: Option<T>,
    pub grad: Option<T>,
    pub w_si: f64,
    pub w_grad: f64,
    pub valid_fraction: f64,
    pub priors_active: bool,
    /// Normalized rendered depth, present when prior terms were evaluated.
    pub hat_norm: Option<Normalized<T>>,
}

pub fn geo_terms<T: Scalar>(
    observed: &Image,
    render: &Buffers<T>,
    prior: Option<&PreparedPrior>,
    cfg: &ScheduleConfig,
    step: u64,
) -> GeoTerms<T> {
    let photo = photometric_generic(&observed.data, &render.rgb, observed.width, observed.height, cfg.lambda_dssim);
    let w_si = schedule_weight(cfg.lambda_si0, step, cfg.t_warm, cfg.w_max);
    let w_grad = schedule_weight(cfg.lambda_grad0, step, cfg.t_warm, cfg.w_max);
    let mut out = GeoTerms {
        photo,
        silog: None,
        grad: None,
        w_si,
        w_grad,
        valid_fraction: prior.map_or(0.0, |p| p.valid.fraction),
        priors_active: prior.is_some_and(|p| p.valid.priors_active()),
        hat_norm: None,
    };
    let Some(prior) = prior.filter(|p| p.valid.priors_active() && !p.star.degenerate) else {
        return out;
    };
    let mask = &prior.valid.mask;
    let hat = normalize_depth(&render.depth, mask);
    if hat.degenerate {
        return out;
    }
    out.silog = silog_loss(&hat.values, &prior.star.values, mask, cfg.beta, cfg.epsilon).ok();
    // both maps normalized: the prior carries an unknown affine depth transform
    out.grad = grad_loss(&hat.values, &prior.star.values, mask, prior.width, prior.height).ok();
    out.hat_norm = Some(hat);
    out
}

/// Evaluates photometric and prior terms for a finished render.
pub fn geo_loss(
    observed: &Image,
    render: &RenderOutput,
    prior: &PriorFrame,
    cfg: &ScheduleConfig,
    step: u64,
) -> Result<LossReport, LossError> {
    check_shape(observed, &render.rgb)?;
    let buffers = Buffers {
        width: render.rgb.width,
        height: render.rgb.height,
        rgb: render.rgb.data.clone(),
        depth: render.depth.data.clone(),
        alpha: render.alpha.data.clone(),
    };
    let prepared = PreparedPrior::new(prior);
    let terms = geo_terms(observed, &buffers, Some(&prepared), cfg, step);
    Ok(accumulate(&terms, 0.0, 0.0, cfg))
}

/// Weighted sum with finite-value guards; non-finite terms are left out of
/// the total and listed in `dropped`.
pub fn accumulate(terms: &GeoTerms<f64>, entropy: f64, velocity: f64, cfg: &ScheduleConfig) -> LossReport {
    let mut r = LossReport {
        photo: terms.photo,
        silog: terms.silog.unwrap_or(0.0),
        grad: terms.grad.unwrap_or(0.0),
        entropy,
        velocity,
        w_si: terms.w_si,
        w_grad: terms.w_grad,
        valid_fraction: terms.valid_fraction,
        priors_active: terms.priors_active,
        total: 0.0,
        dropped: Vec::new(),
    };
    let parts = [
        ("photo", r.photo, 1.0),
        ("silog", r.silog, r.w_si),
        ("grad", r.grad, r.w_grad),
        ("entropy", r.entropy, cfg.lambda_ent),
        ("velocity", r.velocity, cfg.lambda_vel),
    ];
    for (name, value, weight) in parts {
        if !value.is_finite() {
            log::warn!("dropping non-finite {name} term");
            r.dropped.push(name);
            continue;
        }
        if weight != 0.0 {
            r.total += weight * value;
        }
    }
    r
}
