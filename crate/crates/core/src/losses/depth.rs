//! Confidence-gated depth supervision: valid set, min-max normalization,
//! SILog and first-order gradient alignment.

use crate::error::LossError;
use crate::image::Image;
use crate::scalar::Scalar;

/// Fraction of the image that must be valid before prior terms switch on.
pub const MIN_VALID_FRACTION: f64 = 0.1;
/// Lower bound of the adaptive confidence threshold.
pub const TAU_FLOOR: f64 = 0.01;

/// External monocular prior for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorFrame {
    pub depth_star: Image,
    pub confidence: Image,
    /// 1 marks an instrument pixel.
    pub instrument_mask: Image,
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidMask {
    pub mask: Vec<bool>,
    pub tau: f64,
    pub fraction: f64,
}

impl ValidMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn priors_active(&self) -> bool {
        self.fraction >= MIN_VALID_FRACTION
    }
}

pub fn valid_mask(prior: &PriorFrame) -> ValidMask {
    let c_max = prior.confidence.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tau = TAU_FLOOR.max(0.5 * c_max);
    let mask: Vec<bool> = (0..prior.depth_star.data.len())
        .map(|p| {
            let d = prior.depth_star.data[p];
            prior.confidence.data[p] >= tau
                && d >= prior.d_min
                && d <= prior.d_max
                && prior.instrument_mask.data[p] <= 0.5
        })
        .collect();
    let n = mask.len().max(1);
    let fraction = mask.iter().filter(|&&m| m).count() as f64 / n as f64;
    ValidMask { mask, tau, fraction }
}

/// Min-max normalized depth and the pixels that set the range.
#[derive(Clone, Debug)]
pub struct Normalized<T> {
    pub values: Vec<T>,
    pub degenerate: bool,
    pub argmin: usize,
    pub argmax: usize,
}

/// `(D - min) / (max - min)` over masked pixels, clamped to [0, 1] elsewhere.
/// Fewer than two masked pixels or a constant masked depth gives zeros and
/// the degenerate flag.
pub fn normalize_depth<T: Scalar>(d: &[T], mask: &[bool]) -> Normalized<T> {
    let mut count = 0;
    let (mut lo, mut hi) = (usize::MAX, usize::MAX);
    for (p, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        count += 1;
        if lo == usize::MAX || d[p].branch() < d[lo].branch() {
            lo = p;
        }
        if hi == usize::MAX || d[p].branch() > d[hi].branch() {
            hi = p;
        }
    }
    if count < 2 || !(d[hi].branch() > d[lo].branch()) {
        return Normalized { values: vec![T::zero(); d.len()], degenerate: true, argmin: lo, argmax: hi };
    }
    let (dmin, range) = (d[lo], d[hi] - d[lo]);
    let values = d
        .iter()
        .zip(mask)
        .map(|(&v, &m)| {
            let n = (v - dmin) / range;
            if m { n } else { n.clamp_s(0.0, 1.0) }
        })
        .collect();
    Normalized { values, degenerate: false, argmin: lo, argmax: hi }
}

/// Adjoint of [`normalize_depth`] (non-degenerate case).
pub fn normalize_depth_backward(d: &[f64], mask: &[bool], norm: &Normalized<f64>, g: &[f64]) -> Vec<f64> {
    let (lo, hi) = (norm.argmin, norm.argmax);
    let range = d[hi] - d[lo];
    let mut out = vec![0.0; d.len()];
    let (mut g_min, mut g_range) = (0.0, 0.0);
    for p in 0..d.len() {
        if g[p] == 0.0 {
            continue;
        }
        let n = (d[p] - d[lo]) / range;
        if !mask[p] && !(0.0..=1.0).contains(&n) {
            continue;
        }
        out[p] += g[p] / range;
        g_min -= g[p] / range;
        g_range -= g[p] * n / range;
    }
    // range = d[hi] - d[lo]
    out[lo] += g_min - g_range;
    out[hi] += g_range;
    out
}

fn check_nonempty(mask: &[bool]) -> Result<usize, LossError> {
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(LossError::NoValidPixels),
        n => Ok(n),
    }
}

/// `10·sqrt(Var(g) + β·Mean(g)²)` with `g = ln(D̂ₙ+ε) − ln(D*ₙ+ε)` on the mask.
pub fn silog_loss<T: Scalar>(dn_hat: &[T], dn_star: &[f64], mask: &[bool], beta: f64, eps: f64) -> Result<T, LossError> {
    if dn_hat.len() != dn_star.len() || dn_hat.len() != mask.len() {
        return Err(LossError::ShapeMismatch((dn_hat.len(), 1, 1), (dn_star.len(), 1, 1)));
    }
    let n = check_nonempty(mask)? as f64;
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    for p in 0..mask.len() {
        if mask[p] {
            let g = (dn_hat[p] + eps).ln() - (dn_star[p] + eps).ln();
            s1 += g;
            s2 += g * g;
        }
    }
    let mean = s1 / n;
    let var = s2 / n - mean * mean;
    // population variance can round slightly below zero for constant residuals
    let var = var.max_s(T::zero());
    Ok((var + mean * mean * beta).sqrt() * 10.0)
}

/// Gradient of [`silog_loss`] with respect to `dn_hat`, times `scale`.
pub fn silog_backward(dn_hat: &[f64], dn_star: &[f64], mask: &[bool], beta: f64, eps: f64, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; dn_hat.len()];
    let n = mask.iter().filter(|&&m| m).count() as f64;
    if n == 0.0 {
        return out;
    }
    let g: Vec<f64> = (0..mask.len())
        .map(|p| if mask[p] { (dn_hat[p] + eps).ln() - (dn_star[p] + eps).ln() } else { 0.0 })
        .collect();
    let mean = g.iter().sum::<f64>() / n;
    let raw_var = g.iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
    let var_live = raw_var >= 0.0;
    let var = raw_var.max(0.0);
    let root = (var + beta * mean * mean).sqrt();
    if root == 0.0 {
        return out;
    }
    let d_inner = scale * 10.0 * 0.5 / root;
    for p in 0..mask.len() {
        if mask[p] {
            let d_var = if var_live { 2.0 * (g[p] - mean) / n } else { 0.0 };
            let d_mean_sq = 2.0 * beta * mean / n;
            out[p] = d_inner * (d_var + d_mean_sq) / (dn_hat[p] + eps);
        }
    }
    out
}

fn forward_diffs<T: Scalar>(d: &[T], w: usize, h: usize, p: usize) -> (T, T) {
    let (x, y) = (p % w, p / w);
    let gx = if x + 1 < w { d[p + 1] - d[p] } else { T::zero() };
    let gy = if y + 1 < h { d[p + w] - d[p] } else { T::zero() };
    (gx, gy)
}

/// Mean over masked pixels of `|∇x D̂ − ∇x D*| + |∇y D̂ − ∇y D*|`, forward
/// differences, zero on the last column/row.
pub fn grad_loss<T: Scalar>(d_hat: &[T], d_star: &[f64], mask: &[bool], w: usize, h: usize) -> Result<T, LossError> {
    if d_hat.len() != w * h || d_star.len() != w * h || mask.len() != w * h {
        return Err(LossError::ShapeMismatch((d_hat.len(), 1, 1), (w * h, 1, 1)));
    }
    let n = check_nonempty(mask)? as f64;
    let mut total = T::zero();
    for p in 0..w * h {
        if mask[p] {
            let (ax, ay) = forward_diffs(d_hat, w, h, p);
            let (bx, by) = forward_diffs(d_star, w, h, p);
            total += (ax - bx).abs() + (ay - by).abs();
        }
    }
    Ok(total / n)
}

/// Gradient of [`grad_loss`] with respect to `d_hat`, times `scale`.
pub fn grad_loss_backward(d_hat: &[f64], d_star: &[f64], mask: &[bool], w: usize, h: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let n = mask.iter().filter(|&&m| m).count() as f64;
    if n == 0.0 {
        return out;
    }
    let g = scale / n;
    let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    for p in 0..w * h {
        if !mask[p] {
            continue;
        }
        let (ax, ay) = forward_diffs(d_hat, w, h, p);
        let (bx, by) = forward_diffs(d_star, w, h, p);
        if p % w + 1 < w {
            let s = g * sign(ax - bx);
            out[p + 1] += s;
            out[p] -= s;
        }
        if p / w + 1 < h {
            let s = g * sign(ay - by);
            out[p + w] += s;
            out[p] -= s;
        }
    }
    out
}

/// Warm-up-to-cap weight: `base · min(1, t / t_warm) · w_max`.
pub fn schedule_weight(base: f64, t: u64, t_warm: u64, w_max: f64) -> f64 {
    assert!(t_warm > 0, "t_warm must be positive");
    if t >= t_warm {
        base * w_max
    } else {
        base * (t as f64 / t_warm as f64) * w_max
    }
}
