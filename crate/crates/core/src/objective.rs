//! Full training objective for one frame: photometric + scheduled depth-prior
//! terms + opacity entropy + velocity coherence, with its analytic gradient.

use rayon::prelude::*;

use crate::field::{self, PrimParams};
use crate::image::Image;
use crate::losses::depth::{grad_loss_backward, normalize_depth_backward, silog_backward};
use crate::losses::regularizers::{
    coherence_neighbours, coherence_rows, opacity_entropy, opacity_entropy_backward, velocity_coherence_backward,
    velocity_coherence_with,
};
use crate::losses::{accumulate, geo_terms, photometric_backward, GeoTerms, LossReport, PreparedPrior, ScheduleConfig};
use crate::math::Vec3;
use crate::raster::{self, Buffers, Camera, RasterConfig, SplatGrad};
use crate::scalar::Scalar;

/// Everything the objective needs besides the parameters.
#[derive(Clone, Copy, Debug)]
pub struct FrameObjective<'a> {
    pub degree: u32,
    pub camera: &'a Camera,
    pub time: f64,
    /// Interval to the previous frame; `None` disables velocity coherence.
    pub dt: Option<f64>,
    pub observed: &'a Image,
    pub prior: Option<&'a PreparedPrior>,
    pub loss: &'a ScheduleConfig,
    pub raster: &'a RasterConfig,
    pub step: u64,
    pub seed: u64,
}

/// Unweighted terms of one evaluation.
#[derive(Clone, Debug)]
pub struct Terms<T> {
    pub geo: GeoTerms<T>,
    pub entropy: T,
    pub velocity: T,
}

impl<'a> FrameObjective<'a> {
    fn stride(&self) -> usize {
        field::prim_stride(self.degree)
    }

    fn prims<T: Scalar>(&self, params: &[T]) -> Vec<PrimParams<T>> {
        params.chunks_exact(self.stride()).map(|s| PrimParams::from_slice(s, self.degree)).collect()
    }

    fn velocity_seed(&self) -> u64 {
        self.seed ^ self.step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    /// Velocities between the previous and current frame, rows evaluated and
    /// their neighbour lists.
    fn motion<T: Scalar>(&self, prims: &[PrimParams<T>]) -> Option<(Vec<Vec3<T>>, Vec<usize>, Vec<Vec<usize>>)> {
        let dt = self.dt?;
        if prims.len() < 2 || self.loss.k_nn == 0 {
            return None;
        }
        let now: Vec<Vec3<T>> = prims.iter().map(|p| p.position_at(self.time)).collect();
        let v = prims
            .iter()
            .zip(&now)
            .map(|(p, c)| {
                let prev = p.position_at(self.time - dt);
                [c[0] - prev[0], c[1] - prev[1], c[2] - prev[2]]
            })
            .collect();
        let rows = coherence_rows(prims.len(), self.loss.vel_subsample, self.velocity_seed());
        let nbrs = coherence_neighbours(&now, self.time, self.loss.k_nn, &rows);
        Some((v, rows, nbrs))
    }

    pub fn render<T: Scalar>(&self, params: &[T]) -> Buffers<T> {
        let splats = raster::splat_all(params, self.degree, self.camera, self.time, self.raster);
        let order = raster::depth_order(&splats);
        raster::composite(&splats, &order, self.camera, self.raster)
    }

    pub fn terms<T: Scalar>(&self, params: &[T]) -> Terms<T> {
        let buffers = self.render(params);
        let geo = geo_terms(self.observed, &buffers, self.prior, self.loss, self.step);
        let prims = self.prims(params);
        let alphas: Vec<T> = prims.iter().map(|p| p.opacity_at(self.time)).collect();
        let entropy = opacity_entropy(&alphas);
        let velocity = match self.motion(&prims) {
            Some((v, rows, nbrs)) => velocity_coherence_with(&v, &rows, &nbrs),
            None => T::zero(),
        };
        Terms { geo, entropy, velocity }
    }

    /// Weighted total, skipping non-finite terms like [`accumulate`].
    pub fn value<T: Scalar>(&self, params: &[T]) -> T {
        let t = self.terms(params);
        let parts = [
            (Some(t.geo.photo), 1.0),
            (t.geo.silog, t.geo.w_si),
            (t.geo.grad, t.geo.w_grad),
            (Some(t.entropy), self.loss.lambda_ent),
            (Some(t.velocity), self.loss.lambda_vel),
        ];
        let mut total = T::zero();
        for (v, w) in parts {
            if let Some(v) = v.filter(|v| v.is_finite()) {
                if w != 0.0 {
                    total += v * w;
                }
            }
        }
        total
    }

    pub fn report(&self, params: &[f64]) -> LossReport {
        let t = self.terms(params);
        accumulate(&t.geo, t.entropy, t.velocity, self.loss)
    }

    /// Loss report, gradient with respect to `params`, and per-primitive
    /// screen-space positional gradient norms in pixel units.
    pub fn evaluate(&self, params: &[f64]) -> Evaluation {
        let cam = self.camera;
        let (w, h) = (cam.width, cam.height);
        let splats = raster::splat_all(params, self.degree, cam, self.time, self.raster);
        let order = raster::depth_order(&splats);
        let buffers = raster::composite(&splats, &order, cam, self.raster);
        let geo = geo_terms(self.observed, &buffers, self.prior, self.loss, self.step);
        let prims = self.prims(params);
        let alphas: Vec<f64> = prims.iter().map(|p| p.opacity_at(self.time)).collect();
        let entropy = opacity_entropy(&alphas);
        let motion = self.motion(&prims);
        let velocity = motion.as_ref().map_or(0.0, |(v, rows, nbrs)| velocity_coherence_with(v, rows, nbrs));
        let report = accumulate(&geo, entropy, velocity, self.loss);
        let live = |name: &str| !report.dropped.contains(&name);

        let d_rgb = if live("photo") {
            photometric_backward(&self.observed.data, &buffers.rgb, w, h, self.loss.lambda_dssim, 1.0)
        } else {
            vec![0.0; 3 * w * h]
        };
        let mut d_depth = vec![0.0; w * h];
        if let (Some(prior), Some(hat)) = (self.prior, geo.hat_norm.as_ref()) {
            let mask = &prior.valid.mask;
            let mut g_norm = vec![0.0; w * h];
            if geo.silog.is_some() && live("silog") && geo.w_si != 0.0 {
                let g = silog_backward(&hat.values, &prior.star.values, mask, self.loss.beta, self.loss.epsilon, geo.w_si);
                g_norm.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            if geo.grad.is_some() && live("grad") && geo.w_grad != 0.0 {
                let g = grad_loss_backward(&hat.values, &prior.star.values, mask, w, h, geo.w_grad);
                g_norm.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            if g_norm.iter().any(|&v| v != 0.0) {
                d_depth = normalize_depth_backward(&buffers.depth, mask, hat, &g_norm);
            }
        }
        let d_alpha = vec![0.0; w * h];
        let splat_grads = raster::composite_backward(&splats, &order, cam, self.raster, &buffers, &d_rgb, &d_depth, &d_alpha);

        let d_opacity = if live("entropy") && self.loss.lambda_ent != 0.0 {
            opacity_entropy_backward(&alphas, self.loss.lambda_ent)
        } else {
            vec![0.0; prims.len()]
        };
        let d_vel: Option<(Vec<Vec3<f64>>, f64)> = match (&motion, self.dt) {
            (Some((v, rows, nbrs)), Some(dt)) if live("velocity") && self.loss.lambda_vel != 0.0 => {
                // v = μ(t) − μ(t − dt) depends on velocity only, with slope t − (t − dt)
                let slope = self.time - (self.time - dt);
                Some((velocity_coherence_backward(v, rows, nbrs, self.loss.lambda_vel), slope))
            }
            _ => None,
        };

        let stride = self.stride();
        let vel_off = field::Attr::Velocity.offset(self.degree);
        let mut grad = vec![0.0; params.len()];
        grad.par_chunks_mut(stride).enumerate().for_each(|(i, out)| {
            let sg = splats[i].as_ref().map(|_| &splat_grads[i]);
            raster::splat_backward(&prims[i], self.degree, cam, self.time, self.raster, sg, d_opacity[i], [0.0; 3], out);
            if let Some((dv, slope)) = &d_vel {
                for a in 0..3 {
                    out[vel_off + a] += dv[i][a] * slope;
                }
            }
        });
        let screen_grad = splat_grads.iter().map(|g: &SplatGrad| (g.mean[0] * g.mean[0] + g.mean[1] * g.mean[1]).sqrt()).collect();
        Evaluation { report, grad, screen_grad, buffers }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: LossReport,
    pub grad: Vec<f64>,
    pub screen_grad: Vec<f64>,
    pub buffers: Buffers<f64>,
}
