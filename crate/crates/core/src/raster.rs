//! Deterministic software splatter.
//!
//! Primitives are evaluated at time `t`, projected through a pinhole camera
//! with an EWA-style local affine approximation, depth sorted and alpha
//! composited front to back. The forward pass is generic over [`Scalar`];
//! [`composite_backward`] and [`splat_backward`] are the analytic adjoints.

use std::time::Instant;

use rayon::prelude::*;

use crate::field::{self, GaussianField, GaussianPrimitive, PrimParams, SH_C0, SH_C1};
use crate::image::Image;
use crate::math::{self, Mat3, Vec3};
use crate::scalar::Scalar;

/// Rigid transform mapping camera coordinates to world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: math::identity3(), translation: [0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_from_camera: Pose,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        Self { fx, fy, cx, cy, width, height, world_from_camera: Pose::identity() }
    }

    /// Pinhole camera looking down +z with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.world_from_camera = pose;
        self
    }

    /// Rotation taking world directions into the camera frame.
    pub fn camera_from_world(&self) -> Mat3<f64> {
        math::transpose3(&self.world_from_camera.rotation)
    }

    pub fn position(&self) -> Vec3<f64> {
        self.world_from_camera.translation
    }
}

/// Thresholds of the rasterizer. Defaults are fixed for reproducibility.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterConfig {
    pub z_near: f64,
    /// Isotropic screen-space covariance floor in px².
    pub aa_floor: f64,
    pub alpha_max: f64,
    pub t_min: f64,
    pub min_weight: f64,
    /// Screen-space footprint half-width in standard deviations.
    pub extent_sigma: f64,
    pub min_det: f64,
    pub depth_alpha_floor: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            z_near: 0.01,
            aa_floor: 0.3,
            alpha_max: 0.999,
            t_min: 1e-4,
            min_weight: 1.0 / 255.0,
            extent_sigma: 3.0,
            min_det: 1e-12,
            depth_alpha_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// H×W×3 in [0, 1].
    pub rgb: Image,
    /// Alpha-normalized expected depth, 0 where nothing was hit.
    pub depth: Image,
    pub alpha: Image,
}

/// A primitive after projection at a given time.
#[derive(Clone, Copy, Debug)]
pub struct Splat<T> {
    pub mean: [T; 2],
    /// Screen-space covariance `[a, b, c]` of `[[a, b], [b, c]]`.
    pub cov: [T; 3],
    pub conic: [T; 3],
    pub depth: T,
    pub opacity: T,
    pub color: [T; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean2d: [f64; 2],
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
    pub visible: bool,
}

/// Projects a single primitive at time `t`.
pub fn project(p: &GaussianPrimitive, cam: &Camera, t: f64) -> Projection {
    let degree = p.sh_degree().unwrap_or(0);
    let mut buf = vec![0.0; field::prim_stride(degree)];
    field::write_prim_slice(p, degree, &mut buf);
    let pp = PrimParams::from_slice(&buf, degree);
    let cfg = RasterConfig { min_det: f64::NEG_INFINITY, ..RasterConfig::default() };
    match splat_primitive(&pp, degree, cam, t, &cfg) {
        Some(s) => Projection {
            mean2d: s.mean,
            cov2d: [[s.cov[0], s.cov[1]], [s.cov[1], s.cov[2]]],
            depth: s.depth,
            visible: true,
        },
        None => {
            let mu = pp.position_at(t);
            let rel = [mu[0] - cam.position()[0], mu[1] - cam.position()[1], mu[2] - cam.position()[2]];
            let xc = math::mat_vec(&cam.camera_from_world(), &rel);
            Projection { mean2d: [f64::NAN; 2], cov2d: [[f64::NAN; 2]; 2], depth: xc[2], visible: false }
        }
    }
}

/// Projects one primitive; `None` when behind the near plane or degenerate.
pub fn splat_primitive<T: Scalar>(
    p: &PrimParams<T>,
    degree: u32,
    cam: &Camera,
    t: f64,
    cfg: &RasterConfig,
) -> Option<Splat<T>> {
    let mu = p.position_at(t);
    let cpos = cam.position();
    let rel = [mu[0] - cpos[0], mu[1] - cpos[1], mu[2] - cpos[2]];
    let w = cam.camera_from_world();
    let xc = math::mat_vec(&w, &rel);
    if xc[2].branch() <= cfg.z_near {
        return None;
    }
    let iz = T::cst(1.0) / xc[2];
    let mean = [xc[0] * iz * cam.fx + cam.cx, xc[1] * iz * cam.fy + cam.cy];

    let j = [
        [iz * cam.fx, T::zero(), -(xc[0] * iz * iz) * cam.fx],
        [T::zero(), iz * cam.fy, -(xc[1] * iz * iz) * cam.fy],
    ];
    let mut tm = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            tm[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    let rot = math::quat_to_mat(&p.rotation_at(t));
    let sigma = field::covariance_from_mat(&rot, &p.log_scale);
    let st0 = sym_mul(&sigma, &tm[0]);
    let st1 = sym_mul(&sigma, &tm[1]);
    let a = math::dot3(&tm[0], &st0) + cfg.aa_floor;
    let b = math::dot3(&tm[0], &st1);
    let c = math::dot3(&tm[1], &st1) + cfg.aa_floor;
    let det = a * c - b * b;
    if !(det.branch() >= cfg.min_det) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let (ab, cb, db) = (a.branch(), c.branch(), det.branch());
    let mid = 0.5 * (ab + cb);
    let lam = mid + (mid * mid - db).max(0.1).sqrt();
    let radius = cfg.extent_sigma * lam.sqrt();

    let opacity = p.opacity_at(t);
    let dir = if degree >= 1 {
        let n = math::dot3(&rel, &rel).sqrt();
        [rel[0] / n, rel[1] / n, rel[2] / n]
    } else {
        [T::zero(), T::zero(), T::cst(1.0)]
    };
    let raw = field::sh_eval(&p.sh, degree, &dir);
    let color = [raw[0].clamp_s(0.0, 1.0), raw[1].clamp_s(0.0, 1.0), raw[2].clamp_s(0.0, 1.0)];
    Some(Splat { mean, cov: [a, b, c], conic, depth: xc[2], opacity, color, radius })
}

fn sym_mul<T: Scalar>(m: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Front-to-back order: ascending depth, ties by primitive index.
pub fn depth_order<T: Scalar>(splats: &[Option<Splat<T>>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| splats[i].is_some()).collect();
    order.sort_by(|&i, &j| {
        let (di, dj) = (splats[i].unwrap().depth.branch(), splats[j].unwrap().depth.branch());
        di.total_cmp(&dj).then(i.cmp(&j))
    });
    order
}

/// Sorted splat indices whose footprint intersects each row.
fn row_bins<T: Scalar>(splats: &[Option<Splat<T>>], order: &[usize], height: usize) -> Vec<Vec<usize>> {
    let mut bins = vec![Vec::new(); height];
    for &i in order {
        let s = splats[i].as_ref().unwrap();
        let my = s.mean[1].branch();
        let lo = (my - s.radius).ceil().max(0.0);
        let hi = (my + s.radius).floor().min(height as f64 - 1.0);
        if !(lo <= hi) {
            continue;
        }
        for bin in &mut bins[lo as usize..=hi as usize] {
            bin.push(i);
        }
    }
    bins
}

/// One accepted contribution at a pixel.
#[derive(Clone, Copy, Debug)]
struct Contribution<T> {
    idx: usize,
    /// Gaussian falloff `G = exp(-q/2)`; the unclamped weight is `opacity · G`.
    gauss: T,
    weight: T,
    clamped: bool,
    dx: f64,
    dy: f64,
    transmittance: T,
}

/// Walks the sorted list for one pixel, applying every culling rule.
fn walk_pixel<T: Scalar, F: FnMut(Contribution<T>)>(
    px: f64,
    py: f64,
    list: &[usize],
    splats: &[Option<Splat<T>>],
    cfg: &RasterConfig,
    mut visit: F,
) -> T {
    let mut trans = T::cst(1.0);
    for &i in list {
        let s = splats[i].as_ref().unwrap();
        let dxb = px - s.mean[0].branch();
        if dxb.abs() > s.radius || (py - s.mean[1].branch()).abs() > s.radius {
            continue;
        }
        let dx = -s.mean[0] + px;
        let dy = -s.mean[1] + py;
        let q = s.conic[0] * dx * dx + s.conic[1] * dx * dy * 2.0 + s.conic[2] * dy * dy;
        let gauss = (q * -0.5).exp();
        let raw = s.opacity * gauss;
        if raw.branch() < cfg.min_weight {
            continue;
        }
        let clamped = raw.branch() > cfg.alpha_max;
        let weight = if clamped { T::cst(cfg.alpha_max) } else { raw };
        visit(Contribution {
            idx: i,
            gauss,
            weight,
            clamped,
            dx: dx.branch(),
            dy: dy.branch(),
            transmittance: trans,
        });
        trans *= -weight + 1.0;
        if trans.branch() < cfg.t_min {
            break;
        }
    }
    trans
}

/// Composited images in generic scalar form.
#[derive(Clone, Debug)]
pub struct Buffers<T> {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<T>,
    pub depth: Vec<T>,
    pub alpha: Vec<T>,
}

pub fn composite<T: Scalar>(splats: &[Option<Splat<T>>], order: &[usize], cam: &Camera, cfg: &RasterConfig) -> Buffers<T> {
    let (w, h) = (cam.width, cam.height);
    let bins = row_bins(splats, order, h);
    let rows: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = vec![T::zero(); 3 * w];
            let mut depth = vec![T::zero(); w];
            let mut alpha = vec![T::zero(); w];
            for x in 0..w {
                let mut col = [T::zero(); 3];
                let mut nz = T::zero();
                let mut acc = T::zero();
                walk_pixel(x as f64, y as f64, &bins[y], splats, cfg, |ct| {
                    let s = splats[ct.idx].as_ref().unwrap();
                    let tw = ct.transmittance * ct.weight;
                    for c in 0..3 {
                        col[c] += tw * s.color[c];
                    }
                    nz += tw * s.depth;
                    acc += tw;
                });
                rgb[3 * x..3 * x + 3].copy_from_slice(&col);
                depth[x] = nz / acc.max_s(T::cst(cfg.depth_alpha_floor));
                alpha[x] = acc;
            }
            (rgb, depth, alpha)
        })
        .collect();
    let mut out = Buffers {
        width: w,
        height: h,
        rgb: Vec::with_capacity(3 * w * h),
        depth: Vec::with_capacity(w * h),
        alpha: Vec::with_capacity(w * h),
    };
    for (rgb, depth, alpha) in rows {
        out.rgb.extend(rgb);
        out.depth.extend(depth);
        out.alpha.extend(alpha);
    }
    out
}

/// Projects every primitive of a flat parameter slice.
pub fn splat_all<T: Scalar>(
    params: &[T],
    degree: u32,
    cam: &Camera,
    t: f64,
    cfg: &RasterConfig,
) -> Vec<Option<Splat<T>>> {
    let stride = field::prim_stride(degree);
    params
        .chunks_exact(stride)
        .map(|s| splat_primitive(&PrimParams::from_slice(s, degree), degree, cam, t, cfg))
        .collect()
}

pub fn rasterize(field: &GaussianField, cam: &Camera, t: f64) -> RenderOutput {
    rasterize_with(field, cam, t, &RasterConfig::default())
}

pub fn rasterize_with(field: &GaussianField, cam: &Camera, t: f64, cfg: &RasterConfig) -> RenderOutput {
    let degree = field.sh_degree;
    let stride = field::prim_stride(degree);
    let mut params = vec![0.0; stride * field.len()];
    for (p, chunk) in field.primitives.iter().zip(params.chunks_exact_mut(stride)) {
        field::write_prim_slice(p, degree, chunk);
    }
    let splats = splat_all(&params, degree, cam, t, cfg);
    let order = depth_order(&splats);
    buffers_to_output(composite(&splats, &order, cam, cfg))
}

pub fn buffers_to_output(b: Buffers<f64>) -> RenderOutput {
    RenderOutput {
        rgb: Image::from_data(b.width, b.height, 3, b.rgb),
        depth: Image::from_data(b.width, b.height, 1, b.depth),
        alpha: Image::from_data(b.width, b.height, 1, b.alpha),
    }
}

/// Gradient of the loss with respect to one projected splat.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

const BACKWARD_ROWS: usize = 4;

/// Adjoint of [`composite`]. Upstream gradients are per pixel: `d_rgb` is
/// H×W×3, `d_depth` and `d_alpha` are H×W. Reduction runs over fixed row
/// blocks in a fixed order, so results do not depend on the thread count.
pub fn composite_backward(
    splats: &[Option<Splat<f64>>],
    order: &[usize],
    cam: &Camera,
    cfg: &RasterConfig,
    out: &Buffers<f64>,
    d_rgb: &[f64],
    d_depth: &[f64],
    d_alpha: &[f64],
) -> Vec<SplatGrad> {
    let (w, h) = (cam.width, cam.height);
    let n = splats.len();
    let bins = row_bins(splats, order, h);
    let blocks: Vec<Vec<SplatGrad>> = (0..h.div_ceil(BACKWARD_ROWS))
        .into_par_iter()
        .map(|blk| {
            let mut grads = vec![SplatGrad::default(); n];
            let mut contribs: Vec<Contribution<f64>> = Vec::new();
            for y in blk * BACKWARD_ROWS..((blk + 1) * BACKWARD_ROWS).min(h) {
                for x in 0..w {
                    let pix = y * w + x;
                    let g_rgb = [d_rgb[3 * pix], d_rgb[3 * pix + 1], d_rgb[3 * pix + 2]];
                    let (gd, ga) = (d_depth[pix], d_alpha[pix]);
                    if g_rgb == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                        continue;
                    }
                    contribs.clear();
                    walk_pixel(x as f64, y as f64, &bins[y], splats, cfg, |c| contribs.push(c));
                    if contribs.is_empty() {
                        continue;
                    }
                    let acc = out.alpha[pix];
                    let (g_nz, g_acc) = if acc > cfg.depth_alpha_floor {
                        let nz = out.depth[pix] * acc;
                        (gd / acc, ga - gd * nz / (acc * acc))
                    } else {
                        (gd / cfg.depth_alpha_floor, ga)
                    };
                    // suffix = Σ_{j>k} T_j w_j (g · f_j)
                    let mut suffix = 0.0;
                    for ct in contribs.iter().rev() {
                        let s = splats[ct.idx].as_ref().unwrap();
                        let gf = g_rgb[0] * s.color[0] + g_rgb[1] * s.color[1] + g_rgb[2] * s.color[2]
                            + g_nz * s.depth
                            + g_acc;
                        let tw = ct.transmittance * ct.weight;
                        let d_weight = ct.transmittance * gf - suffix / (1.0 - ct.weight);
                        suffix += tw * gf;
                        let sg = &mut grads[ct.idx];
                        for c in 0..3 {
                            sg.color[c] += tw * g_rgb[c];
                        }
                        sg.depth += tw * g_nz;
                        if ct.clamped {
                            continue;
                        }
                        sg.opacity += d_weight * ct.gauss;
                        let dq = -0.5 * ct.gauss * d_weight * s.opacity;
                        let (dx, dy) = (ct.dx, ct.dy);
                        sg.conic[0] += dq * dx * dx;
                        sg.conic[1] += dq * 2.0 * dx * dy;
                        sg.conic[2] += dq * dy * dy;
                        let ddx = dq * (2.0 * s.conic[0] * dx + 2.0 * s.conic[1] * dy);
                        let ddy = dq * (2.0 * s.conic[1] * dx + 2.0 * s.conic[2] * dy);
                        sg.mean[0] -= ddx;
                        sg.mean[1] -= ddy;
                    }
                }
            }
            grads
        })
        .collect();
    let mut total = vec![SplatGrad::default(); n];
    for block in &blocks {
        for (t, g) in total.iter_mut().zip(block) {
            t.add(g);
        }
    }
    total
}

/// Chains a splat gradient (plus optional extra gradients on the opacity at
/// time `t` and the center at time `t`) back to the primitive's parameters.
/// Accumulates into `out`, laid out like the primitive's parameter slice.
#[allow(clippy::too_many_arguments)]
pub fn splat_backward(
    p: &PrimParams<f64>,
    degree: u32,
    cam: &Camera,
    t: f64,
    cfg: &RasterConfig,
    grad: Option<&SplatGrad>,
    d_opacity_extra: f64,
    d_mu_extra: Vec3<f64>,
    out: &mut [f64],
) {
    let nsh = field::sh_len(degree);
    let o = 11 + 3 * nsh;
    let mut d_mu = d_mu_extra;
    let mut d_opacity = d_opacity_extra;

    if let Some(g) = grad {
        let mu = p.position_at(t);
        let cpos = cam.position();
        let rel = [mu[0] - cpos[0], mu[1] - cpos[1], mu[2] - cpos[2]];
        let w = cam.camera_from_world();
        let xc = math::mat_vec(&w, &rel);
        let iz = 1.0 / xc[2];
        let (fx, fy) = (cam.fx, cam.fy);
        let j = [[fx * iz, 0.0, -fx * xc[0] * iz * iz], [0.0, fy * iz, -fy * xc[1] * iz * iz]];
        let mut tm = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                tm[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
            }
        }
        let q_norm = math::quat_normalize(&p.rotation);
        let omega = [p.rotor_rate[0] * t, p.rotor_rate[1] * t, p.rotor_rate[2] * t];
        let e = math::exp_quat(&omega);
        let q = math::quat_mul(&e, &q_norm);
        let rot = math::quat_to_mat(&q);
        let s = [p.log_scale[0].exp(), p.log_scale[1].exp(), p.log_scale[2].exp()];
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                m[i][k] = rot[i][k] * s[k];
            }
        }
        let sigma = field::covariance_from_mat(&rot, &p.log_scale);
        let st0 = sym_mul(&sigma, &tm[0]);
        let st1 = sym_mul(&sigma, &tm[1]);
        let a = math::dot3(&tm[0], &st0) + cfg.aa_floor;
        let b = math::dot3(&tm[0], &st1);
        let c = math::dot3(&tm[1], &st1) + cfg.aa_floor;
        let det = a * c - b * b;
        let det2 = det * det;

        // colour
        let dir = if degree >= 1 {
            let n = math::dot3(&rel, &rel).sqrt();
            [rel[0] / n, rel[1] / n, rel[2] / n]
        } else {
            [0.0, 0.0, 1.0]
        };
        let raw = field::sh_eval(&p.sh, degree, &dir);
        let mut d_dir = [0.0; 3];
        for ch in 0..3 {
            let gc = if (0.0..=1.0).contains(&raw[ch]) { g.color[ch] } else { 0.0 };
            out[11 + ch] += SH_C0 * gc;
            if degree >= 1 {
                out[11 + 3 + ch] += -SH_C1 * dir[1] * gc;
                out[11 + 6 + ch] += SH_C1 * dir[2] * gc;
                out[11 + 9 + ch] += -SH_C1 * dir[0] * gc;
                d_dir[0] += -SH_C1 * p.sh[3][ch] * gc;
                d_dir[1] += -SH_C1 * p.sh[1][ch] * gc;
                d_dir[2] += SH_C1 * p.sh[2][ch] * gc;
            }
        }
        if degree >= 1 {
            let n = math::dot3(&rel, &rel).sqrt();
            let proj = math::dot3(&dir, &d_dir);
            for i in 0..3 {
                d_mu[i] += (d_dir[i] - dir[i] * proj) / n;
            }
        }

        d_opacity += g.opacity;

        // conic -> screen covariance
        let [gca, gcb, gcc] = g.conic;
        let ga = gca * (-c * c / det2) + gcb * (b * c / det2) + gcc * (-b * b / det2);
        let gb = gca * (2.0 * b * c / det2) + gcb * (-(a * c + b * b) / det2) + gcc * (2.0 * a * b / det2);
        let gcv = gca * (-b * b / det2) + gcb * (a * b / det2) + gcc * (-a * a / det2);

        // screen covariance -> Σ and T = J·W
        let mut d_sigma = [[0.0; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                d_sigma[i][k] = ga * tm[0][i] * tm[0][k] + gb * tm[0][i] * tm[1][k] + gcv * tm[1][i] * tm[1][k];
            }
        }
        let mut d_tm = [[0.0; 3]; 2];
        for i in 0..3 {
            d_tm[0][i] = 2.0 * ga * st0[i] + gb * st1[i];
            d_tm[1][i] = gb * st0[i] + 2.0 * gcv * st1[i];
        }
        let mut d_j = [[0.0; 3]; 2];
        for r in 0..2 {
            for k in 0..3 {
                d_j[r][k] = (0..3).map(|cc| d_tm[r][cc] * w[k][cc]).sum();
            }
        }
        let mut d_xc = [0.0; 3];
        d_xc[0] += d_j[0][2] * (-fx * iz * iz);
        d_xc[1] += d_j[1][2] * (-fy * iz * iz);
        d_xc[2] += d_j[0][0] * (-fx * iz * iz)
            + d_j[0][2] * (2.0 * fx * xc[0] * iz * iz * iz)
            + d_j[1][1] * (-fy * iz * iz)
            + d_j[1][2] * (2.0 * fy * xc[1] * iz * iz * iz);
        // mean and depth
        d_xc[0] += g.mean[0] * fx * iz;
        d_xc[2] -= g.mean[0] * fx * xc[0] * iz * iz;
        d_xc[1] += g.mean[1] * fy * iz;
        d_xc[2] -= g.mean[1] * fy * xc[1] * iz * iz;
        d_xc[2] += g.depth;
        let d_rel = math::mat_t_vec(&w, &d_xc);
        for i in 0..3 {
            d_mu[i] += d_rel[i];
        }

        // Σ = M·Mᵀ, M = R·diag(s)
        let mut d_m = [[0.0; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                d_m[i][k] = (0..3).map(|l| (d_sigma[i][l] + d_sigma[l][i]) * m[l][k]).sum();
            }
        }
        let mut d_rot = [[0.0; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                d_rot[i][k] = d_m[i][k] * s[k];
            }
        }
        for k in 0..3 {
            let ds: f64 = (0..3).map(|i| d_m[i][k] * rot[i][k]).sum();
            out[3 + k] += ds * s[k];
        }
        let d_q = math::quat_to_mat_backward(&q, &d_rot);
        let (d_e, d_qn) = math::quat_mul_backward(&e, &q_norm, &d_q);
        let d_omega = math::exp_quat_backward(&omega, &d_e);
        for k in 0..3 {
            out[o + 3 + k] += d_omega[k] * t;
        }
        let d_raw = math::quat_normalize_backward(&p.rotation, &d_qn);
        for k in 0..4 {
            out[6 + k] += d_raw[k];
        }
    }

    if d_opacity != 0.0 {
        let sig = math::sigmoid(p.opacity_logit);
        let alpha = p.opacity_at(t);
        let dtc = t - p.t_center;
        let ts2 = p.t_sigma * p.t_sigma;
        out[10] += d_opacity * alpha * (1.0 - sig);
        out[o + 6] += d_opacity * alpha * dtc / ts2;
        out[o + 7] += d_opacity * alpha * dtc * dtc / (ts2 * p.t_sigma);
    }
    for k in 0..3 {
        out[k] += d_mu[k];
        out[o + k] += d_mu[k] * t;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchStats {
    pub fps_mean: f64,
    pub fps_std: f64,
    pub per_repeat_fps: Vec<f64>,
    /// File operations observed while the timer was running.
    pub io_calls: u64,
}

/// Raster-only throughput: times `rasterize` calls and nothing else.
pub fn bench_raster(field: &GaussianField, cam: &Camera, times: &[f64], repeats: usize) -> BenchStats {
    assert!(repeats >= 1, "repeats must be >= 1");
    assert!(!times.is_empty(), "at least one frame time");
    let cfg = RasterConfig::default();
    let degree = field.sh_degree;
    let stride = field::prim_stride(degree);
    let mut params = vec![0.0; stride * field.len()];
    for (p, chunk) in field.primitives.iter().zip(params.chunks_exact_mut(stride)) {
        field::write_prim_slice(p, degree, chunk);
    }
    let pass = || {
        for &t in times {
            let splats = splat_all(&params, degree, cam, t, &cfg);
            let order = depth_order(&splats);
            std::hint::black_box(composite(&splats, &order, cam, &cfg));
        }
    };
    // untimed warm-up so caches and the thread pool are hot
    pass();
    let io_before = crate::io::io_call_count();
    let mut fps = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        pass();
        let elapsed = start.elapsed().as_secs_f64().max(1e-9);
        fps.push(times.len() as f64 / elapsed);
    }
    let io_calls = crate::io::io_call_count() - io_before;
    let mean = fps.iter().sum::<f64>() / fps.len() as f64;
    let var = fps.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / fps.len() as f64;
    BenchStats { fps_mean: mean, fps_std: var.sqrt(), per_repeat_fps: fps, io_calls }
}
