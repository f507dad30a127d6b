//! Central finite-difference checks.
//!
//! [`branch_locked_fd`] evaluates the function on [`Perturbed`] scalars, so
//! every discrete decision stays on the branch taken at `x` while the
//! perturbed channel moves by ±h. The result is the derivative of the active
//! smooth piece, which is what an analytic gradient of a piecewise-smooth
//! objective returns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{self, GaussianField, GaussianPrimitive};
use crate::image::Image;
use crate::losses::{LossReport, PreparedPrior, PriorFrame, ScheduleConfig};
use crate::objective::FrameObjective;
use crate::raster::{self, Camera, RasterConfig};
use crate::scalar::Perturbed;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const MIN_MAGNITUDE: f64 = 1e-6;

fn lifted(x: &[f64], i: usize, delta: f64) -> Vec<Perturbed> {
    x.iter()
        .enumerate()
        .map(|(k, &v)| Perturbed::new(v, if k == i { v + delta } else { v }))
        .collect()
}

pub fn branch_locked_fd<F>(f: F, x: &[f64], h: f64, indices: &[usize]) -> Vec<f64>
where
    F: Fn(&[Perturbed]) -> Perturbed,
{
    indices
        .iter()
        .map(|&i| {
            let plus = f(&lifted(x, i, h)).value;
            let minus = f(&lifted(x, i, -h)).value;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn plain_fd<F>(f: F, x: &[f64], h: f64, indices: &[usize]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut y = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            y[i] = x[i] + h;
            let plus = f(&y);
            y[i] = x[i] - h;
            let minus = f(&y);
            y[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|)`, 0 when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Comparison {
    /// Components whose magnitude exceeded the floor.
    pub checked: usize,
    pub failures: Vec<(usize, f64, f64)>,
    pub max_rel_err: f64,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares analytic and numeric gradients on components where either
/// exceeds `min_magnitude`.
pub fn compare(indices: &[usize], analytic: &[f64], numeric: &[f64], rel_tol: f64, min_magnitude: f64) -> Comparison {
    let mut c = Comparison::default();
    for (k, &i) in indices.iter().enumerate() {
        let (a, n) = (analytic[i], numeric[k]);
        if a.abs().max(n.abs()) <= min_magnitude {
            continue;
        }
        c.checked += 1;
        let e = relative_error(a, n);
        c.max_rel_err = c.max_rel_err.max(e);
        if !(e <= rel_tol) {
            c.failures.push((i, a, n));
        }
    }
    c
}

/// A small randomized objective instance for gradient checking.
#[derive(Clone, Debug)]
pub struct CheckInstance {
    pub params: Vec<f64>,
    pub degree: u32,
    pub camera: Camera,
    pub time: f64,
    pub dt: Option<f64>,
    pub observed: Image,
    pub prior: PreparedPrior,
    pub loss: ScheduleConfig,
    pub raster: RasterConfig,
    pub step: u64,
    pub seed: u64,
}

impl CheckInstance {
    pub fn objective(&self) -> FrameObjective<'_> {
        FrameObjective {
            degree: self.degree,
            camera: &self.camera,
            time: self.time,
            dt: self.dt,
            observed: &self.observed,
            prior: Some(&self.prior),
            loss: &self.loss,
            raster: &self.raster,
            step: self.step,
            seed: self.seed,
        }
    }
}

fn random_prims(rng: &mut ChaCha8Rng, n: usize, focal: f64) -> Vec<GaussianPrimitive> {
    (0..n)
        .map(|_| {
            let z = rng.random_range(2.0..5.0);
            let spread = 0.4 * z * 16.0 / focal;
            let mut p = GaussianPrimitive::new(
                [rng.random_range(-spread..spread), rng.random_range(-spread..spread), z],
                [rng.random_range(-2.3..-0.9), rng.random_range(-2.3..-0.9), rng.random_range(-2.3..-0.9)],
                rng.random_range(0.3..0.9),
                [rng.random(), rng.random(), rng.random()],
            )
            .with_sh_degree(1);
            let scale = rng.random_range(0.5..2.0);
            let q: [f64; 4] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt().max(1e-3);
            p.rotation = q.map(|v| scale * v / n);
            for k in 1..4 {
                p.sh_coeffs[k] = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            }
            p.velocity = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            p.rotor_rate = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            p.t_center = rng.random();
            p.t_sigma = rng.random_range(0.3..1.0);
            p
        })
        .collect()
}

/// Seeded instance with at most 20 primitives and at most 32×32 pixels.
/// Observed image and prior depth come from an unrelated random scene so
/// every loss term is active and non-trivial.
pub fn random_instance(seed: u64) -> CheckInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.random_range(16..=32);
    let n = rng.random_range(8..=20);
    let focal = 1.2 * size as f64;
    let camera = Camera::centered(focal, size, size);
    let degree = 1;
    let stride = field::prim_stride(degree);
    let prims = random_prims(&mut rng, n, focal);
    let mut params = vec![0.0; n * stride];
    for (p, chunk) in prims.iter().zip(params.chunks_exact_mut(stride)) {
        field::write_prim_slice(p, degree, chunk);
    }
    let time = rng.random_range(0.2..0.8);
    let target = GaussianField { primitives: random_prims(&mut rng, 20, focal), step: 0, sh_degree: degree };
    let render = raster::rasterize(&target, &camera, time);
    let (a, b) = (rng.random_range(0.5..3.0), rng.random_range(-1.0..1.0));
    let depth: Vec<f64> = render.depth.data.iter().zip(&render.alpha.data).map(|(d, al)| if *al > 0.05 { a * d + b } else { a * 6.0 + b }).collect();
    let conf: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.2..1.0)).collect();
    let mut mask = vec![0.0; size * size];
    let (mx, my) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
    for y in my..my + size / 4 {
        for x in mx..mx + size / 4 {
            mask[y * size + x] = 1.0;
        }
    }
    let prior = PriorFrame {
        depth_star: Image::from_data(size, size, 1, depth),
        confidence: Image::from_data(size, size, 1, conf),
        instrument_mask: Image::from_data(size, size, 1, mask),
        d_min: -100.0,
        d_max: 100.0,
    };
    let loss = ScheduleConfig { lambda_ent: 0.01, lambda_vel: 0.05, k_nn: 3, vel_subsample: 6, t_warm: 100, ..ScheduleConfig::default() };
    CheckInstance {
        params,
        degree,
        camera,
        time,
        dt: Some(0.1),
        observed: render.rgb,
        prior: PreparedPrior::new(&prior),
        loss,
        raster: RasterConfig::default(),
        step: rng.random_range(50..200),
        seed,
    }
}

#[derive(Clone, Debug)]
pub struct InstanceCheck {
    pub branch_locked: Comparison,
    /// Components where plain central differences agree within the tolerance.
    pub plain_agree: usize,
    pub plain_checked: usize,
    pub report: LossReport,
}

/// Checks the analytic gradient of the full objective against central
/// differences on every parameter.
pub fn check_instance(inst: &CheckInstance, with_plain: bool) -> InstanceCheck {
    let obj = inst.objective();
    let eval = obj.evaluate(&inst.params);
    let idx: Vec<usize> = (0..inst.params.len()).collect();
    let bl = branch_locked_fd(|x: &[Perturbed]| obj.value(x), &inst.params, FD_STEP, &idx);
    let branch_locked = compare(&idx, &eval.grad, &bl, REL_TOL, MIN_MAGNITUDE);
    let (mut plain_agree, mut plain_checked) = (0, 0);
    if with_plain {
        let pl = plain_fd(|x: &[f64]| obj.value(x), &inst.params, FD_STEP, &idx);
        let c = compare(&idx, &eval.grad, &pl, REL_TOL, MIN_MAGNITUDE);
        plain_checked = c.checked;
        plain_agree = c.checked - c.failures.len();
    }
    InstanceCheck { branch_locked, plain_agree, plain_checked, report: eval.report }
}
