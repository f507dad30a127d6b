//! Keyframe-constrained streaming trainer under a global primitive budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{self, Attr, GaussianField, GaussianPrimitive};
use crate::image::Image;
use crate::losses::{LossReport, PreparedPrior, PriorFrame, ScheduleConfig};
use crate::math;
use crate::objective::FrameObjective;
use crate::optim::{adam_step, AdamState, LrScales, ParamVector, DEFAULT_LR};
use crate::raster::{Camera, RasterConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamPlan {
    pub frames: usize,
    pub stride: usize,
    pub keyframes: Vec<usize>,
    pub candidates: Vec<usize>,
}

impl StreamPlan {
    pub fn is_keyframe(&self, f: usize) -> bool {
        (f - 1).is_multiple_of(self.stride)
    }
}

/// Keyframes are the 1-based frames with `f ≡ 1 (mod w)`; the rest are candidates.
pub fn keyframe_partition(frames: usize, stride: i64) -> Result<StreamPlan> {
    if stride <= 0 {
        return Err(Error::Invalid(format!("keyframe stride must be >= 1, got {stride}")));
    }
    if frames == 0 {
        return Err(Error::Invalid("frame count must be >= 1".into()));
    }
    let w = stride as usize;
    let (keyframes, candidates) = (1..=frames).partition(|f| f % w == 1 % w);
    Ok(StreamPlan { frames, stride: w, keyframes, candidates })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetPolicy {
    /// Maximum primitive count; `usize::MAX` disables the budget.
    pub g_max: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub densify_interval: u64,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        Self { g_max: 2000, densify_grad_threshold: 2e-4, prune_opacity_threshold: 0.005, densify_interval: 100 }
    }
}

/// Indices that survive the budget, in their original order. Removes the
/// lowest effective opacities at time `t`; ties remove the higher index.
pub fn budget_survivors(field: &GaussianField, g_max: usize, t: f64) -> Vec<usize> {
    let n = field.len();
    if n <= g_max {
        return (0..n).collect();
    }
    let alpha: Vec<f64> = field.primitives.iter().map(|p| field::temporal_opacity(p, t)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| alpha[a].total_cmp(&alpha[b]).then(b.cmp(&a)));
    let mut keep = vec![true; n];
    for &i in &order[..n - g_max] {
        keep[i] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

pub fn enforce_budget(field: &GaussianField, policy: &BudgetPolicy, t: f64) -> GaussianField {
    let keep = budget_survivors(field, policy.g_max, t);
    GaussianField { primitives: keep.iter().map(|&i| field.primitives[i].clone()).collect(), ..field.clone() }
}

/// Clone-and-shrink densification, opacity pruning, then the budget.
///
/// Returns the new field and, for each new primitive, the index of the
/// primitive it continues (`None` for fresh clones).
pub fn densify_and_prune(
    field: &GaussianField,
    grad_stats: &[f64],
    policy: &BudgetPolicy,
    t: f64,
) -> (GaussianField, Vec<Option<usize>>) {
    assert_eq!(grad_stats.len(), field.len(), "one gradient statistic per primitive");
    let shrink = 0.8f64.ln();
    let mut prims = field.primitives.clone();
    let mut origin: Vec<Option<usize>> = (0..prims.len()).map(Some).collect();
    let mut clones = Vec::new();
    for (i, p) in prims.iter_mut().enumerate() {
        if !(grad_stats[i] > policy.densify_grad_threshold) {
            continue;
        }
        let axis = (0..3).max_by(|&a, &b| p.log_scale[a].total_cmp(&p.log_scale[b]).then(b.cmp(&a))).unwrap();
        let sigma = p.log_scale[axis].exp();
        let r = math::quat_to_mat(&math::quat_normalize(&p.rotation));
        let mut child = p.clone();
        for k in 0..3 {
            child.center[k] += sigma * r[k][axis];
            child.log_scale[k] += shrink;
            p.log_scale[k] += shrink;
        }
        clones.push(child);
    }
    origin.extend(std::iter::repeat_n(None, clones.len()));
    prims.extend(clones);

    let mut kept = Vec::with_capacity(prims.len());
    let mut kept_origin = Vec::with_capacity(prims.len());
    for (p, o) in prims.into_iter().zip(origin) {
        if p.opacity() >= policy.prune_opacity_threshold {
            kept.push(p);
            kept_origin.push(o);
        }
    }
    let grown = GaussianField { primitives: kept, ..field.clone() };
    let keep = budget_survivors(&grown, policy.g_max, t);
    let origin = keep.iter().map(|&i| kept_origin[i]).collect();
    let primitives = keep.iter().map(|&i| grown.primitives[i].clone()).collect();
    (GaussianField { primitives, ..field.clone() }, origin)
}

/// One training view.
#[derive(Clone, Debug)]
pub struct Frame {
    /// 1-based index in the original sequence.
    pub index: usize,
    /// Normalized time in [0, 1].
    pub time: f64,
    pub camera: Camera,
    pub rgb: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: u64,
    pub stride: i64,
    pub budget: BudgetPolicy,
    pub no_budget: bool,
    pub kf_only: bool,
    pub iters_kf: usize,
    pub iters_cand: usize,
    pub lr: f64,
    /// Learning rate at the last iteration as a fraction of `lr`; the rate
    /// decays exponentially in between.
    pub lr_final: f64,
    pub lr_scales: LrScales,
    pub schedule: ScheduleConfig,
    pub raster: RasterConfig,
    pub seed: u64,
    pub use_priors: bool,
    /// Candidate frames update opacity as well as colour.
    pub candidate_opacity: bool,
    pub sh_degree: u32,
    pub init_points: usize,
    pub init_depth_min: f64,
    pub init_depth_max: f64,
    pub init_opacity: f64,
    /// Initial footprint radius in pixels.
    pub init_scale_px: f64,
    pub init_t_sigma: f64,
    /// Last iteration at which densification may run; 0 means never.
    pub densify_until: u64,
    pub t_sigma_min: f64,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 3000,
            stride: 5,
            budget: BudgetPolicy::default(),
            no_budget: false,
            kf_only: false,
            iters_kf: 20,
            iters_cand: 5,
            lr: DEFAULT_LR,
            lr_final: 0.1,
            lr_scales: LrScales::default(),
            schedule: ScheduleConfig::default(),
            raster: RasterConfig::default(),
            seed: 0,
            use_priors: true,
            candidate_opacity: true,
            sh_degree: 1,
            init_points: 1000,
            init_depth_min: 2.0,
            init_depth_max: 10.0,
            init_opacity: 0.1,
            init_scale_px: 1.5,
            init_t_sigma: 1.0,
            densify_until: 1500,
            t_sigma_min: field::T_SIGMA_MIN,
            checkpoint_every: 1000,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Invalid(format!("bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Invalid(format!("bad boolean '{value}' for {key}"))),
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "iters", "stride", "budget", "no_budget", "kf_only", "iters_kf", "iters_cand", "lr", "lr_final", "lr_center",
        "lr_log_scale", "lr_rotation", "lr_opacity", "lr_sh", "lr_velocity", "lr_rotor", "lr_temporal",
        "lambda_si0", "lambda_grad0", "warmup", "wmax", "lambda_dssim", "beta", "epsilon", "lambda_ent",
        "lambda_vel", "k_nn", "vel_subsample", "densify_grad_threshold", "prune_opacity_threshold",
        "densify_interval", "densify_until", "seed", "priors", "candidate_opacity", "sh_degree", "init_points",
        "init_depth_min", "init_depth_max", "init_opacity", "init_scale_px", "init_t_sigma", "t_sigma_min",
        "checkpoint_every",
    ];

    /// Sets one configuration key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.schedule;
        let l = &mut self.lr_scales;
        match key {
            "iters" => self.iters = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "budget" => self.budget.g_max = parse(key, value)?,
            "no_budget" => self.no_budget = parse_bool(key, value)?,
            "kf_only" => self.kf_only = parse_bool(key, value)?,
            "iters_kf" => self.iters_kf = parse(key, value)?,
            "iters_cand" => self.iters_cand = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_final" => self.lr_final = parse(key, value)?,
            "lr_center" => l.center = parse(key, value)?,
            "lr_log_scale" => l.log_scale = parse(key, value)?,
            "lr_rotation" => l.rotation = parse(key, value)?,
            "lr_opacity" => l.opacity = parse(key, value)?,
            "lr_sh" => l.sh = parse(key, value)?,
            "lr_velocity" => l.velocity = parse(key, value)?,
            "lr_rotor" => l.rotor = parse(key, value)?,
            "lr_temporal" => l.temporal = parse(key, value)?,
            "lambda_si0" => s.lambda_si0 = parse(key, value)?,
            "lambda_grad0" => s.lambda_grad0 = parse(key, value)?,
            "warmup" => s.t_warm = parse(key, value)?,
            "wmax" => s.w_max = parse(key, value)?,
            "lambda_dssim" => s.lambda_dssim = parse(key, value)?,
            "beta" => s.beta = parse(key, value)?,
            "epsilon" => s.epsilon = parse(key, value)?,
            "lambda_ent" => s.lambda_ent = parse(key, value)?,
            "lambda_vel" => s.lambda_vel = parse(key, value)?,
            "k_nn" => s.k_nn = parse(key, value)?,
            "vel_subsample" => s.vel_subsample = parse(key, value)?,
            "densify_grad_threshold" => self.budget.densify_grad_threshold = parse(key, value)?,
            "prune_opacity_threshold" => self.budget.prune_opacity_threshold = parse(key, value)?,
            "densify_interval" => self.budget.densify_interval = parse(key, value)?,
            "densify_until" => self.densify_until = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "priors" => self.use_priors = parse_bool(key, value)?,
            "candidate_opacity" => self.candidate_opacity = parse_bool(key, value)?,
            "sh_degree" => self.sh_degree = parse(key, value)?,
            "init_points" => self.init_points = parse(key, value)?,
            "init_depth_min" => self.init_depth_min = parse(key, value)?,
            "init_depth_max" => self.init_depth_max = parse(key, value)?,
            "init_opacity" => self.init_opacity = parse(key, value)?,
            "init_scale_px" => self.init_scale_px = parse(key, value)?,
            "init_t_sigma" => self.init_t_sigma = parse(key, value)?,
            "t_sigma_min" => self.t_sigma_min = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(Error::Invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("config line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.stride <= 0 {
            return bad("stride must be >= 1");
        }
        if self.schedule.t_warm == 0 {
            return bad("warmup must be > 0");
        }
        if !(self.schedule.w_max > 0.0 && self.schedule.w_max <= 1.0) {
            return bad("wmax must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.schedule.lambda_dssim) {
            return bad("lambda_dssim must be in [0, 1]");
        }
        if !(self.schedule.beta > 0.0 && self.schedule.epsilon > 0.0) {
            return bad("beta and epsilon must be positive");
        }
        if self.budget.g_max == 0 {
            return bad("budget must be >= 1");
        }
        if self.sh_degree > 1 {
            return bad("sh_degree must be 0 or 1");
        }
        if !(self.init_depth_min > 0.0 && self.init_depth_max >= self.init_depth_min) {
            return bad("init depth range must be positive and ordered");
        }
        if self.iters_kf == 0 {
            return bad("iters_kf must be >= 1");
        }
        if self.iters_cand >= self.iters_kf {
            return bad("iters_cand must be smaller than iters_kf");
        }
        if self.budget.densify_interval == 0 {
            return bad("densify_interval must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lr_final > 0.0 && self.lr_final <= 1.0) {
            return bad("lr_final must be in (0, 1]");
        }
        Ok(())
    }

    pub fn policy(&self) -> BudgetPolicy {
        let mut p = self.budget.clone();
        if self.no_budget {
            p.g_max = usize::MAX;
        }
        p
    }

    /// Serializes every key in `key=value` form.
    pub fn to_text(&self) -> String {
        let s = &self.schedule;
        let l = &self.lr_scales;
        let b = &self.budget;
        let pairs: Vec<(&str, String)> = vec![
            ("iters", self.iters.to_string()),
            ("stride", self.stride.to_string()),
            ("budget", b.g_max.to_string()),
            ("no_budget", self.no_budget.to_string()),
            ("kf_only", self.kf_only.to_string()),
            ("iters_kf", self.iters_kf.to_string()),
            ("iters_cand", self.iters_cand.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_final", self.lr_final.to_string()),
            ("lr_center", l.center.to_string()),
            ("lr_log_scale", l.log_scale.to_string()),
            ("lr_rotation", l.rotation.to_string()),
            ("lr_opacity", l.opacity.to_string()),
            ("lr_sh", l.sh.to_string()),
            ("lr_velocity", l.velocity.to_string()),
            ("lr_rotor", l.rotor.to_string()),
            ("lr_temporal", l.temporal.to_string()),
            ("lambda_si0", s.lambda_si0.to_string()),
            ("lambda_grad0", s.lambda_grad0.to_string()),
            ("warmup", s.t_warm.to_string()),
            ("wmax", s.w_max.to_string()),
            ("lambda_dssim", s.lambda_dssim.to_string()),
            ("beta", s.beta.to_string()),
            ("epsilon", s.epsilon.to_string()),
            ("lambda_ent", s.lambda_ent.to_string()),
            ("lambda_vel", s.lambda_vel.to_string()),
            ("k_nn", s.k_nn.to_string()),
            ("vel_subsample", s.vel_subsample.to_string()),
            ("densify_grad_threshold", b.densify_grad_threshold.to_string()),
            ("prune_opacity_threshold", b.prune_opacity_threshold.to_string()),
            ("densify_interval", b.densify_interval.to_string()),
            ("densify_until", self.densify_until.to_string()),
            ("seed", self.seed.to_string()),
            ("priors", self.use_priors.to_string()),
            ("candidate_opacity", self.candidate_opacity.to_string()),
            ("sh_degree", self.sh_degree.to_string()),
            ("init_points", self.init_points.to_string()),
            ("init_depth_min", self.init_depth_min.to_string()),
            ("init_depth_max", self.init_depth_max.to_string()),
            ("init_opacity", self.init_opacity.to_string()),
            ("init_scale_px", self.init_scale_px.to_string()),
            ("init_t_sigma", self.init_t_sigma.to_string()),
            ("t_sigma_min", self.t_sigma_min.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Keyframe,
    Candidate,
}

impl FrameKind {
    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Keyframe => "keyframe",
            FrameKind::Candidate => "candidate",
        }
    }
}

/// One optimizer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub step: u64,
    /// 1-based index of the frame in the original sequence.
    pub frame: usize,
    pub kind: FrameKind,
    /// Primitive count after the iteration, including densify and budget.
    pub count: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub field: GaussianField,
    pub adam: AdamState,
    pub log: Vec<IterRecord>,
    pub initial_field: GaussianField,
}

/// Snapshot handed to the checkpoint callback.
pub struct Checkpoint<'a> {
    pub step: u64,
    pub field: &'a GaussianField,
    pub adam: &'a AdamState,
}

/// Random pixels of `frame` lifted to random depths, coloured by the pixel.
pub fn initial_field(frame: &Frame, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> GaussianField {
    let cam = &frame.camera;
    let img = &frame.rgb;
    let rot = cam.world_from_camera.rotation;
    let origin = cam.position();
    let mut field = GaussianField::new(cfg.sh_degree);
    for _ in 0..cfg.init_points {
        let u = rng.random_range(0..img.width);
        let v = rng.random_range(0..img.height);
        let z = if cfg.init_depth_max > cfg.init_depth_min {
            rng.random_range(cfg.init_depth_min..cfg.init_depth_max)
        } else {
            cfg.init_depth_min
        };
        let xc = [(u as f64 - cam.cx) / cam.fx * z, (v as f64 - cam.cy) / cam.fy * z, z];
        let xw = math::mat_vec(&rot, &xc);
        let center = [xw[0] + origin[0], xw[1] + origin[1], xw[2] + origin[2]];
        let s = (cfg.init_scale_px * z / cam.fx).ln();
        let rgb = [img.at(u, v, 0), img.at(u, v, 1), img.at(u, v, 2)];
        let mut p = GaussianPrimitive::new(center, [s; 3], cfg.init_opacity, rgb).with_sh_degree(cfg.sh_degree);
        p.t_center = frame.time;
        p.t_sigma = cfg.init_t_sigma;
        field.primitives.push(p);
    }
    field
}

fn check_inputs(frames: &[Frame], priors: &[PriorFrame]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Invalid("no training frames".into()));
    }
    if frames.len() != priors.len() {
        return Err(Error::Invalid(format!("{} frames but {} priors", frames.len(), priors.len())));
    }
    for (f, p) in frames.iter().zip(priors) {
        let (w, h) = (f.camera.width, f.camera.height);
        if f.rgb.shape() != (h, w, 3) {
            return Err(Error::Invalid(format!("frame {}: image {:?} does not match camera {w}x{h}", f.index, f.rgb.shape())));
        }
        for (name, img) in [("depth", &p.depth_star), ("confidence", &p.confidence), ("mask", &p.instrument_mask)] {
            if img.shape() != (h, w, 1) {
                return Err(Error::Invalid(format!("frame {}: prior {name} {:?} does not match {w}x{h}", f.index, img.shape())));
            }
        }
    }
    if frames.windows(2).any(|p| p[1].time < p[0].time) {
        return Err(Error::Invalid("frame times must be non-decreasing".into()));
    }
    Ok(())
}

const ALL_ATTRS: [Attr; 9] = Attr::ALL;

/// Streaming optimization over `frames` in order, epoch after epoch, until
/// `cfg.iters` iterations have run.
pub fn train_sequence(
    frames: &[Frame],
    priors: &[PriorFrame],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainResult> {
    cfg.validate()?;
    check_inputs(frames, priors)?;
    let plan = keyframe_partition(frames.len(), cfg.stride)?;
    let policy = cfg.policy();
    let prepared: Vec<PreparedPrior> = priors.iter().map(PreparedPrior::new).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let field0 = enforce_budget(&initial_field(&frames[0], cfg, &mut rng), &policy, frames[0].time);
    let mut params = ParamVector::flatten(&field0);
    let mut adam = AdamState::new(params.values.len(), cfg.lr);
    let cand_attrs: &[Attr] = if cfg.candidate_opacity { &[Attr::Sh, Attr::OpacityLogit] } else { &[Attr::Sh] };
    let mut grad_sum = vec![0.0; params.layout.count];
    let mut grad_hits = vec![0u32; params.layout.count];
    let mut log = Vec::with_capacity(cfg.iters as usize);
    let mut step = 0u64;
    let mut next_densify = policy.densify_interval;

    'epochs: while step < cfg.iters {
        for (pos, frame) in frames.iter().enumerate() {
            let kind = if plan.is_keyframe(pos + 1) { FrameKind::Keyframe } else { FrameKind::Candidate };
            if kind == FrameKind::Candidate && cfg.kf_only {
                continue;
            }
            let inner = if kind == FrameKind::Keyframe { cfg.iters_kf } else { cfg.iters_cand };
            let dt = (pos > 0).then(|| frame.time - frames[pos - 1].time);
            for _ in 0..inner {
                if step >= cfg.iters {
                    break 'epochs;
                }
                let obj = FrameObjective {
                    degree: cfg.sh_degree,
                    camera: &frame.camera,
                    time: frame.time,
                    dt,
                    observed: &frame.rgb,
                    prior: cfg.use_priors.then_some(&prepared[pos]),
                    loss: &cfg.schedule,
                    raster: &cfg.raster,
                    step,
                    seed: cfg.seed,
                };
                let eval = obj.evaluate(&params.values);
                if !eval.report.total.is_finite() {
                    return Err(Error::Numerical(format!("non-finite objective at step {step}")));
                }
                let attrs: &[Attr] = if kind == FrameKind::Keyframe { &ALL_ATTRS } else { cand_attrs };
                let scale = cfg.lr_scales.expand(&params.layout, attrs);
                adam.lr = cfg.lr * cfg.lr_final.powf(step as f64 / cfg.iters as f64);
                adam_step(&mut adam, &mut params.values, &eval.grad, Some(&scale));
                if kind == FrameKind::Keyframe {
                    params.renormalize(cfg.t_sigma_min);
                }
                step += 1;

                if kind == FrameKind::Keyframe {
                    for (i, g) in eval.screen_grad.iter().enumerate() {
                        if *g > 0.0 {
                            grad_sum[i] += g;
                            grad_hits[i] += 1;
                        }
                    }
                    if step >= next_densify && step <= cfg.densify_until {
                        next_densify = (step / policy.densify_interval + 1) * policy.densify_interval;
                        let stats: Vec<f64> =
                            grad_sum.iter().zip(&grad_hits).map(|(s, &h)| if h > 0 { s / h as f64 } else { 0.0 }).collect();
                        let field = params.unflatten(step);
                        let above = stats.iter().filter(|&&g| g > policy.densify_grad_threshold).count();
                        if log::log_enabled!(log::Level::Debug) {
                            let mut sorted = stats.clone();
                            sorted.sort_by(f64::total_cmp);
                            let q = |f: f64| sorted[((sorted.len() - 1) as f64 * f) as usize];
                            log::debug!("grad stat quantiles 10/50/90/99: {:.2e} {:.2e} {:.2e} {:.2e}", q(0.1), q(0.5), q(0.9), q(0.99));
                        }
                        let (next, origin) = densify_and_prune(&field, &stats, &policy, frame.time);
                        log::info!("step {step}: {above} above threshold, {} -> {} primitives", field.len(), next.len());
                        let (next, origin) = if next.is_empty() {
                            log::warn!("field emptied at step {step}; re-seeding");
                            let seeded = enforce_budget(&initial_field(frame, cfg, &mut rng), &policy, frame.time);
                            let n = seeded.len();
                            (seeded, vec![None; n])
                        } else {
                            (next, origin)
                        };
                        adam.remap(params.layout.stride(), &origin);
                        params = ParamVector::flatten(&next);
                        grad_sum = vec![0.0; params.layout.count];
                        grad_hits = vec![0; params.layout.count];
                    }
                }
                if params.layout.count > policy.g_max {
                    let field = params.unflatten(step);
                    let keep = budget_survivors(&field, policy.g_max, frame.time);
                    let origin: Vec<Option<usize>> = keep.iter().map(|&i| Some(i)).collect();
                    adam.remap(params.layout.stride(), &origin);
                    grad_sum = keep.iter().map(|&i| grad_sum[i]).collect();
                    grad_hits = keep.iter().map(|&i| grad_hits[i]).collect();
                    params = ParamVector::flatten(&enforce_budget(&field, &policy, frame.time));
                }
                log.push(IterRecord { step: step - 1, frame: frame.index, kind, count: params.layout.count, report: eval.report });
                if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
                    on_checkpoint(&Checkpoint { step, field: &params.unflatten(step), adam: &adam })?;
                }
            }
        }
    }
    Ok(TrainResult { field: params.unflatten(step), adam, log, initial_field: field0 })
}
