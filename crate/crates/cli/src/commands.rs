use std::fmt;
use std::path::Path;

use g2t_core::field::GaussianField;
use g2t_core::io;
use g2t_core::losses::LossReport;
use g2t_core::metrics::{self, FrameScore};
use g2t_core::raster::{self, Camera};
use g2t_core::stream::{self, TrainConfig};
use g2t_core::synth::{self, Dataset, SceneSpec};
use g2t_core::Error;

use crate::{BenchArgs, EvalArgs, RenderArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Numerical(m) => write!(f, "numerical: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<g2t_core::error::FormatError> for CliError {
    fn from(e: g2t_core::error::FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let (h, w) = a.size;
    let spec = SceneSpec {
        seed: a.seed,
        n_blobs: a.blobs,
        frames: a.frames as usize,
        motion: a.motion.parse().map_err(usage)?,
        noise_sigma: a.noise,
        ..SceneSpec::with_size(w, h)
    };
    spec.validate().map_err(usage)?;
    let scene = synth::generate_scene(&spec)?;
    synth::write_dataset(&a.out, &spec, &scene)?;
    eprintln!("wrote {} frames ({}x{}) to {}", spec.frames, h, w, a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_text(&io::read_text(path)?).map_err(usage)?;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v).map_err(usage)?;
    }
    if let Some(v) = a.iters {
        cfg.iters = v;
    }
    if let Some(v) = a.stride {
        cfg.stride = v;
    }
    if let Some(v) = a.budget {
        cfg.budget.g_max = v;
    }
    if a.no_budget {
        cfg.no_budget = true;
    }
    if a.kf_only {
        cfg.kf_only = true;
    }
    if let Some(v) = a.iters_kf {
        cfg.iters_kf = v;
    }
    if let Some(v) = a.iters_cand {
        cfg.iters_cand = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.warmup {
        cfg.schedule.t_warm = v;
    }
    if let Some(v) = a.wmax {
        cfg.schedule.w_max = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.no_priors {
        cfg.use_priors = false;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub const LOSS_CSV_HEADER: &str = "frame,kind,count";

fn loss_csv(log: &[stream::IterRecord]) -> String {
    let (step, rest) = LossReport::CSV_HEADER.split_once(',').unwrap();
    let mut out = format!("{step},{LOSS_CSV_HEADER},{rest}\n");
    for r in log {
        let row = r.report.csv_row(r.step);
        let (s, tail) = row.split_once(',').unwrap();
        out.push_str(&format!("{s},{},{},{},{tail}\n", r.frame, r.kind.name(), r.count));
    }
    out
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let ds = synth::read_dataset(&a.data)?;
    let (frames, priors) = ds.subset(&ds.train_indices());
    let ckpt = a.out.join("checkpoints");
    io::create_dir(&ckpt)?;
    let result = stream::train_sequence(&frames, &priors, &cfg, |c| {
        io::write_scene(&ckpt.join(format!("scene_{:06}.txt", c.step)), c.field)?;
        io::write_adam(&ckpt.join(format!("adam_{:06}.bin", c.step)), c.adam)?;
        Ok(())
    })?;
    io::write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    io::write_text(&a.out.join("loss.csv"), &loss_csv(&result.log))?;
    io::write_scene(&a.out.join("init_scene.txt"), &result.initial_field)?;
    io::write_scene(&a.out.join("scene.txt"), &result.field)?;
    io::write_adam(&a.out.join("adam.bin"), &result.adam)?;
    let last = result.log.last();
    eprintln!(
        "trained {} iterations on {} frames: {} primitives, final loss {:.6}",
        result.log.len(),
        frames.len(),
        result.field.len(),
        last.map_or(f64::NAN, |r| r.report.total)
    );
    Ok(())
}

fn split_indices(ds: &Dataset, split: &str) -> Result<Vec<usize>> {
    let idx = match split {
        "test" => ds.test_indices(),
        "train" => ds.train_indices(),
        "all" => (0..ds.frames.len()).collect(),
        _ => return Err(CliError::Usage(format!("unknown split '{split}' (test, train, all)"))),
    };
    if idx.is_empty() {
        return Err(CliError::Data(format!("split '{split}' has no frames")));
    }
    Ok(idx)
}

fn load_scene(path: &Path) -> Result<GaussianField> {
    Ok(io::read_scene(path)?)
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let ds = synth::read_dataset(&a.data)?;
    let idx = split_indices(&ds, &a.split)?;
    let field = load_scene(&a.scene)?;
    io::create_dir(&a.out)?;
    for i in idx {
        let f = &ds.frames[i];
        let out = raster::rasterize(&field, &f.camera, f.time);
        io::write_ppm(&a.out.join(format!("{:05}.ppm", f.index)), &out.rgb)?;
        io::write_pfm(&a.out.join(format!("depth_{:05}.pfm", f.index)), &out.depth)?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ds = synth::read_dataset(&a.data)?;
    let idx = split_indices(&ds, &a.split)?;
    let field = match (&a.scene, &a.renders) {
        (Some(p), None) => Some(load_scene(p)?),
        (None, Some(_)) => None,
        _ => return Err(CliError::Usage("eval needs exactly one of --scene or --renders".into())),
    };
    if a.depth && (field.is_none() || ds.depth_gt.is_none()) {
        return Err(CliError::Usage("--depth needs --scene and a dataset with depth_gt/".into()));
    }
    let mut rows = Vec::new();
    let mut depth_errs = Vec::new();
    for i in idx {
        let f = &ds.frames[i];
        let rgb = match &field {
            Some(field) => {
                let out = raster::rasterize(field, &f.camera, f.time);
                if a.depth {
                    let truth = &ds.depth_gt.as_ref().unwrap()[i];
                    depth_errs.push(metrics::depth_mae(&out.depth, truth, &ds.priors[i])?);
                }
                out.rgb
            }
            None => io::read_ppm(&a.renders.as_ref().unwrap().join(format!("{:05}.ppm", f.index)))?,
        };
        rows.push(FrameScore { frame: f.index, psnr: metrics::psnr(&f.rgb, &rgb)?, ssim: metrics::ssim(&f.rgb, &rgb)? });
    }
    let csv = if a.depth { with_depth_column(&rows, &depth_errs) } else { metrics::scores_csv(&rows) };
    match &a.out {
        Some(p) => io::write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn with_depth_column(rows: &[FrameScore], depth: &[Option<f64>]) -> String {
    let fmt = |d: Option<f64>| d.map_or("nan".to_string(), |v| format!("{v:.8}"));
    let mut out = String::from("frame,psnr,ssim,depth_mae\n");
    for (r, d) in rows.iter().zip(depth) {
        out.push_str(&format!("{},{:.6},{:.8},{}\n", r.frame, r.psnr, r.ssim, fmt(*d)));
    }
    let (p, s) = metrics::mean_scores(rows);
    let valid: Vec<f64> = depth.iter().flatten().copied().collect();
    let d = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    out.push_str(&format!("mean,{p:.6},{s:.8},{}\n", fmt(d)));
    out
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let field = match &a.scene {
        Some(p) => load_scene(p)?,
        None => GaussianField::new(1),
    };
    let (cam, times): (Camera, Vec<f64>) = match &a.data {
        Some(d) => {
            let ds = synth::read_dataset(d)?;
            (ds.frames[0].camera.clone(), ds.frames.iter().map(|f| f.time).collect())
        }
        None => {
            let (h, w) = a.size;
            let n = a.frames as usize;
            (Camera::centered(1.2 * w.max(h) as f64, w, h), (1..=n).map(|f| synth::frame_time(f, n)).collect())
        }
    };
    let stats = raster::bench_raster(&field, &cam, &times, a.repeats as usize);
    println!("primitives,frames,repeats,fps_mean,fps_std,io_calls");
    println!("{},{},{},{:.3},{:.3},{}", field.len(), times.len(), a.repeats, stats.fps_mean, stats.fps_std, stats.io_calls);
    if let Some(dir) = &a.out {
        io::create_dir(dir)?;
        for (k, &t) in times.iter().enumerate() {
            let out = raster::rasterize(&field, &cam, t);
            io::write_ppm(&dir.join(format!("{:05}.ppm", k + 1)), &out.rgb)?;
        }
        let per: Vec<String> = stats.per_repeat_fps.iter().map(|f| format!("{f:.3}")).collect();
        io::write_text(&dir.join("bench.csv"), &format!("repeat_fps\n{}\n", per.join("\n")))?;
    }
    Ok(())
}
