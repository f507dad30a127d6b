//! `g2t`: synthesize data, train, render, evaluate and benchmark.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (scene g2t-scene v1, optimizer G2TADAM1, images PPM P6 / PFM Pf+PF)"
);

#[derive(Parser, Debug)]
#[command(name = "g2t", version = VERSION, about = "Time-embedded Gaussian splatting with depth-prior distillation")]
struct Cli {
    /// Worker threads (results are identical for every value).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with simulated depth priors.
    Synth(SynthArgs),
    /// Train a field on a dataset's training split.
    Train(TrainArgs),
    /// Render a trained field at dataset frames.
    Render(RenderArgs),
    /// Score a trained field or rendered images against held-out frames.
    Eval(EvalArgs),
    /// Time rasterization alone.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Foreground blobs.
    #[arg(long, default_value_t = 12)]
    pub blobs: usize,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    /// Image size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// static, linear or orbit.
    #[arg(long, default_value = "linear")]
    pub motion: String,
    /// Multiplicative depth-prior noise sigma.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<u64>,
    /// Keyframe stride w.
    #[arg(long, allow_negative_numbers = true)]
    pub stride: Option<i64>,
    /// Global primitive budget.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub no_budget: bool,
    /// Train on keyframes only.
    #[arg(long)]
    pub kf_only: bool,
    #[arg(long)]
    pub iters_kf: Option<usize>,
    #[arg(long)]
    pub iters_cand: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Depth-prior warm-up length in iterations.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub wmax: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Photometric-only training.
    #[arg(long)]
    pub no_priors: bool,
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// test, train or all.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained scene to render.
    #[arg(long, conflicts_with = "renders")]
    pub scene: Option<PathBuf>,
    /// Directory of `%05d.ppm` renders to score instead of a scene.
    #[arg(long)]
    pub renders: Option<PathBuf>,
    /// test, train or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Append normalized depth error against `depth_gt/` (scene only).
    #[arg(long)]
    pub depth: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Scene to render; an empty scene when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Dataset supplying the camera and frame times.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Frames per repeat when no dataset is given.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    /// Also write the rendered frames here, after timing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in '{s}'"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in '{s}'"))?;
    if h == 0 || w == 0 {
        return Err("size must be at least 1x1".into());
    }
    Ok((h, w))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Render(a) => commands::render(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Data(_) => 3,
                CliError::Numerical(_) => 4,
            })
        }
    }
}
