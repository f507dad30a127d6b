use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_g2t");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn g2t")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "g2t {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str, frames: &str) -> PathBuf {
    let d = dir.join(format!("data_{seed}_{frames}"));
    ok(&["synth", "--seed", seed, "--frames", frames, "--size", "20x24", "--blobs", "4", "--out", s(&d)]);
    d
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), "3", "5");
    let b = tmp.path().join("again");
    ok(&["synth", "--seed", "3", "--frames", "5", "--size", "20x24", "--blobs", "4", "--out", s(&b)]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(p, _)| p.starts_with("depth_star")));
    assert_eq!(ta, tb);
    let c = synth(tmp.path(), "4", "5");
    assert_ne!(ta, tree(&c));
}

#[test]
fn usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["synth", "--frames", "0", "--out", s(&out)]), 2);
    assert_eq!(code(&["synth", "--size", "0x4", "--out", s(&out)]), 2);
    assert_eq!(code(&["synth", "--motion", "spiral", "--out", s(&out)]), 2);
    let data = synth(tmp.path(), "1", "4");
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&out), "--set", "no_such_key=1"]), 2);
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&out), "--set", "lr"]), 2);
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&out), "--stride", "0"]), 2);
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&out), "--stride", "-3"]), 2);
    assert_eq!(code(&["train", "--data", s(&tmp.path().join("missing")), "--out", s(&out)]), 3);
    assert_eq!(code(&["--threads", "0", "bench"]), 2);
}

#[test]
fn version_names_formats() {
    let out = ok(&["--version"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("g2t 0.1.0"));
    assert!(text.contains("G2TADAM1"));
}

#[test]
fn warmup_flag_sets_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "2", "4");
    let run_dir = tmp.path().join("run");
    let args = ["--iters", "1010", "--warmup", "1000", "--wmax", "0.5", "--set", "init_points=40", "--set", "lambda_si0=0.05"];
    let mut full = vec!["train", "--data", s(&data), "--out", s(&run_dir)];
    full.extend(args);
    ok(&full);
    let csv = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    let w: Vec<f64> = column(&csv, "w_si").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(w.len(), 1010);
    assert_eq!(w[0], 0.0);
    assert!((w[500] - 0.0125).abs() < 1e-9);
    assert!(w[1000..].iter().all(|&v| (v - 0.025).abs() < 1e-12));
    for name in ["scene.txt", "init_scene.txt", "adam.bin", "config.txt", "checkpoints/scene_001000.txt", "checkpoints/adam_001000.bin"] {
        assert!(run_dir.join(name).is_file(), "missing {name}");
    }
    let cfg = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(cfg.contains("t_warm=1000") || cfg.contains("warmup=1000"));
}

#[test]
fn config_file_then_set_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "2", "3");
    let conf = tmp.path().join("c.txt");
    fs::write(&conf, "# base\niters=7\nlr=0.002\ninit_points=30\n").unwrap();
    let run_dir = tmp.path().join("run");
    ok(&["train", "--data", s(&data), "--out", s(&run_dir), "--config", s(&conf), "--set", "iters=9", "--lr", "0.003"]);
    let csv = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    let cfg = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(cfg.lines().any(|l| l == "lr=0.003"));
}

#[test]
fn budget_bounds_logged_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "5", "6");
    let run_dir = tmp.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--out", s(&run_dir), "--iters", "200", "--budget", "60", "--set", "init_points=50",
        "--set", "densify_grad_threshold=0", "--set", "densify_interval=20",
    ]);
    let csv = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    let counts: Vec<usize> = column(&csv, "count").iter().map(|v| v.parse().unwrap()).collect();
    assert!(counts.iter().all(|&c| c <= 60));
    assert!(counts.contains(&60));
}

#[test]
fn ground_truth_renders_score_capped() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "6", "17");
    let renders = tmp.path().join("renders");
    ok(&["render", "--scene", s(&data.join("gt_scene.txt")), "--data", s(&data), "--out", s(&renders)]);
    assert!(renders.join("00008.ppm").is_file() && renders.join("depth_00016.pfm").is_file());
    let out = ok(&["eval", "--data", s(&data), "--renders", s(&renders)]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(column(&csv, "frame"), ["8", "16", "mean"]);
    assert!(column(&csv, "psnr").iter().all(|v| v.parse::<f64>().unwrap() == 120.0));

    let out = ok(&["eval", "--data", s(&data), "--scene", s(&data.join("gt_scene.txt")), "--depth", "--split", "all"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let mae: Vec<f64> = column(&csv, "depth_mae").iter().filter_map(|v| v.parse().ok()).collect();
    assert_eq!(mae.len(), 18);
    assert!(mae.iter().all(|&v| v.is_finite() && v < 1e-5), "{mae:?}");
    assert_eq!(code(&["eval", "--data", s(&data), "--renders", s(&renders), "--depth"]), 2);
}

#[test]
fn bench_empty_scene_reports_finite_fps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["bench", "--size", "16x16", "--frames", "4", "--repeats", "3", "--out", s(&tmp.path().join("b"))]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let fps: f64 = column(&csv, "fps_mean")[0].parse().unwrap();
    assert!(fps.is_finite() && fps > 0.0);
    assert_eq!(column(&csv, "io_calls"), ["0"]);
    assert!(tmp.path().join("b/00004.ppm").is_file());
}

#[test]
fn default_synth_trains_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&["synth", "--out", s(&data), "--frames", "5", "--size", "24x24"]);
    let mut scenes = Vec::new();
    for (k, threads) in ["1", "3"].iter().enumerate() {
        let dir = tmp.path().join(format!("r{k}"));
        ok(&["--threads", threads, "train", "--data", s(&data), "--out", s(&dir), "--iters", "60", "--set", "init_points=60"]);
        scenes.push(fs::read(dir.join("scene.txt")).unwrap());
    }
    assert_eq!(scenes[0], scenes[1]);
}
