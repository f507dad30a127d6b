//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use g2t_core::gradcheck::{self, check_instance, random_instance};
use g2t_core::image::Image;
use g2t_core::losses::depth::{normalize_depth, schedule_weight, silog_loss, valid_mask, PriorFrame};
use g2t_core::losses::regularizers::{opacity_entropy, velocity_coherence};
use g2t_core::stream::keyframe_partition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_g2t");

type Outcome = Result<String, String>;
/// Frame, kind and primitive count per logged iteration.
type Trace = (Vec<usize>, Vec<String>, Vec<usize>);

fn g2t(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("g2t {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap_or("").split(',').position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(idx).unwrap_or("").to_string()).collect()
}

fn numbers(csv: &str, name: &str) -> Vec<f64> {
    column(csv, name).iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect()
}

/// Per-frame values of an eval CSV without the trailing mean row.
fn per_frame(csv: &str, name: &str) -> Vec<f64> {
    let mut v = numbers(csv, name);
    v.pop();
    v
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..20 {
        let inst = random_instance(seed);
        let r = check_instance(&inst, false);
        worst = worst.max(r.branch_locked.max_rel_err);
        checked += r.branch_locked.checked;
        if !r.branch_locked.passed() {
            let f = &r.branch_locked.failures[0];
            return Err(format!("seed {seed}: component {} analytic {:e} vs fd {:e}", f.0, f.1, f.2));
        }
    }
    check(
        worst <= gradcheck::REL_TOL,
        format!("20 instances, {checked} components with |g|>{:e}, h={:e}, max rel err {worst:.2e}", gradcheck::MIN_MAGNITUDE, gradcheck::FD_STEP),
    )
}

fn silog_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(16..400);
        let hat: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..20.0)).collect();
        let star: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..20.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        mask[0] = true;
        mask[1] = true;
        let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0));
        let corrupted: Vec<f64> = hat.iter().map(|d| a * d + b).collect();
        let ns = normalize_depth(&star, &mask);
        let l0: f64 = silog_loss(&normalize_depth(&hat, &mask).values, &ns.values, &mask, 0.15, 1e-6).map_err(|e| e.to_string())?;
        let l1: f64 = silog_loss(&normalize_depth(&corrupted, &mask).values, &ns.values, &mask, 0.15, 1e-6).map_err(|e| e.to_string())?;
        worst = worst.max((l0 - l1).abs());
    }
    check(worst <= 1e-9, format!("100 pairs, max |Δ| {worst:.2e} (tol 1e-9)"))
}

fn schedule_contract() -> Outcome {
    let mut points = 0;
    for base in [0.0, 1e-3, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 7.5] {
        for t_warm in [1u64, 2, 3, 10, 50, 100, 300, 999, 1000, 4096] {
            for w_max in [0.05, 0.1, 0.2, 0.3, 0.5, 0.6, 0.75, 0.9, 0.99, 1.0] {
                points += 1;
                if schedule_weight(base, 0, t_warm, w_max) != 0.0 {
                    return Err(format!("w(0) != 0 at base {base} T {t_warm} w_max {w_max}"));
                }
                let mut prev = 0.0;
                for t in 0..=2 * t_warm + 5 {
                    let w = schedule_weight(base, t, t_warm, w_max);
                    if w < prev {
                        return Err(format!("decrease at t={t}, base {base} T {t_warm} w_max {w_max}"));
                    }
                    if t >= t_warm && w != base * w_max {
                        return Err(format!("w({t}) = {w} != {} at T {t_warm}", base * w_max));
                    }
                    prev = w;
                }
            }
        }
    }
    check(points == 1000, format!("{points} grid points"))
}

struct GateCase {
    name: &'static str,
    conf: Vec<f64>,
    depth: Vec<f64>,
    instrument: Vec<f64>,
    tau: f64,
    mask: Vec<bool>,
    active: bool,
}

fn gate_cases() -> Vec<GateCase> {
    let n = 100;
    let ones = |v: f64| vec![v; n];
    let mut cases = vec![
        GateCase { name: "uniform", conf: ones(0.8), depth: ones(3.0), instrument: ones(0.0), tau: 0.4, mask: vec![true; n], active: true },
        GateCase { name: "empty", conf: ones(0.0), depth: ones(3.0), instrument: ones(0.0), tau: 0.01, mask: vec![false; n], active: false },
    ];
    let mut instrument = ones(1.0);
    for p in instrument.iter_mut().take(5) {
        *p = 0.0;
    }
    let mask: Vec<bool> = (0..n).map(|p| p < 5).collect();
    cases.push(GateCase { name: "95% masked", conf: ones(0.9), depth: ones(2.0), instrument, tau: 0.45, mask, active: false });

    let conf: Vec<f64> = (0..n).map(|p| if p < 10 { 1.0 } else { 0.2 }).collect();
    let mask: Vec<bool> = (0..n).map(|p| p < 10).collect();
    cases.push(GateCase { name: "exactly 10%", conf, depth: ones(2.0), instrument: ones(0.0), tau: 0.5, mask, active: true });

    let conf: Vec<f64> = (0..n).map(|p| if p < 9 { 1.0 } else { 0.2 }).collect();
    let mask: Vec<bool> = (0..n).map(|p| p < 9).collect();
    cases.push(GateCase { name: "9%", conf, depth: ones(2.0), instrument: ones(0.0), tau: 0.5, mask, active: false });

    let conf: Vec<f64> = (0..n).map(|p| [0.015, 0.01, 0.009, 0.0][p % 4]).collect();
    let mask: Vec<bool> = (0..n).map(|p| p % 4 < 2).collect();
    cases.push(GateCase { name: "tau floor", conf, depth: ones(2.0), instrument: ones(0.0), tau: 0.01, mask, active: true });

    let conf: Vec<f64> = (0..n).map(|p| [0.6, 0.3, 0.29][p % 3]).collect();
    let depth: Vec<f64> = (0..n).map(|p| [5.0, 1e-4, 2e3, 1e-3][p % 4]).collect();
    let instrument: Vec<f64> = (0..n).map(|p| if p >= 80 { 0.7 } else if p >= 60 { 0.5 } else { 0.0 }).collect();
    let mask: Vec<bool> = (0..n).map(|p| p % 3 != 2 && (p % 4 == 0 || p % 4 == 3) && p < 80).collect();
    cases.push(GateCase { name: "range, threshold and mask", conf, depth, instrument, tau: 0.3, mask, active: true });
    cases
}

fn valid_set_gate() -> Outcome {
    let cases = gate_cases();
    for c in &cases {
        let img = |v: &Vec<f64>| Image::from_data(10, 10, 1, v.clone());
        let prior = PriorFrame { depth_star: img(&c.depth), confidence: img(&c.conf), instrument_mask: img(&c.instrument), d_min: 1e-3, d_max: 1e3 };
        let got = valid_mask(&prior);
        if got.tau != c.tau || got.mask != c.mask || got.priors_active() != c.active {
            return Err(format!("case '{}': tau {} mask count {} active {}", c.name, got.tau, got.count(), got.priors_active()));
        }
    }
    Ok(format!("{} constructed cases", cases.len()))
}

fn knn_coherence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in [2usize, 3, 5, 9, 17, 40, 77, 128, 200] {
        for k in 1..=8usize {
            let c: Vec<[f64; 3]> = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(1.0..6.0)]).collect();
            let prev: Vec<[f64; 3]> =
                c.iter().map(|p| [p[0] - rng.random_range(-0.1..0.1), p[1] - rng.random_range(-0.1..0.1), p[2] - rng.random_range(-0.1..0.1)]).collect();
            let got = velocity_coherence(&c, &prev, 0.4, k, n, 0);
            let v: Vec<[f64; 3]> = c.iter().zip(&prev).map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]).collect();
            let mut total = 0.0;
            for i in 0..n {
                let mut d: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| ((0..3).map(|a| (c[j][a] - c[i][a]).powi(2)).sum::<f64>(), j))
                    .collect();
                d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                let kk = k.min(d.len());
                let inner: f64 = d[..kk].iter().map(|&(_, j)| (0..3).map(|a| (v[i][a] - v[j][a]).abs()).sum::<f64>()).sum();
                total += inner / kk as f64;
            }
            worst = worst.max((got - total / n as f64).abs());
            let shift = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let rigid: Vec<[f64; 3]> = c.iter().map(|p| [p[0] - shift[0], p[1] - shift[1], p[2] - shift[2]]).collect();
            let r = velocity_coherence(&c, &rigid, 0.4, k, n, 0);
            if r.abs() > 1e-12 {
                return Err(format!("rigid translation gives {r:e} at N={n} k={k}"));
            }
            cases += 1;
        }
    }
    check(worst <= 1e-12, format!("{cases} (N,k) cases, max |Δ| vs brute force {worst:.2e}; rigid fields give 0"))
}

fn entropy_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ln2 = std::f64::consts::LN_2;
    for _ in 0..1000 {
        let n = rng.random_range(1..64);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..1.2)).collect();
        let h: f64 = opacity_entropy(&a);
        if !(0.0..=ln2).contains(&h) {
            return Err(format!("entropy {h} outside [0, ln 2]"));
        }
    }
    let half: f64 = opacity_entropy(&[0.5; 7]);
    check((half - ln2).abs() <= 1e-12, format!("1000 random sets in [0, ln 2]; H(0.5) - ln 2 = {:.1e}", half - ln2))
}

struct Runs {
    data: PathBuf,
    with: PathBuf,
    without: PathBuf,
    train_frames: usize,
}

fn e2e_runs(root: &Path) -> Result<Runs, String> {
    let data = root.join("data");
    g2t(&["synth", "--seed", "7", "--frames", "12", "--size", "48x48", "--out", s(&data)])?;
    let with = root.join("with_priors");
    let without = root.join("photometric");
    let base = ["--iters", "3000", "--stride", "5", "--seed", "0"];
    let mut a = vec!["train", "--data", s(&data), "--out", s(&with)];
    a.extend(base);
    g2t(&a)?;
    let mut b = vec!["train", "--data", s(&data), "--out", s(&without), "--no-priors"];
    b.extend(base);
    g2t(&b)?;
    Ok(Runs { data, with, without, train_frames: 11 })
}

fn end_to_end(runs: &Runs) -> Outcome {
    let data = s(&runs.data);
    let init = g2t(&["eval", "--data", data, "--scene", s(&runs.with.join("init_scene.txt"))])?;
    let fin = g2t(&["eval", "--data", data, "--scene", s(&runs.with.join("scene.txt"))])?;
    let (p0, p1) = (mean(&per_frame(&init, "psnr")), mean(&per_frame(&fin, "psnr")));

    let loss = fs::read_to_string(runs.with.join("loss.csv")).map_err(|e| e.to_string())?;
    let total = numbers(&loss, "total");
    let blocks: Vec<f64> = total.chunks(100).filter(|c| c.len() == 100).map(mean).collect();
    let rises = blocks.windows(2).filter(|w| w[1] >= w[0]).count();

    let d_with = g2t(&["eval", "--data", data, "--scene", s(&runs.with.join("scene.txt")), "--split", "all", "--depth"])?;
    let d_without = g2t(&["eval", "--data", data, "--scene", s(&runs.without.join("scene.txt")), "--split", "all", "--depth"])?;
    let (m_with, m_without) = (numbers(&d_with, "depth_mae").pop().unwrap(), numbers(&d_without, "depth_mae").pop().unwrap());
    let ratio = m_with / m_without;

    let detail = format!(
        "held-out PSNR {p0:.2} -> {p1:.2} dB (gain {:.2}, need >= 5); {} window-100 means, {rises} non-decreasing steps ({:.4} -> {:.4}); \
         depth MAE {m_with:.4} with priors vs {m_without:.4} photometric, ratio {ratio:.3} (need <= 0.6); {} training frames",
        p1 - p0,
        blocks.len(),
        blocks.first().copied().unwrap_or(f64::NAN),
        blocks.last().copied().unwrap_or(f64::NAN),
        runs.train_frames
    );
    check(p1 - p0 >= 5.0 && rises == 0 && blocks.len() == 30 && ratio <= 0.6, detail)
}

fn budget_safety(root: &Path, data: &Path) -> Outcome {
    let aggressive = [
        "--iters", "500", "--stride", "5", "--set", "init_points=300", "--set", "densify_grad_threshold=0",
        "--set", "densify_interval=50", "--set", "densify_until=100",
    ];
    let counts = |dir: &Path, extra: &[&str]| -> Result<Vec<usize>, String> {
        let mut a = vec!["train", "--data", s(data), "--out", s(dir)];
        a.extend(aggressive);
        a.extend(extra);
        g2t(&a)?;
        let csv = fs::read_to_string(dir.join("loss.csv")).map_err(|e| e.to_string())?;
        Ok(column(&csv, "count").iter().map(|v| v.parse().unwrap()).collect())
    };
    let capped = counts(&root.join("budget"), &["--budget", "500"])?;
    let free = counts(&root.join("no_budget"), &["--no-budget"])?;
    let (cmax, fmax) = (*capped.iter().max().unwrap(), *free.iter().max().unwrap());
    check(
        capped.len() == 500 && cmax <= 500 && fmax > 500,
        format!("g_max 500: max count {cmax} over {} iterations; --no-budget reaches {fmax}", capped.len()),
    )
}

fn partition_and_variants(root: &Path, data: &Path) -> Outcome {
    for f in 1..=200usize {
        for w in 1..=20i64 {
            let plan = keyframe_partition(f, w).map_err(|e| e.to_string())?;
            let kf: Vec<usize> = (1..=f).filter(|i| (*i as i64 - 1) % w == 0).collect();
            let cand: Vec<usize> = (1..=f).filter(|i| (*i as i64 - 1) % w != 0).collect();
            if plan.keyframes != kf || plan.candidates != cand {
                return Err(format!("partition mismatch at F={f} w={w}"));
            }
        }
    }
    let trace = |name: &str, extra: &[&str]| -> Result<Trace, String> {
        let dir = root.join(name);
        let mut a = vec!["train", "--data", s(data), "--out", s(&dir), "--iters", "300", "--set", "init_points=200"];
        a.extend(extra);
        g2t(&a)?;
        let csv = fs::read_to_string(dir.join("loss.csv")).map_err(|e| e.to_string())?;
        let frames = column(&csv, "frame").iter().map(|v| v.parse().unwrap()).collect();
        let counts = column(&csv, "count").iter().map(|v| v.parse().unwrap()).collect();
        Ok((frames, column(&csv, "kind"), counts))
    };
    let train_frames: Vec<usize> = (1..=12).filter(|f| f % 8 != 0).collect();
    let (iters_kf, iters_cand) = (20, 5);

    let (frames, kinds, _) = trace("kf_only", &["--stride", "5", "--kf-only"])?;
    let kf_frames: Vec<usize> = [1, 6, 11].iter().map(|&p| train_frames[p - 1]).collect();
    let expect: Vec<usize> = kf_frames.iter().flat_map(|&f| std::iter::repeat_n(f, iters_kf)).cycle().take(300).collect();
    if frames != expect || kinds.iter().any(|k| k != "keyframe") {
        return Err("kf-only trace visits candidate frames".into());
    }

    let (frames, kinds, _) = trace("stride1", &["--stride", "1"])?;
    let expect: Vec<usize> = train_frames.iter().flat_map(|&f| std::iter::repeat_n(f, iters_kf)).cycle().take(300).collect();
    if frames != expect || kinds.iter().any(|k| k != "keyframe") {
        return Err("w=1 trace does not fully optimize every frame".into());
    }

    let (frames, kinds, counts) = trace("default", &["--stride", "5"])?;
    let expect: Vec<(usize, &str)> = train_frames
        .iter()
        .enumerate()
        .flat_map(|(p, &f)| {
            let kf = p % 5 == 0;
            std::iter::repeat_n((f, if kf { "keyframe" } else { "candidate" }), if kf { iters_kf } else { iters_cand })
        })
        .cycle()
        .take(300)
        .collect();
    let got: Vec<(usize, &str)> = frames.iter().zip(&kinds).map(|(&f, k)| (f, k.as_str())).collect();
    if got != expect {
        return Err("default trace does not follow the keyframe/candidate schedule".into());
    }
    let cand_changes = (1..counts.len()).filter(|&i| kinds[i] == "candidate" && counts[i] != counts[i - 1]).count();
    if cand_changes > 0 {
        return Err(format!("{cand_changes} candidate iterations changed the primitive count"));
    }
    Ok("brute force F<=200, w<=20; kf-only, w=1 and default traces match the schedule".into())
}

fn bench(root: &Path, runs: &Runs) -> Outcome {
    let out = g2t(&["bench", "--scene", s(&runs.with.join("scene.txt")), "--data", s(&runs.data), "--repeats", "5", "--out", s(&root.join("bench"))])?;
    let io = column(&out, "io_calls")[0].parse::<u64>().map_err(|e| e.to_string())?;
    let (m, sd) = (numbers(&out, "fps_mean")[0], numbers(&out, "fps_std")[0]);
    check(io == 0 && sd / m < 0.2, format!("io_calls {io}, fps {m:.1} ± {sd:.1} (std/mean {:.3}, need < 0.2)", sd / m))
}

fn determinism(root: &Path, data: &Path) -> Outcome {
    let mut scenes = Vec::new();
    for threads in ["1", "8"] {
        let dir = root.join(format!("threads_{threads}"));
        g2t(&["--threads", threads, "train", "--data", s(data), "--out", s(&dir), "--iters", "300", "--stride", "5"])?;
        scenes.push(fs::read(dir.join("scene.txt")).map_err(|e| e.to_string())?);
    }
    check(scenes[0] == scenes[1], format!("300-iteration scene.txt, {} bytes, --threads 1 vs 8 identical: {}", scenes[0].len(), scenes[0] == scenes[1]))
}

fn report(name: &str, start: Instant, r: Outcome, failed: &mut usize) {
    let secs = start.elapsed().as_secs_f64();
    match r {
        Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
        Err(d) => {
            *failed += 1;
            println!("FAIL  {name}: {d} [{secs:.1}s]");
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut failed = 0;

    let t = Instant::now();
    report("gradient correctness", t, gradient_correctness(), &mut failed);
    let t = Instant::now();
    report("silog scale invariance", t, silog_invariance(), &mut failed);
    let t = Instant::now();
    report("schedule contract", t, schedule_contract(), &mut failed);
    let t = Instant::now();
    report("valid-set gate", t, valid_set_gate(), &mut failed);

    let t = Instant::now();
    match e2e_runs(root) {
        Ok(runs) => {
            let t2 = Instant::now();
            report("budget safety", t2, budget_safety(root, &runs.data), &mut failed);
            let t2 = Instant::now();
            report("keyframe partition and variants", t2, partition_and_variants(root, &runs.data), &mut failed);
            let t2 = Instant::now();
            report("knn velocity coherence", t2, knn_coherence(), &mut failed);
            let t2 = Instant::now();
            report("entropy bounds", t2, entropy_bounds(), &mut failed);
            report("end-to-end convergence", t, end_to_end(&runs), &mut failed);
            let t2 = Instant::now();
            report("raster-only bench", t2, bench(root, &runs), &mut failed);
            let t2 = Instant::now();
            report("determinism", t2, determinism(root, &runs.data), &mut failed);
        }
        Err(e) => {
            for name in ["budget safety", "keyframe partition and variants", "end-to-end convergence", "raster-only bench", "determinism"] {
                report(name, t, Err(format!("setup failed: {e}")), &mut failed);
            }
            let t2 = Instant::now();
            report("knn velocity coherence", t2, knn_coherence(), &mut failed);
            let t2 = Instant::now();
            report("entropy bounds", t2, entropy_bounds(), &mut failed);
        }
    }

    println!("{} criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
