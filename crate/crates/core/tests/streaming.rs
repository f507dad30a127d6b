use g2t_core::field::GaussianField;
use g2t_core::losses::PriorFrame;
use g2t_core::stream::{train_sequence, Frame, FrameKind, TrainConfig};
use g2t_core::synth::{frame_time, generate_scene, simulate_prior, Motion, SceneSpec};

fn data(frames: usize) -> (Vec<Frame>, Vec<PriorFrame>) {
    let spec = SceneSpec { frames, n_blobs: 5, backdrop: 5, motion: Motion::Linear, ..SceneSpec::with_size(20, 16) };
    let scene = generate_scene(&spec).unwrap();
    let priors = scene.frames.iter().map(|f| simulate_prior(&f.depth, &spec, f.index)).collect();
    let frames = scene
        .frames
        .iter()
        .map(|f| Frame { index: f.index, time: frame_time(f.index, frames), camera: scene.camera.clone(), rgb: f.rgb.clone() })
        .collect();
    (frames, priors)
}

fn small_cfg() -> TrainConfig {
    TrainConfig { iters: 120, stride: 3, init_points: 80, iters_kf: 6, iters_cand: 2, checkpoint_every: 0, ..TrainConfig::default() }
}

fn snapshots(frames: &[Frame], priors: &[PriorFrame], cfg: &TrainConfig) -> (Vec<GaussianField>, Vec<g2t_core::stream::IterRecord>) {
    let cfg = TrainConfig { checkpoint_every: 1, ..cfg.clone() };
    let mut fields = Vec::new();
    let out = train_sequence(frames, priors, &cfg, |c| {
        fields.push(c.field.clone());
        Ok(())
    })
    .unwrap();
    (fields, out.log)
}

#[test]
fn budget_binds_and_holds() {
    let (frames, priors) = data(6);
    let mut cfg = small_cfg();
    cfg.budget.g_max = 100;
    cfg.budget.densify_grad_threshold = 0.0;
    cfg.budget.densify_interval = 10;
    let capped = train_sequence(&frames, &priors, &cfg, |_| Ok(())).unwrap();
    assert!(capped.log.iter().all(|r| r.count <= 100));
    let counts: Vec<usize> = capped.log.iter().map(|r| r.count).collect();
    assert!(counts.contains(&100), "{counts:?}");
    cfg.no_budget = true;
    cfg.iters = 40;
    let free = train_sequence(&frames, &priors, &cfg, |_| Ok(())).unwrap();
    assert!(free.log.iter().any(|r| r.count > 100));
}

#[test]
fn candidates_touch_only_appearance() {
    let (frames, priors) = data(5);
    let mut cfg = small_cfg();
    cfg.iters = 40;
    cfg.budget.densify_grad_threshold = 0.0;
    cfg.budget.densify_interval = 6;
    let (fields, log) = snapshots(&frames, &priors, &cfg);
    let mut checked = 0;
    for k in 1..log.len() {
        if log[k].kind != FrameKind::Candidate {
            continue;
        }
        assert_eq!(log[k].count, log[k - 1].count);
        let (before, after) = (&fields[k - 1], &fields[k]);
        for (a, b) in before.primitives.iter().zip(&after.primitives) {
            assert_eq!((a.center, a.log_scale, a.rotation), (b.center, b.log_scale, b.rotation));
            assert_eq!((a.velocity, a.rotor_rate, a.t_center, a.t_sigma), (b.velocity, b.rotor_rate, b.t_center, b.t_sigma));
        }
        assert_ne!(before, after);
        checked += 1;
    }
    assert!(checked > 5);

    cfg.candidate_opacity = false;
    let (fields, log) = snapshots(&frames, &priors, &cfg);
    for k in 1..log.len() {
        if log[k].kind == FrameKind::Candidate {
            let same = fields[k - 1].primitives.iter().zip(&fields[k].primitives).all(|(a, b)| a.opacity_logit == b.opacity_logit);
            assert!(same);
        }
    }
}

#[test]
fn variant_traces() {
    let (frames, priors) = data(7);
    let cfg = TrainConfig { iters: 100, ..small_cfg() };

    let kf = train_sequence(&frames, &priors, &TrainConfig { kf_only: true, ..cfg.clone() }, |_| Ok(())).unwrap();
    assert!(kf.log.iter().all(|r| r.kind == FrameKind::Keyframe && [1, 4, 7].contains(&r.frame)));

    let every = train_sequence(&frames, &priors, &TrainConfig { stride: 1, ..cfg.clone() }, |_| Ok(())).unwrap();
    assert!(every.log.iter().all(|r| r.kind == FrameKind::Keyframe));
    let first_epoch: Vec<usize> = every.log[..7 * cfg.iters_kf].iter().map(|r| r.frame).collect();
    let expect: Vec<usize> = (1..=7).flat_map(|f| std::iter::repeat_n(f, cfg.iters_kf)).collect();
    assert_eq!(first_epoch, expect);

    let mixed = train_sequence(&frames, &priors, &cfg, |_| Ok(())).unwrap();
    let visits: Vec<(usize, FrameKind)> = mixed.log[..3 * 6 + 4 * 2].iter().map(|r| (r.frame, r.kind)).collect();
    assert_eq!(visits[0], (1, FrameKind::Keyframe));
    assert_eq!(visits[6], (2, FrameKind::Candidate));
    assert_eq!(visits[10], (4, FrameKind::Keyframe));
}

#[test]
fn single_frame_has_no_velocity_term() {
    let (frames, priors) = data(1);
    let out = train_sequence(&frames, &priors, &TrainConfig { iters: 30, ..small_cfg() }, |_| Ok(())).unwrap();
    assert!(out.log.iter().all(|r| r.report.velocity == 0.0 && r.frame == 1));
    assert!(out.log.last().unwrap().report.photo < out.log[0].report.photo);
}

#[test]
fn misaligned_inputs_rejected() {
    let (frames, priors) = data(4);
    let mut called = false;
    let r = train_sequence(&frames, &priors[..3], &small_cfg(), |_| {
        called = true;
        Ok(())
    });
    assert!(r.is_err());
    assert!(!called);
    let (_, other) = data(4);
    let mut bad = other.clone();
    bad[2].confidence = g2t_core::Image::new(3, 3, 1);
    assert!(train_sequence(&frames, &bad, &small_cfg(), |_| Ok(())).is_err());
}

#[test]
fn rerun_is_bit_identical() {
    let (frames, priors) = data(5);
    let cfg = TrainConfig { iters: 60, ..small_cfg() };
    let a = train_sequence(&frames, &priors, &cfg, |_| Ok(())).unwrap();
    let b = train_sequence(&frames, &priors, &cfg, |_| Ok(())).unwrap();
    assert_eq!(a.field, b.field);
    assert_eq!(a.log, b.log);
}
