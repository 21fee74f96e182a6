mod common;

use proptest::prelude::*;
use roadfuse::dataset::{load_kitti_road, synth_generate, LoadOptions, RoadFrame, SynthConfig};
use roadfuse::network::{build_model, FusionStrategy, ModelParams, NetConfig};
use roadfuse::training::{lr_schedule, train, TrainConfig, TrainLog, DEFAULT_INITIAL_LR, HALVING_PERIOD};
use roadfuse::Error;

const SIZE: (usize, usize) = (32, 64);

fn small_net() -> NetConfig {
    NetConfig { input_size: SIZE, width_scale: 16, head_width: 16, ..NetConfig::tiny(FusionStrategy::Siamese) }
}

fn frames(n: usize) -> Vec<RoadFrame> {
    synth_generate(&SynthConfig::new(n, SIZE, 5)).unwrap()
}

fn short_run(seed: u64, iterations: usize) -> (ModelParams<f32>, TrainLog) {
    let mut model = build_model(&small_net().with_seed(seed)).unwrap();
    let log = train(&mut model, &frames(3), &TrainConfig::tiny(iterations).with_seed(seed), None).unwrap();
    (model, log)
}

#[test]
fn paper_defaults() {
    let c = TrainConfig::paper();
    assert_eq!((c.iterations, c.halving_period, c.batch_size), (60_000, 5000, 1));
    assert_eq!(c.initial_lr, DEFAULT_INITIAL_LR);
    assert_eq!(c.lr(5000), DEFAULT_INITIAL_LR / 2.0);
    assert_eq!(c.lr(12_499), DEFAULT_INITIAL_LR / 4.0);
}

#[test]
fn first_loss_is_the_uniform_prior() {
    let (_, log) = short_run(0, 1);
    // zero-initialized score layers give equal logits everywhere
    assert!((log.records[0].loss - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn identical_seeds_give_identical_logs_and_weights() {
    let (m1, l1) = short_run(4, 6);
    let (m2, l2) = short_run(4, 6);
    assert_eq!(l1.to_csv(), l2.to_csv());
    assert_eq!(m1.to_checkpoint_bytes(), m2.to_checkpoint_bytes());
    let (_, l3) = short_run(5, 6);
    assert_ne!(l1.losses(), l3.losses());
}

#[test]
fn loss_log_csv_layout() {
    let (_, log) = short_run(1, 3);
    let csv = log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,lr,loss");
    assert_eq!(lines.len(), 4);
    let fields: Vec<f64> = lines[3].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields[0], 2.0);
    assert_eq!(fields[2], log.records[2].loss);
}

#[test]
fn checkpoints_are_written_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = build_model(&small_net()).unwrap();
    let config = TrainConfig { checkpoint_every: Some(2), ..TrainConfig::tiny(5) };
    train(&mut model, &frames(2), &config, Some(dir.path())).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["iter_000002.ckpt", "iter_000004.ckpt", "iter_000005.ckpt"]);
    let last = ModelParams::load(&small_net(), dir.path().join("iter_000005.ckpt")).unwrap();
    assert_eq!(last.to_checkpoint_bytes(), model.to_checkpoint_bytes());
}

#[test]
fn non_finite_loss_names_iteration_and_frame() {
    let mut bad = frames(1);
    bad[0].rgb[10] = f32::NAN;
    let mut model = build_model(&small_net()).unwrap();
    match train(&mut model, &bad, &TrainConfig::tiny(3), None) {
        Err(Error::Diverged { iteration, frame_id, .. }) => {
            assert_eq!(iteration, 0);
            assert_eq!(frame_id, bad[0].frame_id);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn rejects_empty_sets_mismatched_frames_and_bad_configs() {
    let mut model = build_model(&small_net()).unwrap();
    assert!(train(&mut model, &[], &TrainConfig::tiny(1), None).is_err());
    let wrong = synth_generate(&SynthConfig::new(1, (40, 64), 0)).unwrap();
    let err = train(&mut model, &wrong, &TrainConfig::tiny(1), None).unwrap_err();
    assert!(err.to_string().contains(&wrong[0].frame_id));
    for bad in [
        TrainConfig { iterations: 0, ..TrainConfig::tiny(1) },
        TrainConfig { initial_lr: 0.0, ..TrainConfig::tiny(1) },
        TrainConfig { batch_size: 2, ..TrainConfig::tiny(1) },
    ] {
        assert!(train(&mut model, &frames(1), &bad, None).is_err());
    }
}

#[test]
fn moving_average_windows() {
    let log = TrainLog {
        records: (0..5)
            .map(|i| roadfuse::training::LossRecord { iteration: i, lr: 0.1, loss: i as f64 })
            .collect(),
    };
    assert_eq!(log.moving_average(2), vec![0.5, 1.5, 2.5, 3.5]);
    assert!(log.moving_average(6).is_empty());
}

/// The two-frame memorization run on the bundled fixture: every loss finite
/// and each full 50-iteration average ending before iteration 200 below the
/// previous one.
#[test]
fn overfit_loss_is_finite_and_its_moving_average_decreases() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/two_frames");
    let frames = load_kitti_road(root, &LoadOptions::default()).unwrap();
    let mut model = build_model(&NetConfig::tiny(FusionStrategy::Siamese)).unwrap();
    let log = train(&mut model, &frames, &TrainConfig::tiny(300), None).unwrap();
    assert!(log.losses().iter().all(|l| l.is_finite()));
    let ma = log.moving_average(50);
    let rises: Vec<usize> = (0..150).filter(|&i| ma[i + 1] >= ma[i]).map(|i| i + 50).collect();
    assert!(rises.is_empty(), "moving average rises at iterations {rises:?}");
}

proptest! {
    #[test]
    fn schedule_is_piecewise_constant_and_non_increasing(iter in 0usize..200_000, lr in 1e-7f64..1.0) {
        let here = lr_schedule(lr, HALVING_PERIOD, iter);
        let next = lr_schedule(lr, HALVING_PERIOD, iter + 1);
        prop_assert!(next <= here);
        if (iter + 1) % HALVING_PERIOD == 0 {
            prop_assert_eq!(next, here / 2.0);
        } else {
            prop_assert_eq!(next, here);
        }
        prop_assert_eq!(here, lr * 0.5f64.powi((iter / HALVING_PERIOD) as i32));
    }
}
