use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use image::{GrayImage, Luma};
use roadfuse::cli::{run, Cli, QUARANTINE_DIR, RUN_MANIFEST};
use roadfuse::dataset::{load_kitti_road, synth_generate, LoadOptions, RoadFrame, SynthConfig};
use roadfuse::kv::KvMap;
use roadfuse::lidar::{read_limg, write_velodyne_bin, PointCloud};

fn roadfuse(args: &[&str]) -> roadfuse::Result<String> {
    let argv = std::iter::once("roadfuse").chain(args.iter().copied());
    run(&Cli::try_parse_from(argv).expect("arguments parse"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic dataset of `n` tiny-preset frames under `dir/data`.
fn synth_root(dir: &Path, n: usize) -> PathBuf {
    let root = dir.join("data");
    roadfuse(&["synth", "--frames", &n.to_string(), "--seed", "3", "--out", s(&root)]).unwrap();
    root
}

fn frames(root: &Path) -> Vec<RoadFrame> {
    load_kitti_road(root, &LoadOptions::default()).unwrap()
}

fn write_predictions(dir: &Path, frames: &[RoadFrame], prob: impl Fn(&RoadFrame, usize) -> u8) {
    fs::create_dir_all(dir).unwrap();
    for f in frames {
        let (h, w) = f.size();
        let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([prob(f, y as usize * w + x as usize)]));
        img.save(dir.join(format!("{}.png", f.frame_id))).unwrap();
    }
}

fn csv_row(path: &Path, label: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let line = text.lines().find(|l| l.starts_with(&format!("{label},"))).expect("row present");
    line.split(',').map(str::to_owned).collect()
}

#[test]
fn synth_writes_layout_and_full_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 3);
    for sub in ["image_2", "gt_image_2", "velodyne", "calib"] {
        assert_eq!(fs::read_dir(root.join("training").join(sub)).unwrap().count(), 3, "{sub}");
    }
    let manifest = KvMap::parse(&fs::read_to_string(root.join(RUN_MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.get_str("command"), Some("synth"));
    // defaults are echoed as well as flags
    assert_eq!(manifest.get_str("preset"), Some("tiny"));
    assert_eq!(manifest.get::<usize>("frames").unwrap(), Some(3));
    assert!(!root.join(QUARANTINE_DIR).exists());
    assert!(!root.join(".staging").exists());
}

#[test]
fn manifest_replays_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = synth_root(dir.path(), 2);
    let replay = dir.path().join("replay");
    roadfuse(&["synth", "--config", s(&first.join(RUN_MANIFEST)), "--out", s(&replay)]).unwrap();
    for sub in ["image_2", "velodyne", "calib", "gt_image_2"] {
        for entry in fs::read_dir(first.join("training").join(sub)).unwrap() {
            let path = entry.unwrap().path();
            let twin = replay.join("training").join(sub).join(path.file_name().unwrap());
            assert_eq!(fs::read(&path).unwrap(), fs::read(twin).unwrap(), "{}", path.display());
        }
    }
}

#[test]
fn foreign_or_unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "command = train\niterations = 5\n").unwrap();
    let err = roadfuse(&["synth", "--config", s(&cfg)]).unwrap_err();
    assert!(err.to_string().contains("train"), "{err}");
    fs::write(&cfg, "frames = 2\nlearning_rate = 0.1\n").unwrap();
    let err = roadfuse(&["synth", "--config", s(&cfg)]).unwrap_err();
    assert!(err.to_string().contains("learning_rate"), "{err}");
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    let out = dir.path().join("o");
    fs::write(&cfg, "frames = 4\nseed = 9\n").unwrap();
    roadfuse(&["synth", "--config", s(&cfg), "--frames", "1", "--out", s(&out)]).unwrap();
    let manifest = KvMap::parse(&fs::read_to_string(out.join(RUN_MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.get::<usize>("frames").unwrap(), Some(1));
    assert_eq!(manifest.get::<u64>("seed").unwrap(), Some(9));
}

#[test]
fn eval_of_ground_truth_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 4);
    let frames = frames(&root);
    let preds = dir.path().join("preds");
    write_predictions(&preds, &frames, |f, i| if f.gt_road[i] { 255 } else { 0 });
    let out = dir.path().join("eval");
    let report = roadfuse(&["eval", "--data-root", s(&root), "--predictions", s(&preds), "--out", s(&out)]).unwrap();
    assert!(report.contains("ALL"));
    let all = csv_row(&out.join("metrics.csv"), "ALL");
    for field in &all[1..5] {
        assert_eq!(field.parse::<f64>().unwrap(), 1.0);
    }
    assert!(fs::read_to_string(out.join("metrics.txt")).unwrap().contains("MaxF"));
}

#[test]
fn eval_in_bird_eye_view_reports_every_category() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 3);
    let frames = frames(&root);
    let preds = dir.path().join("preds");
    write_predictions(&preds, &frames, |f, i| if f.gt_road[i] { 230 } else { 20 });
    let out = dir.path().join("eval");
    roadfuse(&["eval", "--data-root", s(&root), "--predictions", s(&preds), "--bev", "--out", s(&out)]).unwrap();
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 + 1, "{text}");
    assert_eq!(csv_row(&out.join("metrics.csv"), "ALL")[1].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn eval_needs_exactly_one_prediction_source() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 1);
    assert!(roadfuse(&["eval", "--data-root", s(&root)]).is_err());
}

#[test]
fn failed_run_is_quarantined_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 3);
    let frames = frames(&root);
    let preds = dir.path().join("preds");
    // one prediction is missing
    write_predictions(&preds, &frames[..2], |_, _| 128);
    let out = dir.path().join("eval");
    let status = Process::new(env!("CARGO_BIN_EXE_roadfuse"))
        .args(["eval", "--data-root", s(&root), "--predictions", s(&preds), "--out", s(&out)])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(!String::from_utf8_lossy(&status.stderr).is_empty());
    assert!(out.join(RUN_MANIFEST).exists());
    assert!(out.join(QUARANTINE_DIR).is_dir());
    assert!(!out.join("metrics.txt").exists());
    assert!(!out.join(".staging").exists());
}

#[test]
fn project_matches_the_generator_raster() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 2);
    let out = dir.path().join("proj");
    roadfuse(&["project", "--data-root", s(&root), "--out", s(&out)]).unwrap();
    let expected = synth_generate(&SynthConfig::new(2, (96, 312), 3)).unwrap();
    for f in &expected {
        let limg = read_limg(out.join("limg").join(format!("{}.limg", f.frame_id))).unwrap();
        assert_eq!(limg, f.lidar);
    }
    let csv = fs::read_to_string(out.join("occupancy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn project_of_an_empty_scan_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 1);
    let id = &frames(&root)[0].frame_id;
    write_velodyne_bin(root.join("training/velodyne").join(format!("{id}.bin")), &PointCloud::new(Vec::new())).unwrap();
    let out = dir.path().join("proj");
    let report = roadfuse(&["project", "--data-root", s(&root), "--out", s(&out)]).unwrap();
    assert!(report.contains("0 points"), "{report}");
    let limg = read_limg(out.join("limg").join(format!("{id}.limg"))).unwrap();
    assert!(limg.data().iter().all(|&v| v == 0.0));
    assert_eq!(limg.occupied(), 0);
}

#[test]
fn train_then_infer_and_evaluate_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth_root(dir.path(), 4);
    let run_dir = dir.path().join("train");
    let args = ["train", "--data-root", s(&root), "--out", s(&run_dir)];
    roadfuse(&[&args[..], &["--iterations", "3", "--train-frames", "3", "--checkpoint-every", "2"]].concat()).unwrap();
    let loss = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    for file in ["model.ckpt", "split.txt", "val_metrics.txt", "train_config.txt", "checkpoints/iter_000002.ckpt"] {
        assert!(run_dir.join(file).exists(), "{file}");
    }

    let ckpt = run_dir.join("model.ckpt");
    let split = run_dir.join("split.txt");
    let infer_dir = dir.path().join("infer");
    roadfuse(&["infer", "--data-root", s(&root), "--checkpoint", s(&ckpt), "--split", s(&split), "--out", s(&infer_dir)])
        .unwrap();
    let probs: Vec<_> = fs::read_dir(infer_dir.join("prob")).unwrap().collect();
    assert_eq!(probs.len(), 1);
    for sub in ["prob", "overlay"] {
        for entry in fs::read_dir(infer_dir.join(sub)).unwrap() {
            let img = image::open(entry.unwrap().path()).unwrap();
            assert_eq!((img.width(), img.height()), (312, 96));
        }
    }

    let eval_dir = dir.path().join("eval");
    roadfuse(&["eval", "--data-root", s(&root), "--checkpoint", s(&ckpt), "--split", s(&split), "--out", s(&eval_dir)])
        .unwrap();
    // one validation frame: one category row plus the total
    assert_eq!(fs::read_to_string(eval_dir.join("metrics.csv")).unwrap().lines().count(), 3);

    // a checkpoint of another strategy is refused
    let err = roadfuse(&["infer", "--data-root", s(&root), "--checkpoint", s(&ckpt), "--strategy", "early"]).unwrap_err();
    assert!(!err.to_string().is_empty());
}

#[test]
fn compare_fusion_reports_three_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let report = roadfuse(&["compare-fusion", "--frames", "4", "--train-frames", "3", "--iterations", "2", "--out", s(&out)])
        .unwrap();
    for label in ["Early Fusion", "Late Fusion", "Siamese structure"] {
        assert!(report.contains(label), "{report}");
    }
    let csv = fs::read_to_string(out.join("fusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for strategy in ["early", "late", "siamese"] {
        assert!(out.join(format!("loss_{strategy}.csv")).exists());
    }
}
