use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rayon::prelude::*;

use super::compare::{compare_fusion, fusion_table};
use super::run_dir::with_run_dir;
use super::Settings;
use crate::dataset::{
    export_synthetic, load_calibration, load_kitti_road, split_train_val, synth_generate, LoadOptions, RoadFrame,
    SplitSpec, SynthConfig, CAMERA_HEIGHT, DEFAULT_TRAIN_FRAMES, KITTI_TRAINING_COUNTS,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    bev_sweep, evaluate_frames, ground_homography, metrics_csv, metrics_table, pixel_accuracy, predict_road, render_overlay, BevGrid,
    FnrMode, MetricsReport, Sweep, TABLE_BENCHMARK,
};
use crate::kv::KvMap;
use crate::lidar::{load_velodyne_bin, project_points, rasterize_lidar_image, write_limg};
use crate::network::{build_model, FusionStrategy, ModelParams, NetConfig, Preset};
use crate::training::{train_with, TrainConfig};

const SPLIT_FILE: &str = "split.txt";

fn out_dir(s: &mut Settings, command: &str) -> Result<PathBuf> {
    Ok(PathBuf::from(s.value("out", format!("runs/{command}"))?))
}

fn net_config(s: &mut Settings) -> Result<(Preset, NetConfig)> {
    let preset = s.value("preset", Preset::Tiny)?;
    let strategy = s.value("strategy", FusionStrategy::Siamese)?;
    let seed = s.value("seed", 0u64)?;
    Ok((preset, NetConfig::preset(preset, strategy).with_seed(seed)))
}

fn schedule(s: &mut Settings, preset: Preset, seed: u64) -> Result<TrainConfig> {
    let base = TrainConfig::preset(preset).with_seed(seed);
    let config = TrainConfig {
        iterations: s.value("iterations", base.iterations)?,
        initial_lr: s.value("initial_lr", base.initial_lr)?,
        halving_period: s.value("halving_period", base.halving_period)?,
        ..base
    };
    config.validate()?;
    Ok(config)
}

fn load_frames(root: &Path, size: Option<(usize, usize)>) -> Result<Vec<RoadFrame>> {
    let frames = load_kitti_road(root, &LoadOptions { category: None, target_size: size })?;
    if frames.is_empty() {
        return Err(Error::Dataset(format!("no frames under {}", root.join("training").display())));
    }
    Ok(frames)
}

/// Frames listed as validation in a split file.
fn restrict_to_split(frames: Vec<RoadFrame>, split: Option<&Path>) -> Result<Vec<RoadFrame>> {
    let Some(path) = split else {
        return Ok(frames);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = SplitSpec::from_kv(&KvMap::parse(&text)?)?;
    let (_, val) = split_train_val(frames, &spec).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(val)
}

fn default_train_count(n: usize) -> usize {
    if n == KITTI_TRAINING_COUNTS.0 {
        DEFAULT_TRAIN_FRAMES
    } else {
        n * 4 / 5
    }
}

pub(super) fn synth(s: &mut Settings) -> Result<String> {
    let out = out_dir(s, "synth")?;
    let preset = s.value("preset", Preset::Tiny)?;
    let seed = s.value("seed", 0u64)?;
    let frames = s.value("frames", 50usize)?;
    let (h, w) = NetConfig::preset(preset, FusionStrategy::Siamese).input_size;
    let config = SynthConfig::new(frames, (h, w), seed);
    config.validate()?;
    let ids = with_run_dir(&out, s.manifest(), |dir| export_synthetic(dir, &config))?;
    Ok(format!("wrote {} synthetic {h}x{w} frames to {}\n", ids.len(), out.join("training").display()))
}

pub(super) fn project(s: &mut Settings) -> Result<String> {
    let out = out_dir(s, "project")?;
    let root = s.required_path("data_root", "to find velodyne scans")?;
    let velodyne = root.join("training").join("velodyne");
    let mut ids: Vec<String> = fs::read_dir(&velodyne)
        .map_err(|e| Error::Dataset(format!("cannot list {}: {e}", velodyne.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "bin").then(|| p.file_stem()?.to_str().map(str::to_owned))?
        })
        .collect();
    ids.sort();
    with_run_dir(&out, s.manifest(), |dir| {
        let limg = dir.join("limg");
        fs::create_dir_all(&limg)?;
        let rows = ids
            .par_iter()
            .map(|id| {
                let calib = load_calibration(&root, id, None)?;
                let cloud = load_velodyne_bin(velodyne.join(format!("{id}.bin")))?;
                let projected = project_points(&cloud, &calib);
                let image = rasterize_lidar_image(&projected, calib.image_size);
                write_limg(limg.join(format!("{id}.limg")), &image)?;
                Ok((id.clone(), cloud.len(), projected.len(), image.occupied(), image.occupancy()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut csv = String::from("frame,points,projected,occupied_pixels,occupancy\n");
        let mut report = String::new();
        for (id, points, projected, occupied, occupancy) in &rows {
            let _ = writeln!(csv, "{id},{points},{projected},{occupied},{occupancy:e}");
            let _ = writeln!(
                report,
                "{id}: {points} points, {projected} in view, {occupied} pixels occupied ({:.2}%)",
                100.0 * occupancy
            );
        }
        let mean = rows.iter().map(|r| r.4).sum::<f64>() / rows.len().max(1) as f64;
        let _ = writeln!(report, "{} frames, mean occupancy {:.2}%", rows.len(), 100.0 * mean);
        fs::write(dir.join("occupancy.csv"), csv)?;
        Ok(report)
    })
}

pub(super) fn train(s: &mut Settings) -> Result<String> {
    let out = out_dir(s, "train")?;
    let root = s.required_path("data_root", "for training")?;
    let (preset, net) = net_config(s)?;
    let mode = s.value("fnr_mode", FnrMode::default())?;
    let config = TrainConfig {
        checkpoint_every: s.optional("checkpoint_every")?,
        ..schedule(s, preset, net.seed)?
    };
    config.validate()?;
    let frames = load_frames(&root, Some(net.input_size))?;
    let split = s
        .optional::<usize>("train_frames")?
        .map(|n| SplitSpec::stratified(&frames, n, net.seed))
        .transpose()?;

    with_run_dir(&out, s.manifest(), |dir| {
        fs::write(dir.join("train_config.txt"), config.to_kv().to_text())?;
        let (train_set, val_set) = match &split {
            Some(spec) => {
                fs::write(dir.join(SPLIT_FILE), spec.to_kv().to_text())?;
                split_train_val(frames, spec)?
            }
            None => (frames, Vec::new()),
        };
        let mut model = build_model(&net)?;
        let every = (config.iterations / 20).max(1);
        let log = train_with(&mut model, &train_set, &config, Some(&dir.join("checkpoints")), |r| {
            if (r.iteration + 1) % every == 0 {
                eprintln!("iteration {:>6}  lr {:.3e}  loss {:.5}", r.iteration + 1, r.lr, r.loss);
            }
        })?;
        log.write_csv(dir.join("loss.csv"))?;
        model.save(dir.join("model.ckpt"))?;

        let mut report = format!(
            "{} / {}: {} iterations on {} frames, final loss {:.5}\n",
            net.strategy,
            preset,
            config.iterations,
            train_set.len(),
            log.records.last().map_or(f64::NAN, |r| r.loss)
        );
        let _ = writeln!(report, "training pixel accuracy {:.4}", pixel_accuracy(&model, &train_set)?);
        if !val_set.is_empty() {
            let metrics = evaluate_frames(&model, &val_set)?.report(mode);
            let table = metrics_table("Validation", &[(net.strategy.to_string(), metrics)], TABLE_BENCHMARK);
            fs::write(dir.join("val_metrics.txt"), &table)?;
            report.push_str(&table);
        }
        Ok(report)
    })
}

/// Road probability from an 8-bit PNG (`value / 255`).
fn read_probability(path: &Path, frame: &RoadFrame) -> Result<Vec<f32>> {
    let img = image::open(path)?.to_luma8();
    if (img.height() as usize, img.width() as usize) != frame.size() {
        return Err(Error::format(
            path,
            format!("prediction is {}x{}, frame {} is {:?}", img.height(), img.width(), frame.frame_id, frame.size()),
        ));
    }
    Ok(img.pixels().map(|Luma([v])| *v as f32 / 255.0).collect())
}

fn write_probability(path: &Path, prob: &[f32], (h, w): (usize, usize)) -> Result<()> {
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(prob[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}

enum Source {
    Model(Box<ModelParams<f32>>),
    Pngs(PathBuf),
}

impl Source {
    fn probability(&self, frame: &RoadFrame) -> Result<Vec<f32>> {
        match self {
            Source::Model(m) => predict_road(m, frame),
            Source::Pngs(dir) => read_probability(&dir.join(format!("{}.png", frame.frame_id)), frame),
        }
    }
}

fn load_model(s: &mut Settings, path: &Path) -> Result<ModelParams<f32>> {
    let (_, net) = net_config(s)?;
    ModelParams::load(&net, path)
}

pub(super) fn eval(s: &mut Settings) -> Result<String> {
    let out = out_dir(s, "eval")?;
    let root = s.required_path("data_root", "for ground truth")?;
    let mode = s.value("fnr_mode", FnrMode::default())?;
    let bev = s.value("bev", false)?;
    let split = s.path("split")?;
    let (source, size) = match (s.path("checkpoint")?, s.path("predictions")?) {
        (Some(ckpt), None) => {
            let model = load_model(s, &ckpt)?;
            let size = model.config().input_size;
            (Source::Model(Box::new(model)), Some(size))
        }
        (None, Some(dir)) => (Source::Pngs(dir), None),
        _ => return Err(Error::Config("eval needs exactly one of --checkpoint or --predictions".into())),
    };
    let frames = restrict_to_split(load_frames(&root, size)?, split.as_deref())?;

    with_run_dir(&out, s.manifest(), |dir| {
        let grid = BevGrid::default();
        let sweeps = frames
            .par_iter()
            .map(|f| {
                let prob = source.probability(f)?;
                let sweep = if bev {
                    let calib = load_calibration(&root, &f.frame_id, Some(f.size()))?;
                    let h = ground_homography(&calib.k, CAMERA_HEIGHT, &grid);
                    bev_sweep(&prob, &f.gt_road, &f.gt_valid, f.size(), &h, &grid)?
                } else {
                    Sweep::from_frame(&prob, &f.gt_road, &f.gt_valid)?
                };
                Ok((f.category, sweep))
            })
            .collect::<Result<Vec<_>>>()?;
        let present: BTreeSet<_> = sweeps.iter().map(|(c, _)| *c).collect();
        let mut rows: Vec<(String, MetricsReport)> = Vec::new();
        let mut all = Sweep::default();
        for cat in present {
            let mut total = Sweep::default();
            for (_, sw) in sweeps.iter().filter(|(c, _)| *c == cat) {
                total.merge(sw);
            }
            all.merge(&total);
            rows.push((format!("{cat}_ROAD"), total.report(mode)));
        }
        rows.push(("ALL".into(), all.report(mode)));
        let label = if bev { "Category (BEV)" } else { "Category" };
        let table = metrics_table(label, &rows, TABLE_BENCHMARK);
        fs::write(dir.join("metrics.txt"), &table)?;
        fs::write(dir.join("metrics.csv"), metrics_csv("category", &rows))?;
        Ok(format!("{} frames, FNR mode {mode}\n{table}", frames.len()))
    })
}

pub(super) fn infer(s: &mut Settings) -> Result<String> {
    let out = out_dir(s, "infer")?;
    let root = s.required_path("data_root", "to find frames")?;
    let ckpt = s.required_path("checkpoint", "for inference")?;
    let split = s.path("split")?;
    let tau = s.value("threshold", 0.5f32)?;
    let model = load_model(s, &ckpt)?;
    let frames = restrict_to_split(load_frames(&root, Some(model.config().input_size))?, split.as_deref())?;

    with_run_dir(&out, s.manifest(), |dir| {
        let (prob_dir, overlay_dir) = (dir.join("prob"), dir.join("overlay"));
        fs::create_dir_all(&prob_dir)?;
        fs::create_dir_all(&overlay_dir)?;
        frames.par_iter().try_for_each(|f| -> Result<()> {
            let prob = predict_road(&model, f)?;
            write_probability(&prob_dir.join(format!("{}.png", f.frame_id)), &prob, f.size())?;
            render_overlay(&f.rgb, &prob, &f.gt_road, &f.gt_valid, tau, f.size())?
                .save(overlay_dir.join(format!("{}.png", f.frame_id)))?;
            Ok(())
        })?;
        Ok(format!(
            "wrote {} probability maps and overlays (threshold {tau}) to {}\n",
            frames.len(),
            out.display()
        ))
    })
}

pub(super) fn compare(s: &mut Settings) -> Result<String> {
    let out = out_dir(s, "compare-fusion")?;
    let (preset, net) = net_config(s)?;
    let mode = s.value("fnr_mode", FnrMode::default())?;
    let config = schedule(s, preset, net.seed)?;
    let frames = match s.path("data_root")? {
        Some(root) => load_frames(&root, Some(net.input_size))?,
        None => {
            let n = s.value("frames", 50usize)?;
            synth_generate(&SynthConfig::new(n, net.input_size, net.seed))?
        }
    };
    let n_train = s.value("train_frames", default_train_count(frames.len()))?;
    let spec = SplitSpec::stratified(&frames, n_train, net.seed)?;

    with_run_dir(&out, s.manifest(), |dir| {
        fs::write(dir.join(SPLIT_FILE), spec.to_kv().to_text())?;
        let (train_set, val_set) = split_train_val(frames, &spec)?;
        if val_set.is_empty() {
            return Err(Error::Config("the split leaves no validation frames".into()));
        }
        let runs = compare_fusion(&train_set, &val_set, &net, &config, mode)?;
        for run in &runs {
            run.log.write_csv(dir.join(format!("loss_{}.csv", run.strategy)))?;
        }
        let table = fusion_table(&runs);
        let rows: Vec<_> = runs.iter().map(|r| (r.label().to_owned(), r.report)).collect();
        fs::write(dir.join("fusion.txt"), &table)?;
        fs::write(dir.join("fusion.csv"), metrics_csv("strategy", &rows))?;
        Ok(format!(
            "{} training / {} validation frames, {} iterations each\n{table}",
            train_set.len(),
            val_set.len(),
            config.iterations
        ))
    })
}
