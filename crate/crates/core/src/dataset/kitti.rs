use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rayon::prelude::*;

use super::{Category, RoadFrame};
use crate::error::{Error, Result};
use crate::lidar::{
    load_velodyne_bin, parse_calib, project_points, rasterize_lidar_image, write_calib_str,
    write_velodyne_bin, CalibrationSet, PointCloud,
};

/// Training-split frame counts of the full KITTI ROAD release: total, UM, UMM, UU.
pub const KITTI_TRAINING_COUNTS: (usize, usize, usize, usize) = (289, 95, 96, 98);

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Keep only one category.
    pub category: Option<Category>,
    /// Resample every frame to `(height, width)`; the LiDAR image is
    /// re-projected through correspondingly scaled intrinsics.
    pub target_size: Option<(usize, usize)>,
}

/// `road ⟺ R > 127 ∧ B > 127`, `valid ⟺ R > 127`.
pub fn decode_gt_mask(gt: &RgbImage) -> (Vec<bool>, Vec<bool>) {
    gt.pixels()
        .map(|Rgb([r, _, b])| (*r > 127 && *b > 127, *r > 127))
        .unzip()
}

/// Inverse of [`decode_gt_mask`]: magenta road, red valid non-road, black ignore.
pub fn encode_gt_mask(road: &[bool], valid: &[bool], height: usize, width: usize) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        match (road[i], valid[i]) {
            (true, _) => Rgb([255, 0, 255]),
            (false, true) => Rgb([255, 0, 0]),
            (false, false) => Rgb([0, 0, 0]),
        }
    })
}

struct FrameFiles {
    id: String,
    category: Category,
    image: PathBuf,
    gt: PathBuf,
    calib: PathBuf,
    velodyne: PathBuf,
}

fn discover(root: &Path, filter: Option<Category>) -> Result<Vec<FrameFiles>> {
    let training = root.join("training");
    let image_dir = training.join("image_2");
    let entries = fs::read_dir(&image_dir)
        .map_err(|e| Error::Dataset(format!("cannot list {}: {e}", image_dir.display())))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Some((prefix, number)) = stem.split_once('_') else {
            continue;
        };
        let Ok(category) = prefix.parse::<Category>() else {
            continue;
        };
        if filter.is_some_and(|f| f != category) {
            continue;
        }
        frames.push(FrameFiles {
            id: stem.to_owned(),
            category,
            gt: training
                .join("gt_image_2")
                .join(format!("{prefix}_road_{number}.png")),
            calib: training.join("calib").join(format!("{stem}.txt")),
            velodyne: training.join("velodyne").join(format!("{stem}.bin")),
            image: path,
        });
    }
    frames.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(frames)
}

fn load_frame(files: &FrameFiles, opts: &LoadOptions) -> Result<RoadFrame> {
    for (what, path) in [
        ("ground truth", &files.gt),
        ("calibration", &files.calib),
        ("velodyne scan", &files.velodyne),
    ] {
        if !path.is_file() {
            return Err(Error::Dataset(format!(
                "frame {}: missing {what} file {}",
                files.id,
                path.display()
            )));
        }
    }
    let mut rgb = image::open(&files.image)?.to_rgb8();
    let mut gt = image::open(&files.gt)?.to_rgb8();
    if rgb.dimensions() != gt.dimensions() {
        return Err(Error::Dataset(format!(
            "frame {}: image is {:?} but ground truth is {:?}",
            files.id,
            rgb.dimensions(),
            gt.dimensions()
        )));
    }
    let native = (rgb.height() as usize, rgb.width() as usize);
    let mut calib = parse_calib(&files.calib, native)?;
    let cloud = load_velodyne_bin(&files.velodyne)?;
    if let Some((h, w)) = opts.target_size.filter(|&s| s != native) {
        rgb = imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
        gt = imageops::resize(&gt, w as u32, h as u32, FilterType::Nearest);
        calib = calib.resized(h, w)?;
    }
    let (gt_road, gt_valid) = decode_gt_mask(&gt);
    let frame = RoadFrame {
        frame_id: files.id.clone(),
        category: files.category,
        rgb: planar_rgb(&rgb),
        lidar: rasterize_lidar_image(&project_points(&cloud, &calib), calib.image_size),
        gt_road,
        gt_valid,
    };
    frame.validate()?;
    Ok(frame)
}

pub(crate) fn planar_rgb(img: &RgbImage) -> Vec<f32> {
    let plane = (img.width() * img.height()) as usize;
    let mut out = vec![0.0; 3 * plane];
    for (i, Rgb(px)) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    out
}

pub(crate) fn rgb_image(planar: &[f32], height: usize, width: usize) -> RgbImage {
    let plane = height * width;
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        let q = |c: usize| (planar[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    })
}

/// Calibration of one frame, rescaled to `target_size` when given. The
/// native image size is read from the frame's camera image.
pub fn load_calibration(root: impl AsRef<Path>, frame_id: &str, target_size: Option<(usize, usize)>) -> Result<CalibrationSet> {
    let training = root.as_ref().join("training");
    let image = training.join("image_2").join(format!("{frame_id}.png"));
    let (w, h) = image::image_dimensions(&image)?;
    let calib = parse_calib(training.join("calib").join(format!("{frame_id}.txt")), (h as usize, w as usize))?;
    match target_size {
        Some((th, tw)) if (th, tw) != (h as usize, w as usize) => calib.resized(th, tw),
        _ => Ok(calib),
    }
}

/// Loads `root/training/{image_2, gt_image_2, calib, velodyne}` sorted by
/// frame id. Frames are decoded in parallel.
pub fn load_kitti_road(root: impl AsRef<Path>, opts: &LoadOptions) -> Result<Vec<RoadFrame>> {
    let files = discover(root.as_ref(), opts.category)?;
    let frames = files
        .par_iter()
        .map(|f| load_frame(f, opts))
        .collect::<Result<Vec<_>>>()?;
    if opts.category.is_none() {
        verify_full_training_counts(&frames)?;
    }
    Ok(frames)
}

/// When exactly the full training split is present, its per-category counts
/// must match the official release.
pub fn verify_full_training_counts(frames: &[RoadFrame]) -> Result<()> {
    let (total, um, umm, uu) = KITTI_TRAINING_COUNTS;
    if frames.len() != total {
        return Ok(());
    }
    let count = |c: Category| frames.iter().filter(|f| f.category == c).count();
    let got = (count(Category::Um), count(Category::Umm), count(Category::Uu));
    if got != (um, umm, uu) {
        return Err(Error::Dataset(format!(
            "{total} frames found but category counts are {got:?}, expected {:?}",
            (um, umm, uu)
        )));
    }
    Ok(())
}

/// Writes one frame in KITTI layout under `root/training`.
pub fn write_frame_kitti(
    root: impl AsRef<Path>,
    frame: &RoadFrame,
    cloud: &PointCloud,
    calib: &CalibrationSet,
) -> Result<()> {
    let training = root.as_ref().join("training");
    for dir in ["image_2", "gt_image_2", "calib", "velodyne"] {
        fs::create_dir_all(training.join(dir))?;
    }
    let (h, w) = frame.size();
    let id = &frame.frame_id;
    let (prefix, number) = id
        .split_once('_')
        .ok_or_else(|| Error::Dataset(format!("frame id {id:?} lacks a category prefix")))?;
    rgb_image(&frame.rgb, h, w).save(training.join("image_2").join(format!("{id}.png")))?;
    encode_gt_mask(&frame.gt_road, &frame.gt_valid, h, w)
        .save(training.join("gt_image_2").join(format!("{prefix}_road_{number}.png")))?;
    fs::write(training.join("calib").join(format!("{id}.txt")), write_calib_str(calib))?;
    write_velodyne_bin(training.join("velodyne").join(format!("{id}.bin")), cloud)?;
    Ok(())
}
