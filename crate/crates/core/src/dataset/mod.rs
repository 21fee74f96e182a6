//! Road frames: KITTI ROAD loading, ground-truth decoding, train/validation
//! splitting and a synthetic scene generator that writes the same layout.

mod kitti;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lidar::LidarImage;

pub use kitti::{
    decode_gt_mask, encode_gt_mask, load_calibration, load_kitti_road, verify_full_training_counts, write_frame_kitti,
    LoadOptions, KITTI_TRAINING_COUNTS,
};
pub use split::{split_train_val, SplitSpec, DEFAULT_TRAIN_FRAMES};
pub use synth::{
    export_synthetic, synth_generate, synth_generate_scenes, synthetic_calibration, SynthConfig,
    SynthScene, CAMERA_HEIGHT, LIDAR_HEIGHT,
};

/// KITTI ROAD scene category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// urban marked
    Um,
    /// urban multiple marked lanes
    Umm,
    /// urban unmarked
    Uu,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Um, Category::Umm, Category::Uu];

    pub fn prefix(self) -> &'static str {
        match self {
            Category::Um => "um",
            Category::Umm => "umm",
            Category::Uu => "uu",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.prefix().to_uppercase())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "um" => Ok(Category::Um),
            "umm" => Ok(Category::Umm),
            "uu" => Ok(Category::Uu),
            other => Err(Error::Dataset(format!("unknown category {other:?}"))),
        }
    }
}

/// One training sample. All rasters are `height x width`; `rgb` is
/// channel-planar `[3, H, W]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadFrame {
    pub frame_id: String,
    pub category: Category,
    pub rgb: Vec<f32>,
    pub lidar: LidarImage,
    pub gt_road: Vec<bool>,
    pub gt_valid: Vec<bool>,
}

impl RoadFrame {
    pub fn height(&self) -> usize {
        self.lidar.height()
    }

    pub fn width(&self) -> usize {
        self.lidar.width()
    }

    pub fn size(&self) -> (usize, usize) {
        self.lidar.size()
    }

    /// Checks shared raster sizes and that road pixels are valid pixels.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size();
        let plane = h * w;
        if self.rgb.len() != 3 * plane || self.gt_road.len() != plane || self.gt_valid.len() != plane {
            return Err(Error::Dataset(format!(
                "{}: raster sizes disagree with {h}x{w}",
                self.frame_id
            )));
        }
        if self
            .gt_road
            .iter()
            .zip(&self.gt_valid)
            .any(|(&road, &valid)| road && !valid)
        {
            return Err(Error::Dataset(format!(
                "{}: road pixel outside the valid mask",
                self.frame_id
            )));
        }
        Ok(())
    }

    /// Per-pixel class labels (1 = road) for the loss.
    pub fn target(&self) -> Vec<u8> {
        self.gt_road.iter().map(|&r| r as u8).collect()
    }
}

/// `um_000012` style identifier.
pub fn frame_id(category: Category, index: usize) -> String {
    format!("{}_{index:06}", category.prefix())
}
