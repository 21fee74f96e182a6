//! Fusion networks: early fusion, late fusion and the Siamese FCN, all with
//! an FCN-8s style decoder.
//!
//! The forward pass is written once against a small backend trait and run
//! either on an autodiff [`Tape`](crate::tensor::Tape) or on a shape-only
//! tracer that produces the architecture manifest.

mod arch;
mod graph;
mod params;
mod trace;

use std::fmt;
use std::str::FromStr;

use crate::dataset::RoadFrame;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use arch::{architecture, convs_in_group, LayerKind, LayerSpec, ParamInit, GROUPS};
pub use graph::{model_forward, Graph, ParamGrads, SiamGroupOutput};
pub use params::{build_model, Layer, ModelParams};
pub use trace::{render_manifest, trace_architecture, TraceRow};

/// Channel widths of the five encoder groups at full width.
pub const BASE_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];
/// Smallest accepted input side; five ceil-mode poolings still leave a pixel.
pub const MIN_INPUT_SIDE: usize = 32;
/// Metres to network units for the LiDAR image channels.
pub const LIDAR_SCALE: f32 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    Early,
    Late,
    Siamese,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [FusionStrategy::Early, FusionStrategy::Late, FusionStrategy::Siamese];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Early => "early",
            FusionStrategy::Late => "late",
            FusionStrategy::Siamese => "siamese",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "early" => Ok(FusionStrategy::Early),
            "late" => Ok(FusionStrategy::Late),
            "siamese" | "siam" => Ok(FusionStrategy::Siamese),
            other => Err(Error::Config(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

/// Named model/training scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Full width at 375x1242.
    Paper,
    /// Channels / 8, head 256, 96x312: trainable on a CPU.
    Tiny,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Tiny => "tiny",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub strategy: FusionStrategy,
    /// `(height, width)` of the input and of the logits.
    pub input_size: (usize, usize),
    /// Every encoder channel count is divided by this.
    pub width_scale: usize,
    pub head_width: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl NetConfig {
    pub fn paper(strategy: FusionStrategy) -> Self {
        Self {
            strategy,
            input_size: (375, 1242),
            width_scale: 1,
            head_width: 4096,
            num_classes: 2,
            seed: 0,
        }
    }

    pub fn tiny(strategy: FusionStrategy) -> Self {
        Self {
            strategy,
            input_size: (96, 312),
            width_scale: 8,
            head_width: 256,
            num_classes: 2,
            seed: 0,
        }
    }

    pub fn preset(preset: Preset, strategy: FusionStrategy) -> Self {
        match preset {
            Preset::Paper => Self::paper(strategy),
            Preset::Tiny => Self::tiny(strategy),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Output channels of encoder group `group` (1-based).
    pub fn channels(&self, group: usize) -> usize {
        BASE_CHANNELS[group - 1] / self.width_scale.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
            return Err(Error::Config(format!(
                "input {h}x{w} is smaller than {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"
            )));
        }
        if self.width_scale == 0 || (1..=GROUPS).any(|g| self.channels(g) == 0) {
            return Err(Error::Config(format!(
                "width_scale {} leaves an encoder group without channels",
                self.width_scale
            )));
        }
        if self.head_width == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!(
                "head_width {} / num_classes {} must be positive / at least 2",
                self.head_width, self.num_classes
            )));
        }
        Ok(())
    }
}

/// Network inputs for one frame: RGB centred on zero and the LiDAR image in
/// scaled metres, both `[1, 3, H, W]`.
pub fn frame_inputs(frame: &RoadFrame) -> (Tensor<f32>, Tensor<f32>) {
    let (h, w) = frame.size();
    let rgb = frame.rgb.iter().map(|v| v - 0.5).collect();
    let lidar = frame.lidar.data().iter().map(|v| v * LIDAR_SCALE).collect();
    (
        Tensor::new(&[1, 3, h, w], rgb).expect("rgb raster matches frame size"),
        Tensor::new(&[1, 3, h, w], lidar).expect("lidar raster matches frame size"),
    )
}
