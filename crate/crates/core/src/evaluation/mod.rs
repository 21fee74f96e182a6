//! Pixel metrics for binary road segmentation: confusion counts, threshold
//! sweeps (MaxF, AP), bird's-eye-view warping and overlay rendering.

mod bev;
mod overlay;
mod report;

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::RoadFrame;
use crate::error::{Error, Result};
use crate::network::{frame_inputs, model_forward, ModelParams};

pub use bev::{bev_sweep, bev_warp, evaluate_bev, ground_homography, BevGrid};
pub use overlay::{render_overlay, OVERLAY_FN, OVERLAY_FP, OVERLAY_TP};
pub use report::{metrics_csv, metrics_table, Column, TABLE_BENCHMARK, TABLE_FUSION};

/// Number of sweep thresholds; threshold `i` is `i / 255`.
pub const SWEEP_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Which false-negative rate to report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum FnrMode {
    /// `FN / (FN + FP)`, the formula as printed.
    #[default]
    Paper,
    /// `FN / (FN + TP)`, i.e. `1 - recall`.
    Standard,
}

impl fmt::Display for FnrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FnrMode::Paper => "paper",
            FnrMode::Standard => "standard",
        })
    }
}

impl FromStr for FnrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(FnrMode::Paper),
            "standard" => Ok(FnrMode::Standard),
            other => Err(Error::Config(format!("unknown FNR mode {other:?}"))),
        }
    }
}

/// Ratios at a single threshold; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThresholdMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ConfusionCounts, mode: FnrMode) -> ThresholdMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ThresholdMetrics {
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, c.total()),
        fpr: ratio(c.fp, c.tn + c.fp),
        fnr: match mode {
            FnrMode::Paper => ratio(c.fn_, c.fn_ + c.fp),
            FnrMode::Standard => ratio(c.fn_, c.fn_ + c.tp),
        },
    }
}

fn check_lengths(prob: &[f32], gt_road: &[bool], gt_valid: &[bool]) -> Result<()> {
    if prob.len() != gt_road.len() || prob.len() != gt_valid.len() {
        return Err(Error::Evaluation(format!(
            "raster sizes differ: prob {}, gt_road {}, gt_valid {}",
            prob.len(),
            gt_road.len(),
            gt_valid.len()
        )));
    }
    Ok(())
}

/// Counts over valid pixels with `prediction = prob >= tau`.
pub fn confusion_at_threshold(prob: &[f32], gt_road: &[bool], gt_valid: &[bool], tau: f32) -> Result<ConfusionCounts> {
    check_lengths(prob, gt_road, gt_valid)?;
    let mut c = ConfusionCounts::default();
    for ((&p, &road), _) in prob.iter().zip(gt_road).zip(gt_valid).filter(|(_, &v)| v) {
        match (p >= tau, road) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Threshold `i` of the sweep as the same `f32` a per-threshold loop uses.
pub fn sweep_threshold(i: usize) -> f32 {
    i as f32 / 255.0
}

/// Confusion counts at all [`SWEEP_STEPS`] thresholds. Sweeps of several
/// frames combine with [`Sweep::merge`] before reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub counts: Vec<ConfusionCounts>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self { counts: vec![ConfusionCounts::default(); SWEEP_STEPS] }
    }
}

impl Sweep {
    /// One pass over the pixels: each pixel is predicted road at exactly the
    /// thresholds `0..k` where `k` counts thresholds not above its probability.
    pub fn from_frame(prob: &[f32], gt_road: &[bool], gt_valid: &[bool]) -> Result<Self> {
        check_lengths(prob, gt_road, gt_valid)?;
        let thresholds: Vec<f32> = (0..SWEEP_STEPS).map(sweep_threshold).collect();
        // road[k] / other[k]: pixels predicted road at exactly k thresholds
        let mut road = vec![0u64; SWEEP_STEPS + 1];
        let mut other = vec![0u64; SWEEP_STEPS + 1];
        for ((&p, &r), _) in prob.iter().zip(gt_road).zip(gt_valid).filter(|(_, &v)| v) {
            let k = thresholds.partition_point(|&t| p >= t);
            if r {
                road[k] += 1;
            } else {
                other[k] += 1;
            }
        }
        let (total_road, total_other): (u64, u64) = (road.iter().sum(), other.iter().sum());
        let mut counts = Vec::with_capacity(SWEEP_STEPS);
        // predicted road at threshold i  <=>  k > i
        let (mut road_below, mut other_below) = (0u64, 0u64);
        for i in 0..SWEEP_STEPS {
            road_below += road[i];
            other_below += other[i];
            counts.push(ConfusionCounts::new(
                total_road - road_below,
                total_other - other_below,
                road_below,
                other_below,
            ));
        }
        Ok(Self { counts })
    }

    pub fn merge(&mut self, other: &Sweep) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
    }

    pub fn report(&self, mode: FnrMode) -> MetricsReport {
        sweep_report(&self.counts, mode)
    }
}

/// Summary over a threshold sweep. All ratios are taken at the threshold
/// maximizing F; every field is `None` when no valid road pixel exists.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub max_f: Option<f64>,
    pub ap: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub accuracy: Option<f64>,
    pub threshold: Option<f64>,
}

/// Area under the precision/recall points of a sweep. Precision is replaced
/// by its upper envelope (best precision at recall >= r), the curve is
/// extended flat to recall 0, and the area is integrated with trapezoids.
pub fn average_precision(counts: &[ConfusionCounts]) -> Option<f64> {
    let mut points: Vec<(f64, f64)> = counts
        .iter()
        .filter_map(|c| {
            let m = compute_metrics(c, FnrMode::Standard);
            Some((m.recall?, m.precision?))
        })
        .collect();
    if points.is_empty() {
        return None;
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &(r, p) in &points {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    Some(area.clamp(0.0, 1.0))
}

fn sweep_report(counts: &[ConfusionCounts], mode: FnrMode) -> MetricsReport {
    let has_road = counts.first().is_some_and(|c| c.tp + c.fn_ > 0);
    if !has_road {
        return MetricsReport::default();
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in counts.iter().enumerate() {
        if let Some(f) = compute_metrics(c, mode).f1 {
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((i, f));
            }
        }
    }
    let ap = average_precision(counts);
    match best {
        None => MetricsReport { ap, ..Default::default() },
        Some((i, f)) => {
            let m = compute_metrics(&counts[i], mode);
            MetricsReport {
                max_f: Some(f),
                ap,
                precision: m.precision,
                recall: m.recall,
                fpr: m.fpr,
                fnr: m.fnr,
                accuracy: m.accuracy,
                threshold: Some(sweep_threshold(i) as f64),
            }
        }
    }
}

/// MaxF, AP and the remaining ratios at the MaxF threshold for one raster.
pub fn max_f_and_ap_sweep(prob: &[f32], gt_road: &[bool], gt_valid: &[bool], mode: FnrMode) -> Result<MetricsReport> {
    Ok(Sweep::from_frame(prob, gt_road, gt_valid)?.report(mode))
}

/// Road probability from 2-class logits `[1, 2, H, W]`: `softmax(...)[1]`.
pub fn road_probability(logits: &[f32], plane: usize) -> Result<Vec<f32>> {
    if logits.len() != 2 * plane {
        return Err(Error::Evaluation(format!(
            "expected 2 x {plane} logits, got {}",
            logits.len()
        )));
    }
    let (bg, road) = logits.split_at(plane);
    Ok(bg
        .iter()
        .zip(road)
        .map(|(&b, &r)| 1.0 / (1.0 + (b - r).exp()))
        .collect())
}

/// Road probability map of `frame` under `model`.
pub fn predict_road(model: &ModelParams<f32>, frame: &RoadFrame) -> Result<Vec<f32>> {
    let (rgb, lidar) = frame_inputs(frame);
    let logits = model_forward(model, &rgb, &lidar)?;
    road_probability(logits.data(), frame.height() * frame.width())
}

/// Pooled sweep over frames (predicted in parallel; the reduction is exact
/// integer addition, so the result does not depend on scheduling).
pub fn evaluate_frames(model: &ModelParams<f32>, frames: &[RoadFrame]) -> Result<Sweep> {
    let sweeps = frames
        .par_iter()
        .map(|f| Sweep::from_frame(&predict_road(model, f)?, &f.gt_road, &f.gt_valid))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Sweep::default();
    for s in &sweeps {
        total.merge(s);
    }
    Ok(total)
}

/// Fraction of valid pixels classified correctly at threshold 0.5.
pub fn pixel_accuracy(model: &ModelParams<f32>, frames: &[RoadFrame]) -> Result<f64> {
    let mut total = ConfusionCounts::default();
    for f in frames {
        total += confusion_at_threshold(&predict_road(model, f)?, &f.gt_road, &f.gt_valid, 0.5)?;
    }
    ratio(total.tp + total.tn, total.total())
        .ok_or_else(|| Error::Evaluation("no valid pixels to score".into()))
}
