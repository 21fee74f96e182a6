use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const OVERLAY_TP: [u8; 3] = [0, 255, 0];
pub const OVERLAY_FP: [u8; 3] = [0, 0, 255];
pub const OVERLAY_FN: [u8; 3] = [255, 0, 0];

/// RGB (planar `[3, H, W]`, values in `[0, 1]`) with true positives tinted
/// green, false positives blue and false negatives red at 50%. True
/// negatives and invalid pixels keep their colour.
pub fn render_overlay(
    rgb: &[f32],
    prob: &[f32],
    gt_road: &[bool],
    gt_valid: &[bool],
    tau: f32,
    (height, width): (usize, usize),
) -> Result<RgbImage> {
    let plane = height * width;
    if rgb.len() != 3 * plane || prob.len() != plane || gt_road.len() != plane || gt_valid.len() != plane {
        return Err(Error::Evaluation(format!("overlay inputs do not match {height}x{width}")));
    }
    Ok(RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        let base = [0, 1, 2].map(|c| (rgb[c * plane + i].clamp(0.0, 1.0) * 255.0).round());
        let tint = match (gt_valid[i], prob[i] >= tau, gt_road[i]) {
            (false, _, _) | (true, false, false) => None,
            (true, true, true) => Some(OVERLAY_TP),
            (true, true, false) => Some(OVERLAY_FP),
            (true, false, true) => Some(OVERLAY_FN),
        };
        Rgb(match tint {
            None => base.map(|v| v as u8),
            Some(t) => [0, 1, 2].map(|c| ((base[c] + t[c] as f32) / 2.0).round() as u8),
        })
    }))
}
