use nalgebra::{Matrix3, Vector3};

use super::{FnrMode, MetricsReport, Sweep};
use crate::error::{Error, Result};

/// Bird's-eye-view raster: `rows x cols` cells of `meters_per_cell`. Row 0
/// is the far edge; columns run left to right across `cols * meters_per_cell`
/// metres centred on the camera; the near edge lies `near` metres ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevGrid {
    pub rows: usize,
    pub cols: usize,
    pub meters_per_cell: f64,
    pub near: f64,
}

impl Default for BevGrid {
    /// 20 m wide, 6 m to 46 m ahead, 5 cm cells.
    fn default() -> Self {
        Self {
            rows: 800,
            cols: 400,
            meters_per_cell: 0.05,
            near: 6.0,
        }
    }
}

/// Homography from BEV metric coordinates `(c * m, r * m, 1)` to image
/// pixels, for a camera `camera_height` above a flat ground plane
/// (camera axes: x right, y down, z forward).
pub fn ground_homography(k: &Matrix3<f64>, camera_height: f64, grid: &BevGrid) -> Matrix3<f64> {
    let half_width = grid.cols as f64 * grid.meters_per_cell / 2.0;
    let far = grid.near + grid.rows as f64 * grid.meters_per_cell;
    // (X, Y) on the grid -> camera point (X - half_width, h, far - Y)
    let ground = Matrix3::new(1.0, 0.0, -half_width, 0.0, 0.0, camera_height, 0.0, -1.0, far);
    k * ground
}

/// Nearest-neighbour inverse warp: cell `(r, c)` maps its metric position
/// through `homography` to a pixel and copies it. Cells landing outside the
/// `height x width` raster are marked invalid and hold `fill`.
pub fn bev_warp<T: Copy>(
    raster: &[T],
    (height, width): (usize, usize),
    homography: &Matrix3<f64>,
    grid: &BevGrid,
    fill: T,
) -> Result<(Vec<T>, Vec<bool>)> {
    if raster.len() != height * width {
        return Err(Error::Evaluation(format!(
            "raster of {} values is not {height}x{width}",
            raster.len()
        )));
    }
    let det = homography.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::Evaluation(format!("singular homography (det {det:e})")));
    }
    let cells = grid.rows * grid.cols;
    let mut out = vec![fill; cells];
    let mut valid = vec![false; cells];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let p = homography * Vector3::new(c as f64 * grid.meters_per_cell, r as f64 * grid.meters_per_cell, 1.0);
            if p.z <= 0.0 {
                continue;
            }
            let (u, v) = ((p.x / p.z).floor(), (p.y / p.z).floor());
            if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
                continue;
            }
            let cell = r * grid.cols + c;
            out[cell] = raster[v as usize * width + u as usize];
            valid[cell] = true;
        }
    }
    Ok((out, valid))
}

/// Threshold sweep of one frame after warping probability and ground truth
/// into the BEV grid; cells outside the image are ignored.
pub fn bev_sweep(
    prob: &[f32],
    gt_road: &[bool],
    gt_valid: &[bool],
    size: (usize, usize),
    homography: &Matrix3<f64>,
    grid: &BevGrid,
) -> Result<Sweep> {
    let (p, inside) = bev_warp(prob, size, homography, grid, 0.0)?;
    let (road, _) = bev_warp(gt_road, size, homography, grid, false)?;
    let (valid, _) = bev_warp(gt_valid, size, homography, grid, false)?;
    let valid: Vec<bool> = valid.iter().zip(&inside).map(|(&a, &b)| a && b).collect();
    Sweep::from_frame(&p, &road, &valid)
}

pub fn evaluate_bev(
    prob: &[f32],
    gt_road: &[bool],
    gt_valid: &[bool],
    size: (usize, usize),
    homography: &Matrix3<f64>,
    grid: &BevGrid,
    mode: FnrMode,
) -> Result<MetricsReport> {
    Ok(bev_sweep(prob, gt_road, gt_valid, size, homography, grid)?.report(mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_translation() {
        let raster: Vec<u32> = (0..12).collect();
        let grid = BevGrid { rows: 3, cols: 4, meters_per_cell: 1.0, near: 0.0 };
        let (same, valid) = bev_warp(&raster, (3, 4), &Matrix3::identity(), &grid, 99).unwrap();
        assert_eq!(same, raster);
        assert!(valid.iter().all(|&v| v));

        let shift = Matrix3::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let (moved, valid) = bev_warp(&raster, (3, 4), &shift, &grid, 99).unwrap();
        assert_eq!(&moved[..4], &[1, 2, 3, 99]);
        assert!(!valid[3] && valid[2]);
    }

    #[test]
    fn singular_rejected() {
        let grid = BevGrid { rows: 1, cols: 1, meters_per_cell: 1.0, near: 0.0 };
        assert!(bev_warp(&[0u8], (1, 1), &Matrix3::zeros(), &grid, 0).is_err());
    }

    #[test]
    fn ground_homography_hits_the_ground_point() {
        let k = Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 20.0, 0.0, 0.0, 1.0);
        let grid = BevGrid { rows: 10, cols: 4, meters_per_cell: 1.0, near: 5.0 };
        let h = ground_homography(&k, 1.5, &grid);
        // bottom-centre cell: 2 m wide grid centred, 5 m ahead
        let p = h * Vector3::new(2.0, 10.0, 1.0);
        let (u, v) = (p.x / p.z, p.y / p.z);
        assert!((u - 50.0).abs() < 1e-9);
        assert!((v - (20.0 + 100.0 * 1.5 / 5.0)).abs() < 1e-9);
    }
}
