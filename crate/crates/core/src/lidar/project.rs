use nalgebra::Vector3;

use super::{CalibrationSet, LidarImage, PointCloud};

/// A LiDAR point that landed on the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    /// Camera-frame coordinates `R * p + t`.
    pub p_cam: [f64; 3],
    /// Index of the source point in the cloud.
    pub index: usize,
}

/// `p_cam = R p + t`, `(u, v) = (K p_cam) / z_cam`. Points behind the camera
/// (`z_cam <= 0`) or outside `[0, W) x [0, H)` are dropped.
pub fn project_points(cloud: &PointCloud, calib: &CalibrationSet) -> Vec<ProjectedPoint> {
    let (h, w) = calib.image_size;
    let (h, w) = (h as f64, w as f64);
    let mut out = Vec::new();
    for (index, p) in cloud.points.iter().enumerate() {
        let pl = Vector3::new(p.x as f64, p.y as f64, p.z as f64);
        let pc = calib.r * pl + calib.t;
        if pc.z <= 0.0 {
            continue;
        }
        let img = calib.k * pc;
        let u = img.x / img.z;
        let v = img.y / img.z;
        if !(0.0..w).contains(&u) || !(0.0..h).contains(&v) {
            continue;
        }
        out.push(ProjectedPoint {
            u,
            v,
            p_cam: [pc.x, pc.y, pc.z],
            index,
        });
    }
    out
}

/// Rasterizes projected points at pixel `(floor v, floor u)`. When several
/// points share a pixel the one with the smallest camera depth wins (the
/// earlier point on exact ties).
pub fn rasterize_lidar_image(projected: &[ProjectedPoint], image_size: (usize, usize)) -> LidarImage {
    rasterize_with_sources(projected, image_size).0
}

/// As [`rasterize_lidar_image`], also returning for every pixel the index of
/// the winning source point.
pub fn rasterize_with_sources(
    projected: &[ProjectedPoint],
    image_size: (usize, usize),
) -> (LidarImage, Vec<Option<usize>>) {
    let (h, w) = image_size;
    let mut winner: Vec<Option<usize>> = vec![None; h * w];
    for (i, p) in projected.iter().enumerate() {
        let (row, col) = (p.v.floor(), p.u.floor());
        if row < 0.0 || col < 0.0 || row >= h as f64 || col >= w as f64 {
            continue;
        }
        let pix = row as usize * w + col as usize;
        match winner[pix] {
            Some(j) if projected[j].p_cam[2] <= p.p_cam[2] => {}
            _ => winner[pix] = Some(i),
        }
    }
    let mut image = LidarImage::zeros(h, w);
    let mut sources = vec![None; h * w];
    for (pix, win) in winner.iter().enumerate() {
        if let Some(i) = *win {
            let p = &projected[i];
            image.set(pix / w, pix % w, [p.p_cam[0] as f32, p.p_cam[1] as f32, p.p_cam[2] as f32]);
            sources[pix] = Some(p.index);
        }
    }
    (image, sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::LidarPoint;
    use nalgebra::Matrix3;

    fn calib() -> CalibrationSet {
        CalibrationSet::new(
            Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 25.0, 0.0, 0.0, 1.0),
            Matrix3::identity(),
            Vector3::zeros(),
            (60, 200),
        )
        .unwrap()
    }

    fn pt(x: f32, y: f32, z: f32) -> LidarPoint {
        LidarPoint { x, y, z, reflectance: 0.0 }
    }

    #[test]
    fn analytic_perspective_division() {
        let out = project_points(&PointCloud::new(vec![pt(1.0, 0.5, 2.0)]), &calib());
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].u, out[0].v), (100.0, 50.0));
    }

    #[test]
    fn behind_camera_and_out_of_bounds_discarded() {
        let cloud = PointCloud::new(vec![pt(0.0, 0.0, -1.0), pt(0.0, 0.0, 0.0), pt(100.0, 0.0, 1.0)]);
        assert!(project_points(&cloud, &calib()).is_empty());
    }

    #[test]
    fn nearest_point_wins_a_pixel() {
        let cloud = PointCloud::new(vec![pt(0.5, 0.25, 5.0), pt(0.3, 0.15, 3.0)]);
        let proj = project_points(&cloud, &calib());
        // both land on u = 60, v = 30
        assert_eq!(proj.len(), 2);
        let img = rasterize_lidar_image(&proj, (60, 200));
        assert_eq!(img.get(30, 60), [0.3, 0.15, 3.0]);
        assert_eq!(img.occupied(), 1);
    }

    #[test]
    fn empty_input_gives_zero_image() {
        let img = rasterize_lidar_image(&[], (4, 5));
        assert_eq!(img.occupied(), 0);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }
}
