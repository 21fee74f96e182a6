//! LiDAR sweeps, camera calibration, projection onto the image plane and
//! sparse 3-channel LiDAR image rasterization.

mod calib;
mod raster;
mod project;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use calib::{parse_calib, parse_calib_str, write_calib_str, CalibrationSet};
pub use raster::{decode_limg, encode_limg, read_limg, write_limg, LidarImage, LIMG_MAGIC};
pub use project::{project_points, rasterize_lidar_image, rasterize_with_sources, ProjectedPoint};

/// One LiDAR return in the sensor frame (meters), reflectance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub reflectance: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Velodyne `.bin` layout: consecutive little-endian `f32` quadruples.
    pub fn to_velodyne_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.reflectance] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

pub fn decode_velodyne(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Dataset(format!(
            "velodyne data of {} bytes is not a whole number of 16-byte records",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = LidarPoint {
            x: f(0),
            y: f(1),
            z: f(2),
            reflectance: f(3),
        };
        if ![p.x, p.y, p.z, p.reflectance].iter().all(|v| v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite value in point {i}")));
        }
        points.push(p);
    }
    Ok(PointCloud { points })
}

pub fn load_velodyne_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_velodyne(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_velodyne_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, cloud.to_velodyne_bytes())?;
    Ok(())
}
