use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3};

use crate::error::{Error, Result};

const ROTATION_TOL: f64 = 1e-6;

/// Pinhole intrinsics `k` plus the rigid LiDAR-to-camera transform
/// `p_cam = r * p + t`, for an image of `image_size = (height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub image_size: (usize, usize),
}

impl CalibrationSet {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let calib = Self {
            k,
            r,
            t,
            image_size,
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.r.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Calibration(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        let gram = self.r.transpose() * self.r - Matrix3::identity();
        if gram.amax() > ROTATION_TOL {
            return Err(Error::Calibration(format!(
                "rotation is not orthonormal (max |R^T R - I| = {:e})",
                gram.amax()
            )));
        }
        let k = &self.k;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::Calibration("intrinsics are not upper-triangular".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Calibration("focal lengths must be positive".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::Calibration("empty image size".into()));
        }
        if !(k.iter().chain(self.r.iter()).chain(self.t.iter()).all(|v| v.is_finite())) {
            return Err(Error::Calibration("non-finite calibration entry".into()));
        }
        Ok(())
    }

    /// Same extrinsics with the intrinsics rescaled for an image resized to
    /// `(height, width)`.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        let sy = height as f64 / self.image_size.0 as f64;
        let sx = width as f64 / self.image_size.1 as f64;
        let scale = Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0);
        Self::new(scale * self.k, self.r, self.t, (height, width))
    }
}

fn parse_row(key: &str, values: &str, expected: usize) -> Result<Vec<f64>> {
    let nums: Vec<f64> = values
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Calibration(format!("{key}: cannot parse {tok:?}")))
        })
        .collect::<Result<_>>()?;
    if nums.len() != expected {
        return Err(Error::Calibration(format!(
            "{key}: expected {expected} values, found {}",
            nums.len()
        )));
    }
    Ok(nums)
}

/// Parses a KITTI calibration text (`P2`, `R0_rect`, `Tr_velo_to_cam`) and
/// folds it into a single intrinsics/extrinsics pair:
/// `K = P2[:, :3]`, `R = R0 * Tr_R`, `t = R0 * Tr_t + K^-1 * P2[:, 3]`.
pub fn parse_calib_str(text: &str, image_size: (usize, usize)) -> Result<CalibrationSet> {
    let mut rows: HashMap<&str, &str> = HashMap::new();
    for line in text.lines() {
        if let Some((key, values)) = line.split_once(':') {
            rows.insert(key.trim(), values);
        }
    }
    let get = |key: &str, n: usize| -> Result<Vec<f64>> {
        let values = rows
            .get(key)
            .ok_or_else(|| Error::Calibration(format!("missing key {key}")))?;
        parse_row(key, values, n)
    };
    let p2 = Matrix3x4::from_row_slice(&get("P2", 12)?);
    let r0 = Matrix3::from_row_slice(&get("R0_rect", 9)?);
    let tr = Matrix3x4::from_row_slice(&get("Tr_velo_to_cam", 12)?);

    let k: Matrix3<f64> = p2.fixed_columns::<3>(0).into();
    let k_inv = k
        .try_inverse()
        .ok_or_else(|| Error::Calibration("P2 intrinsics are singular".into()))?;
    let tr_r: Matrix3<f64> = tr.fixed_columns::<3>(0).into();
    let tr_t: Vector3<f64> = tr.column(3).into();
    let p2_offset: Vector3<f64> = p2.column(3).into();

    let r = r0 * tr_r;
    let t = r0 * tr_t + k_inv * p2_offset;
    CalibrationSet::new(k, r, t, image_size)
}

pub fn parse_calib(path: impl AsRef<Path>, image_size: (usize, usize)) -> Result<CalibrationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_calib_str(&text, image_size).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `calib` back in KITTI text form with `R0_rect = I` and
/// `P2 = [K | 0]`. Values use shortest round-trip formatting so parsing the
/// result reproduces the calibration exactly.
pub fn write_calib_str(calib: &CalibrationSet) -> String {
    let mut out = String::new();
    let row = |vals: &[f64]| {
        vals.iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let k = &calib.k;
    let p2 = [
        k[(0, 0)], k[(0, 1)], k[(0, 2)], 0.0,
        k[(1, 0)], k[(1, 1)], k[(1, 2)], 0.0,
        k[(2, 0)], k[(2, 1)], k[(2, 2)], 0.0,
    ];
    let (r, t) = (&calib.r, &calib.t);
    let tr = [
        r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
        r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
        r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
    ];
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for key in ["P0", "P1", "P2", "P3"] {
        let _ = writeln!(out, "{key}: {}", row(&p2));
    }
    let _ = writeln!(out, "R0_rect: {}", row(&eye));
    let _ = writeln!(out, "Tr_velo_to_cam: {}", row(&tr));
    out
}
