use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const LIMG_MAGIC: &[u8; 4] = b"LIMG";

/// Sparse LiDAR image: three planes (camera-frame x, y, z) of `height x width`
/// values. A pixel without a LiDAR hit holds the zero triple.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl LidarImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
            mask: vec![false; height * width],
        }
    }

    /// Builds an image from channel-planar data; the occupancy mask is
    /// derived from non-zero triples.
    pub fn from_planes(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::shape(format!(
                "LiDAR image {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        let plane = height * width;
        let mask = (0..plane)
            .map(|i| data[i] != 0.0 || data[plane + i] != 0.0 || data[2 * plane + i] != 0.0)
            .collect();
        Ok(Self {
            height,
            width,
            data,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Channel-planar values `[3, H, W]`.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let plane = self.height * self.width;
        let i = row * self.width + col;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, xyz: [f32; 3]) {
        let plane = self.height * self.width;
        let i = row * self.width + col;
        self.data[i] = xyz[0];
        self.data[plane + i] = xyz[1];
        self.data[2 * plane + i] = xyz[2];
        self.mask[i] = xyz != [0.0; 3];
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn occupancy(&self) -> f64 {
        self.occupied() as f64 / (self.height * self.width).max(1) as f64
    }
}

/// `"LIMG" | height: u32 | width: u32 | channels: u32 (=3) | f32 LE planes`.
pub fn encode_limg(image: &LidarImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * image.data.len());
    out.extend_from_slice(LIMG_MAGIC);
    out.extend_from_slice(&(image.height as u32).to_le_bytes());
    out.extend_from_slice(&(image.width as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for v in &image.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_limg(bytes: &[u8]) -> Result<LidarImage> {
    if bytes.len() < 16 || &bytes[..4] != LIMG_MAGIC {
        return Err(Error::Dataset("not a LIMG file (bad magic or short header)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (height, width, channels) = (word(4), word(8), word(12));
    if channels != 3 {
        return Err(Error::Dataset(format!("LIMG with {channels} channels, expected 3")));
    }
    let expected = 16 + 4 * 3 * height * width;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "LIMG {height}x{width} should be {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LidarImage::from_planes(height, width, data)
}

pub fn write_limg(path: impl AsRef<Path>, image: &LidarImage) -> Result<()> {
    fs::write(path, encode_limg(image))?;
    Ok(())
}

pub fn read_limg(path: impl AsRef<Path>) -> Result<LidarImage> {
    let path = path.as_ref();
    decode_limg(&fs::read(path)?).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limg_roundtrip_and_header() {
        let mut img = LidarImage::zeros(3, 4);
        img.set(1, 2, [1.5, -0.25, 7.0]);
        img.set(2, 3, [f32::MIN_POSITIVE, 0.0, 1e-20]);
        let bytes = encode_limg(&img);
        assert_eq!(&bytes[..4], b"LIMG");
        assert_eq!(bytes.len(), 16 + 3 * 12 * 4);
        let back = decode_limg(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.occupied(), 2);
    }

    #[test]
    fn limg_rejects_garbage() {
        assert!(decode_limg(b"LIMG").is_err());
        let mut bytes = encode_limg(&LidarImage::zeros(2, 2));
        bytes.pop();
        assert!(decode_limg(&bytes).is_err());
        bytes.push(0);
        bytes[0] = b'X';
        assert!(decode_limg(&bytes).is_err());
    }
}
