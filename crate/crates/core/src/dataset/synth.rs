//! Procedural road scenes. Geometry lives in the camera frame (x right,
//! y down, z forward) with a flat ground plane at `y = CAMERA_HEIGHT`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::kitti::{write_frame_kitti, KITTI_TRAINING_COUNTS};
use super::split::largest_remainder;
use super::{frame_id, Category, RoadFrame};
use crate::error::{Error, Result};
use crate::lidar::{project_points, rasterize_with_sources, CalibrationSet, LidarPoint, PointCloud};

/// Camera height above the ground plane (m).
pub const CAMERA_HEIGHT: f64 = 1.65;
/// LiDAR height above the ground plane (m).
pub const LIDAR_HEIGHT: f64 = 1.73;

const LIDAR_OFFSET: [f64; 3] = [0.0, CAMERA_HEIGHT - LIDAR_HEIGHT, -0.27];
const LIDAR_ROWS: usize = 64;
const ELEVATION_TOP_DEG: f64 = 2.0;
const ELEVATION_BOTTOM_DEG: f64 = -24.8;
const LIDAR_MAX_RANGE: f64 = 80.0;
const HAZE_DISTANCE: f64 = 150.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_frames: usize,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub seed: u64,
    /// Horizontal LiDAR resolution; 0.2 deg gives 1800 columns per sweep.
    pub azimuth_step_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_frames: 50,
            image_size: (96, 312),
            seed: 0,
            azimuth_step_deg: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn new(n_frames: usize, image_size: (usize, usize), seed: u64) -> Self {
        Self { n_frames, image_size, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if self.n_frames == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "synthetic config needs frames and a non-empty image, got {} frames of {h}x{w}",
                self.n_frames
            )));
        }
        if !(self.azimuth_step_deg > 0.0 && self.azimuth_step_deg <= 360.0) {
            return Err(Error::Config(format!(
                "azimuth step {} deg is out of range",
                self.azimuth_step_deg
            )));
        }
        Ok(())
    }
}

/// A generated frame together with the raw sweep and calibration that
/// produced its LiDAR image.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub frame: RoadFrame,
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    /// Per pixel: the rasterized LiDAR point is a ground-plane return.
    pub ground_hits: Vec<bool>,
}

/// `K = [[f, 0, W/2], [0, f, H/2], [0, 0, 1]]` with `f = 0.8 W`, and a
/// Velodyne-style mount 8 cm above and 27 cm behind the camera.
pub fn synthetic_calibration(height: usize, width: usize) -> CalibrationSet {
    let f = 0.8 * width as f64;
    let k = Matrix3::new(f, 0.0, width as f64 / 2.0, 0.0, f, height as f64 / 2.0, 0.0, 0.0, 1.0);
    let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let t = Vector3::from(LIDAR_OFFSET);
    CalibrationSet::new(k, r, t, (height, width)).expect("synthetic calibration is valid")
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
    color: [f64; 3],
}

impl Aabb {
    /// Slab test; returns the entry distance along `d` from `o`.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut near, mut far) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }

    fn normal_at(&self, p: &Vector3<f64>) -> usize {
        (0..3)
            .min_by(|&a, &b| {
                let da = (p[a] - self.min[a]).abs().min((p[a] - self.max[a]).abs());
                let db = (p[b] - self.min[b]).abs().min((p[b] - self.max[b]).abs());
                da.total_cmp(&db)
            })
            .unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Road,
    Marking,
    OffRoad,
}

#[derive(Debug, Clone, Copy)]
enum Hit {
    Ground(f64),
    Object(usize, f64),
}

impl Hit {
    fn distance(self) -> f64 {
        match self {
            Hit::Ground(s) | Hit::Object(_, s) => s,
        }
    }
}

struct Scene {
    category: Category,
    // corridor centre x(z) = a + b z + c z^2
    a: f64,
    b: f64,
    c: f64,
    half_width: f64,
    road_tint: [f64; 3],
    grass_tint: [f64; 3],
    boxes: Vec<Aabb>,
    // ellipses (x, z, rx, rz) darkening the ground
    shadows: Vec<[f64; 4]>,
    texture_seed: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(seed: u64, ix: i64, iz: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iz as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise in `[0, 1)` on a `cell`-metre lattice.
fn value_noise(seed: u64, x: f64, z: f64, cell: f64) -> f64 {
    let (gx, gz) = (x / cell, z / cell);
    let (ix, iz) = (gx.floor(), gz.floor());
    let (fx, fz) = (gx - ix, gz - iz);
    let (ix, iz) = (ix as i64, iz as i64);
    let top = lattice(seed, ix, iz) * (1.0 - fx) + lattice(seed, ix + 1, iz) * fx;
    let bottom = lattice(seed, ix, iz + 1) * (1.0 - fx) + lattice(seed, ix + 1, iz + 1) * fx;
    top * (1.0 - fz) + bottom * fz
}

impl Scene {
    fn random(category: Category, rng: &mut ChaCha8Rng) -> Self {
        let a = rng.random_range(-1.5..1.5);
        let b = rng.random_range(-0.06..0.06);
        let c = rng.random_range(-0.0015..0.0015);
        let half_width = rng.random_range(2.5..4.5);
        let gray = rng.random_range(0.33..0.5);
        let road_tint = [gray, gray + rng.random_range(-0.02..0.02), gray + rng.random_range(0.0..0.04)];
        let grass_tint = [
            rng.random_range(0.18..0.32),
            rng.random_range(0.4..0.55),
            rng.random_range(0.12..0.25),
        ];
        let mut scene = Self {
            category,
            a,
            b,
            c,
            half_width,
            road_tint,
            grass_tint,
            boxes: Vec::new(),
            shadows: Vec::new(),
            texture_seed: rng.random(),
        };
        for _ in 0..rng.random_range(2..7) {
            let z = rng.random_range(7.0..45.0);
            // half of the obstacles sit on the road, the rest beside it
            let x = if rng.random_bool(0.5) {
                scene.centre(z) + rng.random_range(-0.6..0.6) * half_width
            } else {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                scene.centre(z) + side * (half_width + rng.random_range(1.5..6.0))
            };
            let (sx, sy, sz) = (
                rng.random_range(0.8..1.2),
                rng.random_range(1.2..2.4),
                rng.random_range(1.0..2.5),
            );
            let color = [rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95)];
            scene.boxes.push(Aabb {
                min: Vector3::new(x - sx, CAMERA_HEIGHT - sy, z - sz),
                max: Vector3::new(x + sx, CAMERA_HEIGHT, z + sz),
                color,
            });
        }
        for _ in 0..rng.random_range(0..5) {
            let z = rng.random_range(6.0..40.0);
            let x = scene.centre(z) + rng.random_range(-1.5..1.5) * half_width;
            scene.shadows.push([x, z, rng.random_range(0.8..3.0), rng.random_range(1.0..5.0)]);
        }
        scene
    }

    fn centre(&self, z: f64) -> f64 {
        self.a + self.b * z + self.c * z * z
    }

    fn surface(&self, x: f64, z: f64) -> Surface {
        let lateral = x - self.centre(z);
        if lateral.abs() > self.half_width {
            return Surface::OffRoad;
        }
        let dashed = z.rem_euclid(6.0) < 3.0;
        let line = |offset: f64| (lateral - offset).abs() < 0.08;
        let edge = self.half_width - 0.25;
        let marked = match self.category {
            Category::Um => (line(0.0) && dashed) || line(edge) || line(-edge),
            Category::Umm => {
                let third = self.half_width / 3.0;
                ((line(third) || line(-third)) && dashed) || line(edge) || line(-edge)
            }
            Category::Uu => false,
        };
        if marked {
            Surface::Marking
        } else {
            Surface::Road
        }
    }

    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best = (d.y > 1e-12)
            .then(|| (CAMERA_HEIGHT - o.y) / d.y)
            .filter(|&s| s > 0.0)
            .map(Hit::Ground);
        for (i, bx) in self.boxes.iter().enumerate() {
            if let Some(s) = bx.hit(o, d) {
                if best.is_none_or(|h| s < h.distance()) {
                    best = Some(Hit::Object(i, s));
                }
            }
        }
        best
    }

    fn shade_ground(&self, x: f64, z: f64, surface: Surface) -> [f64; 3] {
        let fine = value_noise(self.texture_seed, x, z, 0.35) - 0.5;
        let coarse = value_noise(self.texture_seed ^ 0x5151, x, z, 3.0) - 0.5;
        let mut rgb = match surface {
            Surface::Road => self.road_tint.map(|v| v + 0.10 * fine + 0.08 * coarse),
            Surface::Marking => [0.92, 0.92, 0.88].map(|v| v + 0.05 * fine),
            Surface::OffRoad => {
                let g = self.grass_tint;
                [g[0] + 0.12 * fine, g[1] + 0.15 * fine + 0.1 * coarse, g[2] + 0.08 * fine]
            }
        };
        for s in &self.shadows {
            let (dx, dz) = ((x - s[0]) / s[2], (z - s[1]) / s[3]);
            if dx * dx + dz * dz < 1.0 {
                rgb = rgb.map(|v| v * 0.55);
                break;
            }
        }
        rgb
    }

    fn reflectance(&self, hit: Hit, p: &Vector3<f64>) -> f32 {
        match hit {
            Hit::Object(..) => 0.5,
            Hit::Ground(_) => match self.surface(p.x, p.z) {
                Surface::Road => 0.15,
                Surface::Marking => 0.85,
                Surface::OffRoad => 0.4,
            },
        }
    }
}

fn sky(v_norm: f64) -> [f64; 3] {
    let t = v_norm.clamp(0.0, 1.0);
    [0.45 + 0.35 * t, 0.62 + 0.23 * t, 0.88 + 0.04 * t]
}

fn render(
    scene: &Scene,
    calib: &CalibrationSet,
    rng: &mut ChaCha8Rng,
) -> (Vec<f32>, Vec<bool>) {
    let (h, w) = calib.image_size;
    let plane = h * w;
    let k_inv = calib.k.try_inverse().expect("intrinsics are invertible");
    let horizon = calib.k[(1, 2)];
    let noise = Normal::new(0.0, 0.02).unwrap();
    let origin = Vector3::zeros();
    let mut rgb = vec![0.0f32; 3 * plane];
    let mut road = vec![false; plane];
    for row in 0..h {
        for col in 0..w {
            let d = k_inv * Vector3::new(col as f64 + 0.5, row as f64 + 0.5, 1.0);
            let hit = scene.cast(&origin, &d);
            let mut color = match hit {
                None => sky((row as f64 + 0.5) / horizon.max(1.0)),
                Some(Hit::Ground(s)) => {
                    let p = d * s;
                    let surface = scene.surface(p.x, p.z);
                    road[row * w + col] = surface != Surface::OffRoad;
                    scene.shade_ground(p.x, p.z, surface)
                }
                Some(Hit::Object(i, s)) => {
                    let bx = &scene.boxes[i];
                    let light = [0.8, 0.6, 1.0][bx.normal_at(&(d * s))];
                    bx.color.map(|v| v * light)
                }
            };
            if let Some(hit) = hit {
                let depth = (d * hit.distance()).z;
                let haze = 1.0 - (-depth / HAZE_DISTANCE).exp();
                let far = sky(1.0);
                for c in 0..3 {
                    color[c] += (far[c] - color[c]) * haze;
                }
            }
            for (c, value) in color.iter().enumerate() {
                let v = (value + noise.sample(rng)).clamp(0.0, 1.0);
                // 8-bit quantization so PNG export round-trips exactly
                rgb[c * plane + row * w + col] = (v * 255.0).round() as f32 / 255.0;
            }
        }
    }
    (rgb, road)
}

fn sweep(scene: &Scene, calib: &CalibrationSet, azimuth_step_deg: f64) -> (PointCloud, Vec<bool>) {
    let r = calib.r;
    let r_t = r.transpose();
    let origin = calib.t;
    let columns = (360.0 / azimuth_step_deg).round() as usize;
    let mut points = Vec::new();
    let mut ground = Vec::new();
    for ring in 0..LIDAR_ROWS {
        let el = (ELEVATION_TOP_DEG
            + (ELEVATION_BOTTOM_DEG - ELEVATION_TOP_DEG) * ring as f64 / (LIDAR_ROWS - 1) as f64)
            .to_radians();
        for col in 0..columns {
            let az = (col as f64 * azimuth_step_deg).to_radians();
            let dir_lidar = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let d = r * dir_lidar;
            let Some(hit) = scene.cast(&origin, &d) else {
                continue;
            };
            if hit.distance() > LIDAR_MAX_RANGE {
                continue;
            }
            let p_cam = origin + d * hit.distance();
            let p = r_t * (p_cam - origin);
            points.push(LidarPoint {
                x: p.x as f32,
                y: p.y as f32,
                z: p.z as f32,
                reflectance: scene.reflectance(hit, &p_cam),
            });
            ground.push(matches!(hit, Hit::Ground(_)));
        }
    }
    (PointCloud::new(points), ground)
}

/// Category of every frame: proportional to the KITTI training split,
/// in contiguous UM, UMM, UU blocks.
fn categories(n: usize) -> Vec<Category> {
    let (_, um, umm, uu) = KITTI_TRAINING_COUNTS;
    largest_remainder(n, &[um, umm, uu])
        .into_iter()
        .zip(Category::ALL)
        .flat_map(|(count, cat)| std::iter::repeat_n(cat, count))
        .collect()
}

fn generate_one(config: &SynthConfig, index: usize, category: Category, cat_index: usize) -> SynthScene {
    let (h, w) = config.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let scene = Scene::random(category, &mut rng);
    let calib = synthetic_calibration(h, w);
    let (rgb, gt_road) = render(&scene, &calib, &mut rng);
    let (cloud, ground) = sweep(&scene, &calib, config.azimuth_step_deg);
    let (lidar, sources) = rasterize_with_sources(&project_points(&cloud, &calib), (h, w));
    let ground_hits = sources.iter().map(|s| s.is_some_and(|i| ground[i])).collect();
    SynthScene {
        frame: RoadFrame {
            frame_id: frame_id(category, cat_index),
            category,
            rgb,
            lidar,
            gt_road,
            gt_valid: vec![true; h * w],
        },
        cloud,
        calib,
        ground_hits,
    }
}

/// Generates scenes with their raw sweeps. Frame `i` depends only on
/// `(seed, i)`, so frames are produced in parallel.
pub fn synth_generate_scenes(config: &SynthConfig) -> Result<Vec<SynthScene>> {
    config.validate()?;
    let cats = categories(config.n_frames);
    let jobs: Vec<(usize, Category, usize)> = cats
        .iter()
        .enumerate()
        .map(|(i, &cat)| (i, cat, cats[..i].iter().filter(|&&c| c == cat).count()))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(i, cat, ci)| generate_one(config, i, cat, ci))
        .collect())
}

pub fn synth_generate(config: &SynthConfig) -> Result<Vec<RoadFrame>> {
    Ok(synth_generate_scenes(config)?.into_iter().map(|s| s.frame).collect())
}

/// Generates and writes a dataset in KITTI layout; returns the frame ids.
pub fn export_synthetic(root: impl AsRef<Path>, config: &SynthConfig) -> Result<Vec<String>> {
    let root = root.as_ref();
    let scenes = synth_generate_scenes(config)?;
    scenes
        .par_iter()
        .try_for_each(|s| write_frame_kitti(root, &s.frame, &s.cloud, &s.calib))?;
    Ok(scenes.into_iter().map(|s| s.frame.frame_id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_blocks_follow_kitti_proportions() {
        let c = categories(289);
        assert_eq!(c.iter().filter(|&&c| c == Category::Um).count(), 95);
        assert_eq!(c.iter().filter(|&&c| c == Category::Uu).count(), 98);
        assert!(c.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn box_slab_test() {
        let b = Aabb { min: Vector3::new(-1.0, -1.0, 4.0), max: Vector3::new(1.0, 1.0, 6.0), color: [0.0; 3] };
        let o = Vector3::zeros();
        assert_eq!(b.hit(&o, &Vector3::new(0.0, 0.0, 1.0)), Some(4.0));
        assert_eq!(b.hit(&o, &Vector3::new(1.0, 0.0, 0.0)), None);
        assert_eq!(b.hit(&o, &Vector3::new(0.0, 0.0, -1.0)), None);
    }

    #[test]
    fn lidar_sits_above_camera() {
        let calib = synthetic_calibration(96, 312);
        // sensor origin in camera coordinates
        assert!((calib.t.y + (LIDAR_HEIGHT - CAMERA_HEIGHT)).abs() < 1e-12);
        assert_eq!(calib.k[(0, 0)], 0.8 * 312.0);
    }

    #[test]
    fn zero_sized_configs_are_rejected() {
        assert!(synth_generate(&SynthConfig::new(0, (8, 8), 1)).is_err());
        assert!(synth_generate(&SynthConfig::new(1, (0, 8), 1)).is_err());
    }
}
