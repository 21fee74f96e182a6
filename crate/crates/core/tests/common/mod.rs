#![allow(dead_code)]

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadfuse::dataset::{frame_id, synthetic_calibration, write_frame_kitti, Category, RoadFrame};
use roadfuse::evaluation::{ConfusionCounts, SWEEP_STEPS};
use roadfuse::lidar::{CalibrationSet, LidarImage, LidarPoint, PointCloud};
use roadfuse::tensor::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Direct 6-loop cross-correlation over NCHW, weight `[co, ci, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    (n, ci, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    (co, kh, kw): (usize, usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..ci {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * sh + i) as isize - ph as isize;
                                let ix = (xo * sw + j) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * ci + c) * kh + i) * kw + j]
                                    * x[((b * ci + c) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * co + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Central finite differences of `f` with respect to every entry of `x`.
pub fn finite_diff(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Max relative error with a floor on the denominator so that near-zero
/// entries are judged absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-2))
        .fold(0.0, f64::max)
}

/// Builds a graph from leaf tensors, reduces its output with fixed random
/// weights, and checks every input gradient against finite differences.
/// Returns the worst relative error.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    probe_seed: u64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |vals: &[Vec<f64>]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(vals)
            .map(|(t, v)| {
                tape.leaf(
                    Tensor::new(t.shape(), v.clone())
                        .unwrap()
                        .with_requires_grad(true),
                )
            })
            .collect();
        let out = build(&mut tape, &vars);
        let loss = if tape.value(out).numel() == 1 {
            out
        } else {
            let w = random_weights(tape.value(out).numel(), &mut rng(probe_seed));
            tape.weighted_sum(out, &w).unwrap()
        };
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss).unwrap();
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                grads
                    .get(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        (value, g)
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().to_vec()).collect();
    let (_, analytic) = eval(&base);
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let numeric = finite_diff(&base[i], 1e-6, |probe| {
            let mut vals = base.clone();
            vals[i] = probe.to_vec();
            eval(&vals).0
        });
        worst = worst.max(max_rel_err(&analytic[i], &numeric));
    }
    worst
}

pub fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Row-major 3x3 times vector, written out longhand.
pub fn mat3_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Independent projection: homogeneous 3x4 extrinsic matrix
/// followed by intrinsics and perspective division, in plain arrays.
pub fn oracle_project(k: &[[f64; 3]; 3], rt: &[[f64; 4]; 3], p: [f64; 3]) -> Option<(f64, f64)> {
    let ph = [p[0], p[1], p[2], 1.0];
    let mut cam = [0.0; 3];
    for (i, row) in rt.iter().enumerate() {
        cam[i] = (0..4).map(|j| row[j] * ph[j]).sum();
    }
    if cam[2] <= 0.0 {
        return None;
    }
    let img = mat3_vec(k, cam);
    Some((img[0] / img[2], img[1] / img[2]))
}

pub fn test_calib() -> (CalibrationSet, [[f64; 3]; 3], [[f64; 4]; 3]) {
    let k = [[721.5377, 0.0, 609.5593], [0.0, 721.5377, 172.854], [0.0, 0.0, 1.0]];
    // velodyne axes (x fwd, y left, z up) onto camera axes, plus a small yaw
    let (s, c) = (0.02f64.sin(), 0.02f64.cos());
    let axes = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];
    let yaw = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|m| yaw[i][m] * axes[m][j]).sum();
        }
    }
    let t = [0.06, -0.08, -0.27];
    let rt = [
        [r[0][0], r[0][1], r[0][2], t[0]],
        [r[1][0], r[1][1], r[1][2], t[1]],
        [r[2][0], r[2][1], r[2][2], t[2]],
    ];
    let calib = CalibrationSet::new(
        Matrix3::from_fn(|i, j| k[i][j]),
        Matrix3::from_fn(|i, j| r[i][j]),
        Vector3::new(t[0], t[1], t[2]),
        (375, 1242),
    )
    .unwrap();
    (calib, k, rt)
}

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    PointCloud::new(
        (0..n)
            .map(|_| LidarPoint {
                x: r.random_range(-20.0..60.0),
                y: r.random_range(-30.0..30.0),
                z: r.random_range(-3.0..3.0),
                reflectance: r.random_range(0.0..1.0),
            })
            .collect(),
    )
}

pub struct Case {
    pub prob: Vec<f32>,
    pub road: Vec<bool>,
    pub valid: Vec<bool>,
}

pub fn random_case(seed: u64, n: usize) -> Case {
    let mut r = rng(seed);
    let road_rate = r.random_range(0.1..0.9);
    Case {
        prob: (0..n).map(|_| r.random::<f32>()).collect(),
        road: (0..n).map(|_| r.random_bool(road_rate)).collect(),
        valid: (0..n).map(|_| r.random_bool(0.9)).collect(),
    }
}

pub fn brute_force(c: &Case, tau: f32) -> ConfusionCounts {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..c.prob.len() {
        if !c.valid[i] {
            continue;
        }
        let predicted = c.prob[i] >= tau;
        if predicted && c.road[i] {
            tp += 1;
        } else if predicted {
            fp += 1;
        } else if c.road[i] {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    ConfusionCounts::new(tp, fp, fn_, tn)
}

/// F at every sweep threshold, computed from scratch.
pub fn brute_sweep(c: &Case) -> Vec<(f64, Option<f64>)> {
    (0..SWEEP_STEPS)
        .map(|i| {
            let k = brute_force(c, i as f32 / 255.0);
            let p = k.tp as f64 / (k.tp + k.fp) as f64;
            let r = k.tp as f64 / (k.tp + k.fn_) as f64;
            let f = (k.tp + k.fp > 0 && p + r > 0.0).then(|| 2.0 * p * r / (p + r));
            (i as f64 / 255.0, f)
        })
        .collect()
}

pub fn blank_frame(category: Category, index: usize, h: usize, w: usize) -> RoadFrame {
    RoadFrame {
        frame_id: frame_id(category, index),
        category,
        rgb: vec![0.5; 3 * h * w],
        lidar: LidarImage::zeros(h, w),
        gt_road: (0..h * w).map(|i| i % 3 == 0).collect(),
        gt_valid: vec![true; h * w],
    }
}

pub fn write_blank(root: &Path, category: Category, index: usize) {
    let frame = blank_frame(category, index, 4, 8);
    write_frame_kitti(root, &frame, &PointCloud::default(), &synthetic_calibration(4, 8)).unwrap();
}
