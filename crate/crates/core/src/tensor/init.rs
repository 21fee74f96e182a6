use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ConvSpec, Scalar, Tensor};

/// He-normal weights `[c_out, c_in, kh, kw]` with std `sqrt(2 / (kh*kw*c_in))`
/// and a zero bias. Deterministic per seed.
pub fn init_params<T: Scalar>(spec: &ConvSpec, seed: u64) -> (Tensor<T>, Tensor<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = spec.kh * spec.kw * spec.c_in;
    let weight = he_normal(&spec.conv_weight_shape(), fan_in, &mut rng);
    let bias = Tensor::zeros(&[spec.c_out]);
    (weight, bias)
}

pub(crate) fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

/// Bilinear interpolation kernel `[c, c, k, k]` for a transposed convolution
/// at `stride`, mapping channel i only onto channel i. The tent is scaled so
/// every output phase receives unit total weight.
pub fn bilinear_upsample_kernel<T: Scalar>(channels: usize, k: usize, stride: usize) -> Tensor<T> {
    let factor = k.div_ceil(2);
    let center = if k % 2 == 1 {
        factor as f64 - 1.0
    } else {
        factor as f64 - 0.5
    };
    let scale = stride as f64 / factor as f64;
    let tent = |i: usize| 1.0 - (i as f64 - center).abs() / factor as f64;
    let mut w = Tensor::zeros(&[channels, channels, k, k]);
    let data = w.data_mut();
    for c in 0..channels {
        let base = (c * channels + c) * k * k;
        for y in 0..k {
            for x in 0..k {
                data[base + y * k + x] = T::of(tent(y) * tent(x) * scale * scale);
            }
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn same_seed_same_weights() {
        let spec = ConvSpec::same(3, 4, 5);
        let (a, ab) = init_params::<f32>(&spec, 7);
        let (b, _) = init_params::<f32>(&spec, 7);
        let (c, _) = init_params::<f32>(&spec, 8);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        assert_eq!(a.shape(), &[5, 4, 3, 3]);
        assert!(ab.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_std_close_to_he_target() {
        // 3*3*16*70 = 10080 draws
        let spec = ConvSpec::same(3, 16, 70);
        let (w, _) = init_params::<f64>(&spec, 1);
        let n = w.numel() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = (2.0 / (3.0 * 3.0 * 16.0f64)).sqrt();
        assert!(n >= 1e4);
        assert!((var.sqrt() / target - 1.0).abs() < 0.1, "std {}", var.sqrt());
    }

    #[test]
    fn bilinear_kernel_preserves_constants() {
        for &(k, s, p) in &[(4usize, 2usize, 1usize), (16, 4, 6), (16, 8, 4)] {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::full(&[1, 1, 6, 6], 1.0));
            let w = tape.leaf(bilinear_upsample_kernel(1, k, s));
            let b = tape.leaf(Tensor::zeros(&[1]));
            let y = tape.conv_transpose2d(x, w, b, (s, s), (p, p)).unwrap();
            let [_, _, h, wd] = tape.value(y).dims4();
            // interior pixels see full kernel coverage
            let v = tape.value(y).data()[(h / 2) * wd + wd / 2];
            assert!((v - 1.0).abs() < 1e-12, "k={k} s={s}: {v}");
        }
    }
}
