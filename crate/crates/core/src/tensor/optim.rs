use super::{Scalar, Tensor};

/// Plain SGD: `p <- p - lr * grad`, then clears every gradient buffer.
/// Tensors without a gradient are left untouched.
pub fn sgd_step<'a, T: Scalar>(params: impl IntoIterator<Item = &'a mut Tensor<T>>, lr: T) {
    for p in params {
        if let Some(g) = p.grad.take() {
            if lr != T::zero() {
                p.data
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(v, &d)| *v = *v - lr * d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_arithmetic() {
        let mut p = Tensor::<f64>::scalar(1.0);
        p.accumulate_grad(&[2.0]).unwrap();
        sgd_step([&mut p], 0.1);
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
        assert!(p.grad().is_none());
    }

    #[test]
    fn zero_lr_is_noop_but_clears_grads() {
        let mut p = Tensor::<f32>::new(&[2], vec![1.5, -2.0]).unwrap();
        p.accumulate_grad(&[3.0, 4.0]).unwrap();
        sgd_step([&mut p], 0.0);
        assert_eq!(p.data(), &[1.5, -2.0]);
        assert!(p.grad().is_none());
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(p) = (p - 3)^2, f'(p) = 2(p - 3)
        let mut p = Tensor::<f64>::scalar(-1.0);
        let f = |x: f64| (x - 3.0).powi(2);
        let mut last = f(p.data()[0]);
        for _ in 0..10 {
            let x = p.data()[0];
            p.accumulate_grad(&[2.0 * (x - 3.0)]).unwrap();
            sgd_step([&mut p], 0.1);
            let now = f(p.data()[0]);
            assert!(now < last);
            // contraction factor (1 - 2 lr) on the error
            assert!((now - last * 0.64).abs() < 1e-9);
            last = now;
        }
    }
}
