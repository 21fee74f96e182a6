//! Differentiates a small conv / pool / transposed-conv graph on the tape and
//! compares one weight gradient with a central difference.
//!
//! cargo run --example autodiff

use roadfuse::tensor::{Tape, Tensor};

fn loss(w: &Tensor<f64>) -> anyhow::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn(&[1, 1, 6, 6], |i| ((i * 7) % 11) as f64 / 10.0 - 0.5));
    let w = tape.leaf(w.clone().with_requires_grad(true));
    let b = tape.leaf(Tensor::zeros(&[2]));
    let up_w = tape.leaf(Tensor::from_fn(&[2, 2, 4, 4], |i| ((i * 5) % 9) as f64 / 10.0 - 0.4));
    let up_b = tape.leaf(Tensor::zeros(&[2]));

    let h = tape.conv2d(x, w, b, (1, 1), (1, 1))?;
    let h = tape.relu(h);
    let h = tape.max_pool2d_ceil(h)?;
    let h = tape.conv_transpose2d(h, up_w, up_b, (2, 2), (1, 1))?;
    let target: Vec<u8> = (0..36).map(|i| (i % 6 < 3) as u8).collect();
    let l = tape.softmax_ce_loss(h, &target, &[true; 36])?;

    let value = tape.value(l).data()[0];
    let grads = tape.backward(l)?;
    Ok((value, grads.get(w).map(|g| g.to_vec()).unwrap_or_default()))
}

fn main() -> anyhow::Result<()> {
    let w = Tensor::from_fn(&[2, 1, 3, 3], |i| (i as f64 - 8.0) / 20.0);
    let (value, grad) = loss(&w)?;
    println!("loss {value:.6}");

    let eps = 1e-6;
    let nudge = |d: f64| {
        let mut p = w.clone();
        p.data_mut()[4] += d;
        loss(&p).map(|r| r.0)
    };
    let numeric = (nudge(eps)? - nudge(-eps)?) / (2.0 * eps);
    println!("dL/dw[4]: tape {:.8}  central difference {numeric:.8}", grad[4]);
    Ok(())
}
