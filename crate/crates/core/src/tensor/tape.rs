use super::kernels::{self, Window};
use super::{conv_output_len, conv_transpose_output_len, pool_output_len_ceil, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Relu {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        /// softmax(logits) minus one-hot target, already scaled by 1/count and
        /// zeroed on invalid pixels: exactly d(loss)/d(logits).
        dlogits: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of recorded operations. Nodes are appended after their
/// inputs, so reverse insertion order is a reverse topological order.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input or parameter. Gradients are tracked when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn dims4(&self, var: Var, what: &str) -> Result<[usize; 4]> {
        let shape = self.shape(var);
        if shape.len() != 4 {
            return Err(Error::shape(format!("{what} expects NCHW, got {shape:?}")));
        }
        Ok([shape[0], shape[1], shape[2], shape[3]])
    }

    /// Cross-correlation of `x [N,Cin,H,W]` with `w [Cout,Cin,kh,kw]` plus `b [Cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let [n, c_in, h, wd] = self.dims4(x, "conv2d input")?;
        let [c_out, wc_in, kh, kw] = self.dims4(w, "conv2d weight")?;
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {c_in}, weight expects {wc_in}"
            )));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape(format!(
                "conv2d bias {:?} for {c_out} output channels",
                self.shape(b)
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        let oh = conv_output_len(h, kh, stride.0, pad.0)?;
        let ow = conv_output_len(wd, kw, stride.1, pad.1)?;
        let g = Window {
            c: c_in,
            h,
            w: wd,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
            oh,
            ow,
        };
        let mut out = vec![T::zero(); n * c_out * oh * ow];
        kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &g,
            self.value(w).data(),
            self.value(b).data(),
            c_out,
            &mut out,
        );
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(&[n, c_out, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Transposed convolution of `x [N,Cin,H,W]` with `w [Cin,Cout,kh,kw]`;
    /// output extent `(H-1)*s - 2p + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let [n, c_in, h, wd] = self.dims4(x, "conv_transpose2d input")?;
        let [wc_in, c_out, kh, kw] = self.dims4(w, "conv_transpose2d weight")?;
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv_transpose2d channel mismatch: input has {c_in}, weight expects {wc_in}"
            )));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape(format!(
                "conv_transpose2d bias {:?} for {c_out} output channels",
                self.shape(b)
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv_transpose2d stride must be positive"));
        }
        let oh = conv_transpose_output_len(h, kh, stride.0, pad.0)?;
        let ow = conv_transpose_output_len(wd, kw, stride.1, pad.1)?;
        let g = transpose_window(c_out, oh, ow, kh, kw, stride, pad, h, wd);
        let mut out = vec![T::zero(); n * c_out * oh * ow];
        kernels::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            c_in,
            &g,
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(&[n, c_out, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// 2x2/stride-2 max pooling with ceil output sizing.
    pub fn max_pool2d_ceil(&mut self, x: Var) -> Result<Var> {
        self.max_pool2d(x, 2, 2)
    }

    pub fn max_pool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "max_pool2d input")?;
        let oh = pool_output_len_ceil(h, window, stride)?;
        let ow = pool_output_len_ceil(w, window, stride)?;
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        kernels::maxpool_forward(
            self.value(x).data(),
            n * c,
            h,
            w,
            window,
            stride,
            oh,
            ow,
            &mut out,
            &mut argmax,
        );
        let rg = self.needs(x);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Channel concatenation: `a` fills channels `[0, Ca)`, `b` fills `[Ca, Ca+Cb)`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.dims4(a, "concat input")?;
        let [nb, cb, hb, wb] = self.dims4(b, "concat input")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::shape(format!(
                "concat mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..na {
            out.extend_from_slice(&da[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&db[i * cb * plane..(i + 1) * cb * plane]);
        }
        let rg = self.needs(a) || self.needs(b);
        let value = Tensor::new(&[na, ca + cb, ha, wa], out)?;
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Center crop of the spatial extent to `(h, w)`; the odd leftover pixel
    /// goes to the bottom/right.
    pub fn center_crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [n, c, ih, iw] = self.dims4(x, "crop input")?;
        if h > ih || w > iw || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "cannot crop {ih}x{iw} to {h}x{w}"
            )));
        }
        if (h, w) == (ih, iw) {
            return Ok(x);
        }
        let top = (ih - h) / 2;
        let left = (iw - w) / 2;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            let plane = &src[p * ih * iw..(p + 1) * ih * iw];
            for y in 0..h {
                let row = (y + top) * iw + left;
                out.extend_from_slice(&plane[row..row + w]);
            }
        }
        let rg = self.needs(x);
        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::Crop { x, top, left }, rg))
    }

    /// Scalar `sum_i weights[i] * x[i]`; reduces any tensor to a probe loss.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let src = self.value(x).data();
        if weights.len() != src.len() {
            return Err(Error::shape(format!(
                "weighted_sum: {} weights for {} values",
                weights.len(),
                src.len()
            )));
        }
        let total: f64 = src.iter().zip(weights).map(|(&v, &w)| v.as_f64() * w).sum();
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::scalar(T::of(total)),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Mean masked softmax cross-entropy over `logits [N,C,H,W]`. `target`
    /// holds one class index per pixel (`N*H*W`), `valid` selects the pixels
    /// that count. Max-subtraction keeps the exponentials bounded.
    pub fn softmax_ce_loss(&mut self, logits: Var, target: &[u8], valid: &[bool]) -> Result<Var> {
        let [n, c, h, w] = self.dims4(logits, "softmax_ce_loss logits")?;
        let pixels = n * h * w;
        if target.len() != pixels || valid.len() != pixels {
            return Err(Error::shape(format!(
                "loss masks have {}/{} entries, logits cover {pixels} pixels",
                target.len(),
                valid.len()
            )));
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::shape("softmax_ce_loss: no valid pixels"));
        }
        let plane = h * w;
        let src = self.value(logits).data();
        let mut dlogits = vec![0.0f64; src.len()];
        let mut total = 0.0f64;
        let inv = 1.0 / count as f64;
        let mut probs = vec![0.0f64; c];
        for b in 0..n {
            for p in 0..plane {
                let pix = b * plane + p;
                if !valid[pix] {
                    continue;
                }
                let cls = target[pix] as usize;
                if cls >= c {
                    return Err(Error::shape(format!(
                        "target class {cls} out of range for {c} channels"
                    )));
                }
                let at = |k: usize| src[(b * c + k) * plane + p].as_f64();
                let max = (0..c).map(at).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (k, prob) in probs.iter_mut().enumerate() {
                    *prob = (at(k) - max).exp();
                    z += *prob;
                }
                total += z.ln() - (at(cls) - max);
                for (k, prob) in probs.iter().enumerate() {
                    let onehot = if k == cls { 1.0 } else { 0.0 };
                    dlogits[(b * c + k) * plane + p] = (prob / z - onehot) * inv;
                }
            }
        }
        let loss = total * inv;
        if !loss.is_finite() {
            return Err(Error::NonFinite("softmax_ce_loss".into()));
        }
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::SoftmaxCe { logits, dlogits },
            rg,
        ))
    }

    /// Reverse sweep from the scalar `loss`; d(loss)/d(loss) = 1. Every node
    /// is visited once, in reverse insertion order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if gout.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of node {idx}")));
            }
            if matches!(node.op, Op::Leaf) {
                // leaves keep their gradient for the caller
                grads[idx] = Some(gout);
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let [n, c_in, h, wd] = self.value(*x).dims4();
                    let [c_out, _, kh, kw] = self.value(*w).dims4();
                    let [_, _, oh, ow] = node.value.dims4();
                    let g = Window {
                        c: c_in,
                        h,
                        w: wd,
                        kh,
                        kw,
                        sh: stride.0,
                        sw: stride.1,
                        ph: pad.0,
                        pw: pad.1,
                        oh,
                        ow,
                    };
                    let mut gx = self.needs(*x).then(|| vec![T::zero(); self.value(*x).numel()]);
                    let mut gw = self.needs(*w).then(|| vec![T::zero(); self.value(*w).numel()]);
                    let mut gb = self.needs(*b).then(|| vec![T::zero(); c_out]);
                    kernels::conv2d_backward(
                        self.value(*x).data(),
                        n,
                        &g,
                        self.value(*w).data(),
                        c_out,
                        &gout,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ConvTranspose2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let [n, c_in, h, wd] = self.value(*x).dims4();
                    let [_, c_out, kh, kw] = self.value(*w).dims4();
                    let [_, _, oh, ow] = node.value.dims4();
                    let g = transpose_window(c_out, oh, ow, kh, kw, *stride, *pad, h, wd);
                    let mut gx = self.needs(*x).then(|| vec![T::zero(); self.value(*x).numel()]);
                    let mut gw = self.needs(*w).then(|| vec![T::zero(); self.value(*w).numel()]);
                    let mut gb = self.needs(*b).then(|| vec![T::zero(); c_out]);
                    kernels::conv_transpose2d_backward(
                        self.value(*x).data(),
                        n,
                        c_in,
                        &g,
                        self.value(*w).data(),
                        &gout,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MaxPool { x, argmax } => {
                    if self.needs(*x) {
                        let [n, c, h, w] = self.value(*x).dims4();
                        let [_, _, oh, ow] = node.value.dims4();
                        let mut gx = vec![T::zero(); n * c * h * w];
                        kernels::maxpool_backward(&gout, argmax, n * c, h * w, oh * ow, &mut gx);
                        accumulate(&mut grads, *x, Some(gx));
                    }
                }
                Op::Relu { x } => {
                    let gx = node
                        .value
                        .data()
                        .iter()
                        .zip(&gout)
                        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::Concat { a, b } => {
                    let [n, ca, h, w] = self.value(*a).dims4();
                    let cb = self.value(*b).dims4()[1];
                    let plane = h * w;
                    let mut ga = Vec::with_capacity(n * ca * plane);
                    let mut gb = Vec::with_capacity(n * cb * plane);
                    for i in 0..n {
                        let base = i * (ca + cb) * plane;
                        ga.extend_from_slice(&gout[base..base + ca * plane]);
                        gb.extend_from_slice(&gout[base + ca * plane..base + (ca + cb) * plane]);
                    }
                    accumulate(&mut grads, *a, Some(ga));
                    accumulate(&mut grads, *b, Some(gb));
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, Some(gout.clone()));
                    accumulate(&mut grads, *b, Some(gout));
                }
                Op::Crop { x, top, left } => {
                    let [n, c, ih, iw] = self.value(*x).dims4();
                    let [_, _, h, w] = node.value.dims4();
                    let mut gx = vec![T::zero(); n * c * ih * iw];
                    for p in 0..n * c {
                        for y in 0..h {
                            let dst = p * ih * iw + (y + top) * iw + left;
                            let src = (p * h + y) * w;
                            gx[dst..dst + w].copy_from_slice(&gout[src..src + w]);
                        }
                    }
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::WeightedSum { x, weights } => {
                    let g = gout[0];
                    let gx = weights.iter().map(|&w| T::of(w) * g).collect();
                    accumulate(&mut grads, *x, Some(gx));
                }
                Op::SoftmaxCe { logits, dlogits } => {
                    let g = gout[0];
                    let gx = dlogits.iter().map(|&d| T::of(d) * g).collect();
                    accumulate(&mut grads, *logits, Some(gx));
                }
            }
        }
        grads[loss.0] = Some(vec![T::one()]);
        Ok(Gradients { grads })
    }
}

#[allow(clippy::too_many_arguments)]
fn transpose_window(
    c_out: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    h: usize,
    w: usize,
) -> Window {
    Window {
        c: c_out,
        h: oh,
        w: ow,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: pad.0,
        pw: pad.1,
        oh: h,
        ow: w,
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], var: Var, g: Option<Vec<T>>) {
    let Some(g) = g else { return };
    match &mut grads[var.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
        slot => *slot = Some(g),
    }
}
