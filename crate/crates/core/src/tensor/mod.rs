//! Dense NCHW tensors and the small reverse-mode engine the fusion networks
//! are built on.
//!
//! The engine is generic over [`Scalar`]: training runs in `f32`, gradient
//! checks run the exact same code paths in `f64`.

mod checkpoint;
pub(crate) mod init;
pub(crate) mod kernels;
mod optim;
mod tape;

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use init::{bilinear_upsample_kernel, init_params};
pub use optim::sgd_step;
pub use tape::{Gradients, Tape, Var};

/// Floating-point element type of the engine.
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static
{
    const NAME: &'static str;

    /// `C = alpha * A * B + beta * C` over strided row/column layouts.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major tensor of rank 1..=4 (NCHW when rank 4, W fastest).
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.requires_grad)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_rank(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_rank(shape).expect("tensor rank must be 1..=4");
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(&mut f).collect();
        Self::new(shape, data).expect("shape matches generated data")
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for tensor {:?}",
                g.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// NCHW extents, left-padding lower-rank shapes with ones.
    pub fn dims4(&self) -> [usize; 4] {
        let mut d = [1usize; 4];
        let off = 4 - self.shape.len();
        d[off..].copy_from_slice(&self.shape);
        d
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise cast to another precision (gradient buffer is dropped).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }
}

fn check_rank(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(format!(
            "rank {} outside 1..=4 ({shape:?})",
            shape.len()
        )));
    }
    Ok(())
}

/// Convolution geometry: kernel `(kh, kw, c_in, c_out)`, stride and padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding `k / 2`.
    pub fn same(k: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            kh: k,
            kw: k,
            c_in,
            c_out,
            stride: (1, 1),
            padding: (k / 2, k / 2),
        }
    }

    pub fn new(
        kernel: (usize, usize, usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let spec = Self {
            kh: kernel.0,
            kw: kernel.1,
            c_in: kernel.2,
            c_out: kernel.3,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh == 0 || self.kw == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::shape(format!("degenerate kernel/stride in {self:?}")));
        }
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::shape(format!("zero channels in {self:?}")));
        }
        Ok(())
    }

    /// Weight shape for a forward convolution: `[c_out, c_in, kh, kw]`.
    pub fn conv_weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kh, self.kw]
    }

    /// Weight shape for a transposed convolution: `[c_in, c_out, kh, kw]`.
    pub fn transpose_weight_shape(&self) -> [usize; 4] {
        [self.c_in, self.c_out, self.kh, self.kw]
    }

    pub fn param_count(&self) -> usize {
        self.kh * self.kw * self.c_in * self.c_out + self.c_out
    }

    pub fn conv_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_output_len(h, self.kh, self.stride.0, self.padding.0)?,
            conv_output_len(w, self.kw, self.stride.1, self.padding.1)?,
        ))
    }

    pub fn transpose_output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_transpose_output_len(h, self.kh, self.stride.0, self.padding.0)?,
            conv_transpose_output_len(w, self.kw, self.stride.1, self.padding.1)?,
        ))
    }
}

/// `floor((len + 2p - k) / s) + 1`, failing when the window does not fit.
pub fn conv_output_len(len: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    let padded = len + 2 * p;
    if padded < k || len == 0 {
        return Err(Error::shape(format!(
            "kernel {k} does not fit input {len} with padding {p}"
        )));
    }
    Ok((padded - k) / s + 1)
}

/// `(len - 1) * s - 2p + k`, failing on non-positive sizes.
pub fn conv_transpose_output_len(len: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    let full = (len as isize - 1) * s as isize + k as isize;
    let out = full - 2 * p as isize;
    if len == 0 || out <= 0 {
        return Err(Error::shape(format!(
            "transposed conv output non-positive (len {len}, k {k}, s {s}, p {p})"
        )));
    }
    Ok(out as usize)
}

/// Ceil-mode pooling length: the last window may hang over the right/bottom
/// edge but must start inside the input.
pub fn pool_output_len_ceil(len: usize, window: usize, stride: usize) -> Result<usize> {
    if len == 0 || window == 0 || stride == 0 {
        return Err(Error::shape(format!(
            "degenerate pooling (len {len}, window {window}, stride {stride})"
        )));
    }
    if len <= window {
        return Ok(1);
    }
    let mut out = (len - window).div_ceil(stride) + 1;
    if (out - 1) * stride >= len {
        out -= 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::<f64>::zeros(&[3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn ceil_pool_chain_matches_kitti_resolution() {
        let mut hw = (375, 1242);
        let mut chain = vec![];
        for _ in 0..4 {
            hw = (
                pool_output_len_ceil(hw.0, 2, 2).unwrap(),
                pool_output_len_ceil(hw.1, 2, 2).unwrap(),
            );
            chain.push(hw);
        }
        assert_eq!(chain, vec![(188, 621), (94, 311), (47, 156), (24, 78)]);
    }

    #[test]
    fn pool_len_edge_cases() {
        assert_eq!(pool_output_len_ceil(1, 2, 2).unwrap(), 1);
        assert_eq!(pool_output_len_ceil(2, 2, 2).unwrap(), 1);
        assert_eq!(pool_output_len_ceil(3, 2, 2).unwrap(), 2);
        assert_eq!(pool_output_len_ceil(4, 2, 2).unwrap(), 2);
        assert!(pool_output_len_ceil(0, 2, 2).is_err());
    }

    #[test]
    fn conv_sizes() {
        let spec = ConvSpec::same(3, 3, 64);
        assert_eq!(spec.conv_output_size(375, 1242).unwrap(), (375, 1242));
        let up = ConvSpec::new((4, 4, 2, 2), (2, 2), (1, 1)).unwrap();
        assert_eq!(up.transpose_output_size(24, 78).unwrap(), (48, 156));
        assert!(conv_output_len(1, 3, 1, 0).is_err());
        assert!(conv_transpose_output_len(1, 2, 2, 1).is_err());
        assert!(ConvSpec::new((0, 3, 1, 1), (1, 1), (0, 0)).is_err());
        assert!(ConvSpec::new((3, 3, 1, 1), (0, 1), (0, 0)).is_err());
    }
}
