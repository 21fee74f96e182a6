//! Raw compute kernels over contiguous NCHW buffers. No shape validation
//! happens here; the tape checks shapes before calling in.

use super::Scalar;

/// Geometry of one sliding-window pass: image `[c, h, w]` sampled by a
/// `kh x kw` window at stride/padding onto a `oh x ow` grid of columns.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Window {
    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.sh == 1
            && self.sw == 1
            && self.ph == 0
            && self.pw == 0
            && self.oh == self.h
            && self.ow == self.w
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds `img [c, h, w]` into `col [c*kh*kw, oh*ow]`.
pub(crate) fn im2col<T: Scalar>(img: &[T], g: &Window, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.sw == 1 {
                        // contiguous run of valid columns
                        let lo = g.pw.saturating_sub(kj).min(g.ow);
                        let hi = (g.w + g.pw).saturating_sub(kj).min(g.ow).max(lo);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if hi > lo {
                            let start = lo + kj - g.pw;
                            line[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        }
                    } else {
                        for (ox, out) in line.iter_mut().enumerate() {
                            let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                            *out = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Folds `col [c*kh*kw, oh*ow]` back onto `img [c, h, w]`, accumulating.
pub(crate) fn col2im<T: Scalar>(col: &[T], g: &Window, img: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c[m,n] = a[m,k] * b[k,n] + beta * c`.
fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Row-major `c[m,n] = a[k,m]^T * b[k,n] + beta * c`.
fn matmul_at<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Row-major `c[m,n] = a[m,k] * b[n,k]^T + beta * c`.
fn matmul_bt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Cross-correlation forward. `x [n, c_in, h, w]`, `weight [c_out, c_in*kh*kw]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    g: &Window,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    out: &mut [T],
) {
    let in_plane = g.c * g.h * g.w;
    let out_plane = c_out * g.col_cols();
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.col_cols()]
    };
    for b in 0..n {
        let xb = &x[b * in_plane..(b + 1) * in_plane];
        let ob = &mut out[b * out_plane..(b + 1) * out_plane];
        for (co, row) in ob.chunks_mut(g.col_cols()).enumerate() {
            row.fill(bias[co]);
        }
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        matmul(c_out, g.col_rows(), g.col_cols(), weight, src, T::one(), ob);
    }
}

/// Accumulates weight/bias gradients and (optionally) writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    g: &Window,
    weight: &[T],
    c_out: usize,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let in_plane = g.c * g.h * g.w;
    let out_plane = c_out * g.col_cols();
    let rows = g.col_rows();
    let cols = g.col_cols();
    let pointwise = g.is_pointwise();
    let mut col = vec![T::zero(); if pointwise { 0 } else { rows * cols }];

    if let Some(gb) = grad_b {
        for b in 0..n {
            let go = &grad_out[b * out_plane..(b + 1) * out_plane];
            for (co, row) in go.chunks(cols).enumerate() {
                gb[co] = gb[co] + row.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(gw) = grad_w {
        for b in 0..n {
            let xb = &x[b * in_plane..(b + 1) * in_plane];
            let go = &grad_out[b * out_plane..(b + 1) * out_plane];
            let src = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            matmul_bt(c_out, cols, rows, go, src, T::one(), gw);
        }
    }
    if let Some(gx) = grad_x {
        for b in 0..n {
            let go = &grad_out[b * out_plane..(b + 1) * out_plane];
            let gxb = &mut gx[b * in_plane..(b + 1) * in_plane];
            if pointwise {
                matmul_at(rows, c_out, cols, weight, go, T::one(), gxb);
            } else {
                matmul_at(rows, c_out, cols, weight, go, T::zero(), &mut col);
                col2im(&col, g, gxb);
            }
        }
    }
}

/// Transposed convolution forward. `x [n, c_in, h, w]`, `weight [c_in, c_out*kh*kw]`.
/// `g` describes the OUTPUT image (`c = c_out`, `h/w` = output size) with the
/// input grid as its column grid (`oh/ow` = input size).
pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    c_in: usize,
    g: &Window,
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let in_plane = c_in * g.col_cols();
    let out_plane = g.c * g.h * g.w;
    let mut col = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..n {
        let xb = &x[b * in_plane..(b + 1) * in_plane];
        let ob = &mut out[b * out_plane..(b + 1) * out_plane];
        for (co, plane) in ob.chunks_mut(g.h * g.w).enumerate() {
            plane.fill(bias[co]);
        }
        matmul_at(g.col_rows(), c_in, g.col_cols(), weight, xb, T::zero(), &mut col);
        col2im(&col, g, ob);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    c_in: usize,
    g: &Window,
    weight: &[T],
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let in_plane = c_in * g.col_cols();
    let out_plane = g.c * g.h * g.w;
    let rows = g.col_rows();
    let cols = g.col_cols();

    if let Some(gb) = grad_b {
        for b in 0..n {
            let go = &grad_out[b * out_plane..(b + 1) * out_plane];
            for (co, plane) in go.chunks(g.h * g.w).enumerate() {
                gb[co] = gb[co] + plane.iter().copied().sum::<T>();
            }
        }
    }
    if grad_x.is_none() && grad_w.is_none() {
        return;
    }
    let mut col = vec![T::zero(); rows * cols];
    let mut grad_x = grad_x;
    let mut grad_w = grad_w;
    for b in 0..n {
        let go = &grad_out[b * out_plane..(b + 1) * out_plane];
        im2col(go, g, &mut col);
        if let Some(gx) = grad_x.as_deref_mut() {
            let gxb = &mut gx[b * in_plane..(b + 1) * in_plane];
            matmul(c_in, rows, cols, weight, &col, T::one(), gxb);
        }
        if let Some(gw) = grad_w.as_deref_mut() {
            let xb = &x[b * in_plane..(b + 1) * in_plane];
            matmul_bt(c_in, cols, rows, xb, &col, T::one(), gw);
        }
    }
}

/// Ceil-mode max pooling over each `[h, w]` plane. Windows are clipped at
/// the right/bottom edge (implicit -inf padding). `argmax` receives the flat
/// in-plane index of the first maximum in row-major window order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        let arg = &mut argmax[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let y0 = oy * stride;
            let y1 = (y0 + window).min(h);
            for ox in 0..ow {
                let x0 = ox * stride;
                let x1 = (x0 + window).min(w);
                let mut best = T::neg_infinity();
                let mut best_idx = y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let v = src[iy * w + ix];
                        if v > best {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                dst[oy * ow + ox] = best;
                arg[oy * ow + ox] = best_idx as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Scalar>(
    grad_out: &[T],
    argmax: &[u32],
    planes: usize,
    in_plane: usize,
    out_plane: usize,
    grad_x: &mut [T],
) {
    for p in 0..planes {
        let go = &grad_out[p * out_plane..(p + 1) * out_plane];
        let arg = &argmax[p * out_plane..(p + 1) * out_plane];
        let gx = &mut grad_x[p * in_plane..(p + 1) * in_plane];
        for (&g, &i) in go.iter().zip(arg) {
            gx[i as usize] = gx[i as usize] + g;
        }
    }
}
