//! Convolution kernels via im2col + GEMM.
//!
//! Convention: cross-correlation (no kernel flip), SAME zero padding.
//! For input extent `n`, stride `s` and kernel `k` the output extent is
//! `ceil(n / s)` and the total padding `max((out - 1) * s + k - n, 0)` is
//! split with the smaller half before the data.
//!
//! Conv weights are `(out_c, in_c, k, k)`. Transposed-conv weights are
//! `(in_c, out_c, k, k)`: the same tensor that, used by [`conv2d`] in the
//! opposite direction, makes [`conv2d_transpose`] its exact adjoint.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

/// Output extent and leading pad for SAME convolution along one axis.
pub fn same_padding(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(len);
    (out, total / 2)
}

impl Geometry {
    fn new(channels: usize, in_h: usize, in_w: usize, k: usize, stride: usize) -> Self {
        let (out_h, pad_top) = same_padding(in_h, k, stride);
        let (out_w, pad_left) = same_padding(in_w, k, stride);
        Self {
            channels,
            in_h,
            in_w,
            k,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        }
    }

    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input column range `[lo, hi)` of output columns whose tap `kj` lands
    /// inside the image, as output indices.
    fn valid_out(&self, tap: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        // in = out * s + tap - pad must satisfy 0 <= in < in_len
        let s = self.stride;
        let lo = if pad > tap {
            (pad - tap).div_ceil(s)
        } else {
            0
        };
        let hi = if in_len + pad > tap {
            ((in_len + pad - tap - 1) / s + 1).min(out_len)
        } else {
            0
        };
        let lo = lo.min(out_len);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Scalar>(plane: &[T], g: &Geometry, col: &mut [T]) {
    let (k, s) = (g.k, g.stride);
    let cols = g.col_cols();
    for c in 0..g.channels {
        let src = &plane[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            let (oh_lo, oh_hi) = g.valid_out(ki, g.pad_top, g.in_h, g.out_h);
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (ow_lo, ow_hi) = g.valid_out(kj, g.pad_left, g.in_w, g.out_w);
                for oh in 0..g.out_h {
                    let out_row = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if oh < oh_lo || oh >= oh_hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let ih = oh * s + ki - g.pad_top;
                    let in_row = &src[ih * g.in_w..(ih + 1) * g.in_w];
                    out_row[..ow_lo].fill(T::zero());
                    out_row[ow_hi..].fill(T::zero());
                    if ow_hi == ow_lo {
                        continue;
                    }
                    if s == 1 {
                        let start = ow_lo + kj - g.pad_left;
                        out_row[ow_lo..ow_hi]
                            .copy_from_slice(&in_row[start..start + ow_hi - ow_lo]);
                    } else {
                        for ow in ow_lo..ow_hi {
                            out_row[ow] = in_row[ow * s + kj - g.pad_left];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back onto the image plane.
#[allow(clippy::needless_range_loop)]
fn col2im<T: Scalar>(col: &[T], g: &Geometry, plane: &mut [T]) {
    plane.fill(T::zero());
    let (k, s) = (g.k, g.stride);
    let cols = g.col_cols();
    for c in 0..g.channels {
        let dst = &mut plane[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            let (oh_lo, oh_hi) = g.valid_out(ki, g.pad_top, g.in_h, g.out_h);
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                let (ow_lo, ow_hi) = g.valid_out(kj, g.pad_left, g.in_w, g.out_w);
                for oh in oh_lo..oh_hi {
                    let ih = oh * s + ki - g.pad_top;
                    let in_row = &mut dst[ih * g.in_w..(ih + 1) * g.in_w];
                    let col_row = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    for ow in ow_lo..ow_hi {
                        let iw = ow * s + kj - g.pad_left;
                        in_row[iw] = in_row[iw] + col_row[ow];
                    }
                }
            }
        }
    }
}

fn check_kernel<T: Scalar>(op: &'static str, weights: &Tensor<T>, stride: usize) -> Result<usize> {
    let [_, _, kh, kw] = weights.shape();
    if kh != kw {
        return Err(Error::invalid(
            op,
            format!("kernel must be square, got {kh}x{kw}"),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    Ok(kh)
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&[T]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::invalid(
            op,
            format!("bias has {} entries, expected {channels}", b.len()),
        )),
        _ => Ok(()),
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&[T]>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_exact_mut(plane).zip(b.iter().cycle()) {
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Vec<T> {
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            *acc = dy.data()[start..start + plane]
                .iter()
                .fold(*acc, |a, &v| a + v);
        }
    }
    db
}

/// SAME-padded 2-D cross-correlation.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
) -> Result<Tensor<T>> {
    let k = check_kernel("conv2d", weights, stride)?;
    let [n, c_in, h, w] = input.shape();
    let [c_out, w_in, _, _] = weights.shape();
    if c_in != w_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape(),
            right: weights.shape(),
        });
    }
    check_bias("conv2d", bias, c_out)?;
    let g = Geometry::new(c_in, h, w, k, stride);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut out = vec![T::zero(); n * c_out * cols];
    let in_plane = c_in * h * w;
    for b in 0..n {
        im2col(
            &input.data()[b * in_plane..(b + 1) * in_plane],
            &g,
            &mut col,
        );
        let dst = &mut out[b * c_out * cols..(b + 1) * c_out * cols];
        matmul(
            c_out,
            rows,
            cols,
            weights.data(),
            false,
            &col,
            false,
            T::zero(),
            dst,
        );
        add_bias(dst, bias, cols);
    }
    Tensor::new([n, c_out, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d`] given the output gradient. `need_input` skips the
/// input gradient when the caller has no use for it.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let k = weights.h();
    let [n, c_in, h, w] = input.shape();
    let c_out = weights.n();
    let g = Geometry::new(c_in, h, w, k, stride);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut dcol = vec![T::zero(); rows * cols];
    let mut dw = vec![T::zero(); weights.len()];
    let mut dx = if need_input {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    let in_plane = c_in * h * w;
    for b in 0..n {
        let dy = &grad_out.data()[b * c_out * cols..(b + 1) * c_out * cols];
        im2col(
            &input.data()[b * in_plane..(b + 1) * in_plane],
            &g,
            &mut col,
        );
        matmul(c_out, cols, rows, dy, false, &col, true, T::one(), &mut dw);
        if need_input {
            matmul(
                rows,
                c_out,
                cols,
                weights.data(),
                true,
                dy,
                false,
                T::zero(),
                &mut dcol,
            );
            col2im(&dcol, &g, &mut dx[b * in_plane..(b + 1) * in_plane]);
        }
    }
    ConvGrads {
        input: need_input.then(|| Tensor::new(input.shape(), dx).expect("shape")),
        weights: Tensor::new(weights.shape(), dw).expect("shape"),
        bias: bias_grad(grad_out),
    }
}

/// Transposed convolution: the adjoint of a SAME, stride-`stride` [`conv2d`]
/// mapping `stride·h × stride·w` onto `h × w`, plus bias.
pub fn conv2d_transpose<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
) -> Result<Tensor<T>> {
    let k = check_kernel("conv2d_transpose", weights, stride)?;
    let [n, c_in, h, w] = input.shape();
    let [w_in, c_out, _, _] = weights.shape();
    if c_in != w_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d_transpose",
            left: input.shape(),
            right: weights.shape(),
        });
    }
    check_bias("conv2d_transpose", bias, c_out)?;
    let g = Geometry::new(c_out, h * stride, w * stride, k, stride);
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); rows * cols];
    let out_plane = c_out * g.in_h * g.in_w;
    let mut out = vec![T::zero(); n * out_plane];
    for b in 0..n {
        let x = &input.data()[b * c_in * cols..(b + 1) * c_in * cols];
        matmul(
            rows,
            c_in,
            cols,
            weights.data(),
            true,
            x,
            false,
            T::zero(),
            &mut col,
        );
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        col2im(&col, &g, dst);
        add_bias(dst, bias, g.in_h * g.in_w);
    }
    Tensor::new([n, c_out, g.in_h, g.in_w], out)
}

pub fn conv2d_transpose_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let k = weights.h();
    let [n, c_in, h, w] = input.shape();
    let c_out = weights.c();
    let g = Geometry::new(c_out, h * stride, w * stride, k, stride);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut dcol = vec![T::zero(); rows * cols];
    let mut dw = vec![T::zero(); weights.len()];
    let mut dx = if need_input {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    let out_plane = c_out * g.in_h * g.in_w;
    for b in 0..n {
        im2col(
            &grad_out.data()[b * out_plane..(b + 1) * out_plane],
            &g,
            &mut dcol,
        );
        let x = &input.data()[b * c_in * cols..(b + 1) * c_in * cols];
        matmul(c_in, cols, rows, x, false, &dcol, true, T::one(), &mut dw);
        if need_input {
            let dst = &mut dx[b * c_in * cols..(b + 1) * c_in * cols];
            matmul(
                c_in,
                rows,
                cols,
                weights.data(),
                false,
                &dcol,
                false,
                T::zero(),
                dst,
            );
        }
    }
    ConvGrads {
        input: need_input.then(|| Tensor::new(input.shape(), dx).expect("shape")),
        weights: Tensor::new(weights.shape(), dw).expect("shape"),
        bias: bias_grad(grad_out),
    }
}
