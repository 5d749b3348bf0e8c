//! Separable bilinear resampling with half-pixel centers
//! (`align_corners = false`). Source coordinates falling outside the image
//! are clamped to the border sample.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            Tap {
                lo,
                hi,
                frac: T::of(frac),
            }
        })
        .collect()
}

#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    if t == T::zero() {
        a
    } else {
        a + (b - a) * t
    }
}

pub fn bilinear_resize<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "bilinear_resize",
            format!("target size {out_h}x{out_w}"),
        ));
    }
    let [n, c, h, w] = input.shape();
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let row_taps = taps::<T>(h, out_h);
    let col_taps = taps::<T>(w, out_w);
    let mut tmp = vec![T::zero(); h * out_w];
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks_exact(h * w) {
        for r in 0..h {
            let src = &plane[r * w..(r + 1) * w];
            for (dst, t) in tmp[r * out_w..(r + 1) * out_w].iter_mut().zip(&col_taps) {
                *dst = lerp(src[t.lo], src[t.hi], t.frac);
            }
        }
        for t in &row_taps {
            let (a, b) = (
                &tmp[t.lo * out_w..(t.lo + 1) * out_w],
                &tmp[t.hi * out_w..(t.hi + 1) * out_w],
            );
            out.extend(a.iter().zip(b).map(|(&x, &y)| lerp(x, y, t.frac)));
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

/// Adjoint of [`bilinear_resize`] from `out` back to an `in_h × in_w` grid.
pub fn bilinear_resize_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Tensor<T> {
    let [n, c, out_h, out_w] = grad_out.shape();
    if (in_h, in_w) == (out_h, out_w) {
        return grad_out.clone();
    }
    let row_taps = taps::<T>(in_h, out_h);
    let col_taps = taps::<T>(in_w, out_w);
    let mut tmp = vec![T::zero(); in_h * out_w];
    let mut out = vec![T::zero(); n * c * in_h * in_w];
    for (g, dst) in grad_out
        .data()
        .chunks_exact(out_h * out_w)
        .zip(out.chunks_exact_mut(in_h * in_w))
    {
        tmp.fill(T::zero());
        for (o, t) in row_taps.iter().enumerate() {
            let src = &g[o * out_w..(o + 1) * out_w];
            for (j, &v) in src.iter().enumerate() {
                tmp[t.lo * out_w + j] = tmp[t.lo * out_w + j] + v * (T::one() - t.frac);
                if t.frac != T::zero() {
                    tmp[t.hi * out_w + j] = tmp[t.hi * out_w + j] + v * t.frac;
                }
            }
        }
        for r in 0..in_h {
            let src = &tmp[r * out_w..(r + 1) * out_w];
            let row = &mut dst[r * in_w..(r + 1) * in_w];
            for (&v, t) in src.iter().zip(&col_taps) {
                row[t.lo] = row[t.lo] + v * (T::one() - t.frac);
                if t.frac != T::zero() {
                    row[t.hi] = row[t.hi] + v * t.frac;
                }
            }
        }
    }
    Tensor::new([n, c, in_h, in_w], out).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f32>::from_fn([1, 2, 3, 4], |[_, c, h, w]| (c * 12 + h * 4 + w) as f32);
        assert_eq!(bilinear_resize(&x, 3, 4).unwrap(), x);
    }

    #[test]
    fn constants_stay_constant() {
        let x = Tensor::<f32>::full([1, 3, 8, 8], 0.37);
        for (h, w) in [(1, 1), (3, 5), (4, 4), (16, 16), (13, 29)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.37), "{h}x{w}");
        }
    }

    #[test]
    fn checkerboard_upsample_matches_hand_values() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        // Source coordinate per output index: max(0,(o+0.5)/2-0.5) = 0, 0.25, 0.75, 1
        let coord = [0.0, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let (r, c) = (coord[i], coord[j]);
                // f(r,c) on the 2x2 grid = r(1-c) + c(1-r)
                let expected = r * (1.0 - c) + c * (1.0 - r);
                assert!((y.at([0, 0, i, j]) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn halving_even_sizes_averages_pairs() {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |[_, _, h, w]| (h * 4 + w) as f64);
        let y = bilinear_resize(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn backward_is_adjoint() {
        let x = Tensor::<f64>::from_fn([2, 2, 5, 3], |[n, c, h, w]| {
            ((n * 7 + c * 5 + h * 3 + w) as f64).sin()
        });
        let g = Tensor::<f64>::from_fn([2, 2, 3, 7], |[n, c, h, w]| {
            ((n + c * 2 + h * 5 + w * 3) as f64).cos()
        });
        let lhs = bilinear_resize(&x, 3, 7).unwrap().dot(&g);
        let rhs = x.dot(&bilinear_resize_backward(&g, 5, 3));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
