//! Multi-scale training loss and the PSNR / SSIM image metrics.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-scale loss weights, finest scale first.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub kappa: Vec<f64>,
}

impl LossConfig {
    pub fn uniform(n_scales: usize) -> Self {
        Self {
            kappa: vec![1.0; n_scales],
        }
    }

    pub fn n_scales(&self) -> usize {
        self.kappa.len()
    }
}

/// `Σ_i κ_i / N_i · ‖outputs_i − targets_i‖²`, with `N_i` the element count
/// of scale `i`.
pub fn multiscale_l2_loss<T: Scalar>(
    tape: &Tape<T>,
    outputs: &[Var<T>],
    targets: &[Var<T>],
    cfg: &LossConfig,
) -> Result<Var<T>> {
    if outputs.len() != targets.len() || outputs.len() != cfg.n_scales() {
        return Err(Error::invalid(
            "multiscale_l2_loss",
            format!(
                "{} outputs, {} targets, {} weights",
                outputs.len(),
                targets.len(),
                cfg.n_scales()
            ),
        ));
    }
    if outputs.is_empty() {
        return Err(Error::invalid("multiscale_l2_loss", "no scales"));
    }
    if let Some(k) = cfg.kappa.iter().find(|k| k.is_nan() || **k <= 0.0) {
        return Err(Error::invalid(
            "multiscale_l2_loss",
            format!("scale weight {k} is not positive"),
        ));
    }
    let mut total: Option<Var<T>> = None;
    for ((o, t), &k) in outputs.iter().zip(targets).zip(&cfg.kappa) {
        let d = tape.sub(o, t)?;
        let term = tape.scale(&tape.mean(&tape.mul(&d, &d)?)?, k)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(&acc, &term)?,
        });
    }
    Ok(total.expect("nonempty"))
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Mean squared error over all elements after clamping both images to [0, 1].
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("mse", a, b)?;
    let clamp = |v: T| v.as_f64().clamp(0.0, 1.0);
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = clamp(x) - clamp(y);
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(1 / MSE)` over all channels jointly, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let src = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = g
                .iter()
                .zip(&src[c..c + SSIM_WINDOW])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = g
                .iter()
                .enumerate()
                .map(|(i, a)| a * rows[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

fn grayscale<T: Scalar>(img: &Tensor<T>, n: usize) -> Vec<f64> {
    let [_, c, h, w] = img.shape();
    let plane = h * w;
    let item = &img.data()[n * c * plane..(n + 1) * c * plane];
    (0..plane)
        .map(|i| (0..c).map(|ch| item[ch * plane + i].as_f64()).sum::<f64>() / c as f64)
        .collect()
}

/// Structural similarity on the channel-mean grayscale image with an 11×11
/// Gaussian window (σ = 1.5), averaged over valid window positions and then
/// over the batch.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let [n, _, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for i in 0..n {
        let (x, y) = (grayscale(a, i), grayscale(b, i));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &g));
        let mut sum = 0.0;
        for j in 0..mx.len() {
            let (ux, uy) = (mx[j], my[j]);
            let vx = sxx[j] - ux * ux;
            let vy = syy[j] - uy * uy;
            let cov = sxy[j] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(0.0, 1.0))
    }

    fn loss_value(outputs: &[Tensor<f64>], targets: &[Tensor<f64>]) -> f64 {
        let t = Tape::no_grad();
        let o: Vec<_> = outputs.iter().map(|x| t.constant(x.clone())).collect();
        let g: Vec<_> = targets.iter().map(|x| t.constant(x.clone())).collect();
        multiscale_l2_loss(&t, &o, &g, &LossConfig::uniform(o.len()))
            .unwrap()
            .value()
            .data()[0]
    }

    #[test]
    fn loss_closed_forms() {
        let a = random([1, 3, 4, 4], 1);
        assert_eq!(
            loss_value(std::slice::from_ref(&a), std::slice::from_ref(&a)),
            0.0
        );
        let zero = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let mut one_off = zero.clone();
        one_off.data_mut()[2] = 0.5;
        assert_eq!(loss_value(&[one_off], &[zero]), 0.0625);
    }

    #[test]
    fn loss_is_symmetric_and_rejects_mismatches() {
        let (a, b) = (random([1, 3, 4, 4], 2), random([1, 3, 4, 4], 3));
        let (c, d) = (random([1, 3, 2, 2], 4), random([1, 3, 2, 2], 5));
        let ab = loss_value(&[a.clone(), c.clone()], &[b.clone(), d.clone()]);
        let ba = loss_value(&[b.clone(), d.clone()], &[a.clone(), c.clone()]);
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
        let t = Tape::<f64>::no_grad();
        let va = t.constant(a);
        let vc = t.constant(c);
        assert!(multiscale_l2_loss(
            &t,
            std::slice::from_ref(&va),
            std::slice::from_ref(&vc),
            &LossConfig::uniform(1)
        )
        .is_err());
        assert!(
            multiscale_l2_loss(&t, std::slice::from_ref(&va), &[], &LossConfig::uniform(1))
                .is_err()
        );
        assert!(multiscale_l2_loss(
            &t,
            std::slice::from_ref(&va),
            std::slice::from_ref(&va),
            &LossConfig { kappa: vec![0.0] }
        )
        .is_err());
    }

    #[test]
    fn loss_gradient_is_closed_form() {
        let o = random([1, 2, 3, 3], 6);
        let g = random([1, 2, 3, 3], 7);
        let kappa = 0.7;
        let tape = Tape::new();
        let ov = tape.param("o", o.clone());
        let gv = tape.constant(g.clone());
        let loss = multiscale_l2_loss(
            &tape,
            std::slice::from_ref(&ov),
            &[gv],
            &LossConfig { kappa: vec![kappa] },
        )
        .unwrap();
        let grads = tape.backward(&loss).unwrap();
        let got = grads.get(&ov).unwrap();
        let n = o.len() as f64;
        for ((&d, &x), &y) in got.data().iter().zip(o.data()).zip(g.data()) {
            assert!((d - 2.0 * kappa * (x - y) / n).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_closed_forms() {
        let a = random([1, 3, 8, 8], 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let z = Tensor::<f64>::zeros([1, 3, 4, 4]);
        let p = Tensor::<f64>::full([1, 3, 4, 4], 0.1);
        assert!((psnr(&z, &p).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&z, &Tensor::zeros([1, 3, 4, 5])).is_err());
    }

    #[test]
    fn psnr_matches_direct_recomputation() {
        let a = random([1, 3, 9, 7], 9);
        let b = random([1, 3, 9, 7], 10);
        let mse = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / a.len() as f64;
        let expected = -10.0 * mse.log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn psnr_clamps_inputs() {
        let a = Tensor::<f64>::full([1, 3, 2, 2], 1.7);
        let b = Tensor::<f64>::full([1, 3, 2, 2], 1.0);
        assert_eq!(psnr(&a, &b).unwrap(), PSNR_CAP_DB);
    }

    /// Direct per-window statistics with the 2-D kernel, no separability.
    #[allow(clippy::needless_range_loop)]
    fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let [_, c, h, w] = a.shape();
        let gray = |t: &Tensor<f64>, r: usize, q: usize| {
            (0..c).map(|ch| t.at([0, ch, r, q])).sum::<f64>() / c as f64
        };
        let k = 11;
        let mut kernel = vec![vec![0.0; k]; k];
        let mut total = 0.0;
        for (i, row) in kernel.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                total += *v;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let mut acc = 0.0;
        let mut count = 0.0;
        for r in 0..=h - k {
            for q in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = kernel[i][j] / total;
                        mx += wt * gray(a, r + i, q + j);
                        my += wt * gray(b, r + i, q + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = kernel[i][j] / total;
                        let (x, y) = (gray(a, r + i, q + j) - mx, gray(b, r + i, q + j) - my);
                        vx += wt * x * x;
                        vy += wt * y * y;
                        cxy += wt * x * y;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let a = random([1, 3, 16, 14], 11);
        let b = a
            .zip_map(&random([1, 3, 16, 14], 12), "t", |x, y| 0.7 * x + 0.3 * y)
            .unwrap();
        let got = ssim(&a, &b).unwrap();
        assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6, "{got}");
        assert!(got < 1.0 && got > -1.0);
    }

    #[test]
    fn ssim_identity_and_continuity() {
        let a = random([1, 3, 12, 12], 13);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let base = Tensor::<f64>::full([1, 3, 12, 12], 0.5);
        let mut prev = -1.0;
        for d in [1e-1, 1e-2, 1e-3] {
            let s = ssim(&base, &Tensor::full([1, 3, 12, 12], 0.5 + d)).unwrap();
            assert!(s < 1.0 && s > prev);
            prev = s;
        }
        assert!(prev > 0.999);
        assert!(ssim(
            &Tensor::<f64>::zeros([1, 3, 10, 20]),
            &Tensor::zeros([1, 3, 10, 20])
        )
        .is_err());
    }
}
