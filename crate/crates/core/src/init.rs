//! Seeded randomness and weight initialization.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Shape, Tensor};

/// Deterministic generator (ChaCha8). The same seed and stream produce the
/// same sequence on every platform.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent sub-stream `stream` of `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self(inner)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.0.gen_range(lo..=hi)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }
}

/// Xavier/Glorot uniform init for a `(out, in, k, k)` kernel:
/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
/// `fan_in = in·k·k`, `fan_out = out·k·k`.
pub fn xavier_init<T: Scalar>(shape: Shape, rng: &mut Rng) -> Tensor<T> {
    let [out, inp, kh, kw] = shape;
    let receptive = (kh * kw) as f64;
    let bound = (6.0 / ((inp as f64 + out as f64) * receptive)).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.uniform(-bound, bound)))
}
