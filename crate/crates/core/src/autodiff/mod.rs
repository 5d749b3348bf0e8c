//! Reverse-mode differentiation over the tensor kernels, finite-difference
//! verification and global-norm gradient clipping.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, MIN_SAMPLES};
pub use tape::{Gradients, Tape, Var};

use indexmap::IndexMap;

use crate::tensor::{Scalar, Tensor};

/// Parameter name → gradient, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientSet<T: Scalar = f32> {
    grads: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn from_map(grads: IndexMap<String, Tensor<T>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.grads.insert(name.into(), grad);
    }

    /// Name of the first gradient holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, g)| !g.is_finite()).map(|(n, _)| n)
    }

    /// `sqrt(Σ‖g‖²)` over the entries accepted by `select`.
    pub fn global_norm(&self, select: impl Fn(&str) -> bool) -> f64 {
        self.iter()
            .filter(|(n, _)| select(n))
            .map(|(_, g)| g.sum_sq())
            .sum::<f64>()
            .sqrt()
    }
}

/// Rescales the selected gradients jointly so their global norm is at most
/// `max_norm`; unselected entries pass through untouched. Returns the
/// clipped set and the pre-clip norm.
///
/// A relative slack of 1e-6 absorbs rounding in the rescaled values, so a
/// second application is an exact no-op.
pub fn clip_by_global_norm<T: Scalar>(
    grads: &GradientSet<T>,
    max_norm: f64,
    select: impl Fn(&str) -> bool,
) -> (GradientSet<T>, f64) {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm(&select);
    if norm <= max_norm * (1.0 + 1e-6) {
        return (grads.clone(), norm);
    }
    let factor = T::of(max_norm / norm);
    let clipped = grads
        .grads
        .iter()
        .map(|(n, g)| {
            let g = if select(n) {
                g.scale(factor)
            } else {
                g.clone()
            };
            (n.clone(), g)
        })
        .collect();
    (GradientSet { grads: clipped }, norm)
}
