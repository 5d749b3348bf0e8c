use indexmap::IndexMap;

use crate::autodiff::GradientSet;
use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `weights`, `t = 0`.
    pub fn fresh(weights: &ModelWeights<T>) -> Self {
        let zeros: IndexMap<String, Tensor<T>> = weights
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update of every parameter that has a gradient. Gradients are
/// checked for finiteness before anything is modified.
pub fn adam_step<T: Scalar>(
    weights: &mut ModelWeights<T>,
    grads: &GradientSet<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    for (name, g) in grads.iter() {
        let shape = weights
            .get(name)
            .ok_or_else(|| {
                Error::invalid(
                    "adam_step",
                    format!("gradient for unknown parameter `{name}`"),
                )
            })?
            .shape();
        if g.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: shape,
                right: g.shape(),
            });
        }
        for moments in [&state.m, &state.v] {
            if moments.get(name).is_some_and(|m| m.shape() != shape) {
                return Err(Error::invalid(
                    "adam_step",
                    format!("optimizer state for `{name}` has the wrong shape"),
                ));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (name, g) in grads.iter() {
        let shape = g.shape();
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape));
        let theta = weights.get_mut(name).expect("checked above");
        for (((p, m), v), &g) in theta
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            let g = g.as_f64();
            let m1 = BETA1 * m.as_f64() + (1.0 - BETA1) * g;
            let v1 = BETA2 * v.as_f64() + (1.0 - BETA2) * g * g;
            *m = T::of(m1);
            *v = T::of(v1);
            let m_hat = m1 / c1;
            let v_hat = v1 / c2;
            *p = T::of(p.as_f64() - lr * m_hat / (v_hat.sqrt() + EPSILON));
        }
    }
    Ok(())
}
