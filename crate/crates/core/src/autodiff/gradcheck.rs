use crate::error::{Error, Result};
use crate::init::Rng;
use crate::tensor::Tensor;

use super::{Tape, Var};

/// Coordinates sampled per parameter (all of them when the tensor is smaller).
pub const MIN_SAMPLES: usize = 100;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)` over all checked coordinates.
    pub max_rel_error: f64,
    /// Parameter and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares [`Tape::backward`] against central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps` in 64-bit precision.
///
/// `builder` maps the parameter variables to a scalar and must be
/// deterministic. ReLU activation patterns are frozen at the base point
/// during the perturbed evaluations, so a step that would cross a kink
/// still measures the derivative of the piece containing `p`.
pub fn grad_check<F>(
    params: &[(String, Tensor<f64>)],
    builder: F,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::<f64>::new();
    tape.record_relu_masks();
    let vars: Vec<Var<f64>> = params
        .iter()
        .map(|(n, t)| tape.param(n.clone(), t.clone()))
        .collect();
    let loss = builder(&tape, &vars)?;
    if !loss.value().is_finite() {
        return Err(Error::NonFinite("grad_check forward".into()));
    }
    let grads = tape.backward(&loss)?;
    let masks = tape.take_relu_masks();

    let eval = |perturbed: &[(String, Tensor<f64>)]| -> Result<f64> {
        let t = Tape::<f64>::no_grad();
        t.replay_relu_masks(masks.clone());
        let vs: Vec<Var<f64>> = perturbed
            .iter()
            .map(|(n, p)| t.param(n.clone(), p.clone()))
            .collect();
        let v = builder(&t, &vs)?.value().data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check forward".into()));
        }
        Ok(v)
    };

    let mut rng = Rng::new(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
    };
    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    for (pi, (name, value)) in params.iter().enumerate() {
        let analytic = grads
            .params()
            .get(name)
            .ok_or_else(|| Error::invalid("grad_check", format!("no gradient for `{name}`")))?
            .clone();
        let mut coords: Vec<usize> = (0..value.len()).collect();
        if coords.len() > MIN_SAMPLES {
            rng.shuffle(&mut coords);
            coords.truncate(MIN_SAMPLES);
        }
        for idx in coords {
            let orig = value.data()[idx];
            work[pi].1.data_mut()[idx] = orig + eps;
            let plus = eval(&work)?;
            work[pi].1.data_mut()[idx] = orig - eps;
            let minus = eval(&work)?;
            work[pi].1.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((name.clone(), idx));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
