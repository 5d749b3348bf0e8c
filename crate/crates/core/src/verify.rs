//! Named finite-difference checks covering every differentiable building
//! block, from single kernels up to a complete tiny network.

use indexmap::IndexMap;

use crate::autodiff::{grad_check, GradCheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::init::Rng;
use crate::metrics::{multiscale_l2_loss, LossConfig};
use crate::model::{build_pyramid, Srn, SrnConfig, Variant};
use crate::nn::{
    init_params, ConvLayer, ConvLstm, DBlock, EBlock, LstmState, ParamSpec, Params, ResBlock,
};
use crate::tensor::{Shape, Tensor};

pub const GRADCHECK_EPS: f64 = 1e-3;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const GRADCHECK_CASES: [&str; 9] = [
    "conv2d",
    "conv2d_transpose",
    "bilinear_resize",
    "resblock",
    "eblock",
    "dblock",
    "convlstm",
    "loss",
    "srn",
];

#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl CaseOutcome {
    pub fn passed(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

type Inputs = Vec<(String, Tensor<f64>)>;

fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Xavier weights with nonzero random biases, so no coordinate sits at a
/// vanishing derivative.
fn block_params(specs: &[ParamSpec], rng: &mut Rng) -> Inputs {
    init_params::<f64>(specs, rng)
        .into_iter()
        .map(|(name, t)| {
            let t = if name.ends_with(".b") {
                uniform(t.shape(), -0.5, 0.5, rng)
            } else {
                t
            };
            (name, t)
        })
        .collect()
}

/// Reduces `y` to a scalar with a fixed non-constant weighting.
fn project(tape: &Tape<f64>, y: &Var<f64>) -> Result<Var<f64>> {
    if y.value().len() == 1 {
        return Ok(y.clone());
    }
    let probe = Tensor::from_fn(y.shape(), |[a, b, c, d]| {
        ((a * 7 + b * 5 + c * 3 + d) as f64 * 0.37 + 0.5).sin()
    });
    tape.sum(&tape.mul(y, &tape.constant(probe))?)
}

fn check<F>(params: Inputs, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &Params<f64>) -> Result<Var<f64>>,
{
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    grad_check(
        &params,
        |tape, vars| {
            let map: IndexMap<String, Var<f64>> =
                names.iter().cloned().zip(vars.iter().cloned()).collect();
            let y = f(tape, &Params::from_vars(map))?;
            project(tape, &y)
        },
        GRADCHECK_EPS,
        seed,
    )
}

fn layer_case(declare: impl Fn(&mut Vec<ParamSpec>), input: Shape, seed: u64) -> Inputs {
    let mut rng = Rng::new(seed);
    let mut specs = Vec::new();
    declare(&mut specs);
    let mut params = block_params(&specs, &mut rng);
    params.push(("input".into(), uniform(input, -1.0, 1.0, &mut rng)));
    params
}

/// Runs one named check at 64-bit precision.
pub fn run_gradcheck_case(name: &str) -> Result<CaseOutcome> {
    let (name, report) = match name {
        "conv2d" => {
            let conv = ConvLayer::new("conv", 3, 4, 3, 2);
            let params = layer_case(|s| conv.declare(s), [2, 3, 7, 6], 101);
            (
                "conv2d",
                check(params, 1, |t, p| conv.forward(t, p, p.get("input")?))?,
            )
        }
        "conv2d_transpose" => {
            let up = ConvLayer::transposed("up", 4, 2, 4);
            let params = layer_case(|s| up.declare(s), [1, 4, 3, 4], 102);
            (
                "conv2d_transpose",
                check(params, 2, |t, p| up.forward(t, p, p.get("input")?))?,
            )
        }
        "bilinear_resize" => {
            let params = layer_case(|_| {}, [1, 2, 5, 7], 103);
            (
                "bilinear_resize",
                check(params, 3, |t, p| t.resize(p.get("input")?, 9, 4))?,
            )
        }
        "resblock" => {
            let block = ResBlock::new("res", 4, 3, true);
            let params = layer_case(|s| block.declare(s), [1, 4, 6, 6], 104);
            (
                "resblock",
                check(params, 4, |t, p| block.forward(t, p, p.get("input")?))?,
            )
        }
        "eblock" => {
            let block = EBlock::new("enc", 3, 3, 1, true);
            let params = layer_case(|s| block.declare(s), [1, 3, 6, 6], 105);
            (
                "eblock",
                check(params, 5, |t, p| block.forward(t, p, p.get("input")?))?,
            )
        }
        "dblock" => {
            let block = DBlock::new("dec", 4, 3, 1, true);
            let params = layer_case(|s| block.declare(s), [1, 4, 3, 3], 106);
            (
                "dblock",
                check(params, 6, |t, p| block.forward(t, p, p.get("input")?))?,
            )
        }
        "convlstm" => {
            let cell = ConvLstm::new("lstm", 3, 3);
            let mut params = layer_case(|s| cell.declare(s), [1, 3, 4, 4], 107);
            let mut rng = Rng::new(207);
            params.push(("h".into(), uniform([1, 3, 4, 4], -0.9, 0.9, &mut rng)));
            params.push(("c".into(), uniform([1, 3, 4, 4], -1.0, 1.0, &mut rng)));
            let report = check(params, 7, |t, p| {
                let state = LstmState {
                    h: p.get("h")?.clone(),
                    c: p.get("c")?.clone(),
                };
                let (next, _) = cell.step(t, p, p.get("input")?, &state)?;
                t.add(&project(t, &next.h)?, &t.scale(&project(t, &next.c)?, 0.5)?)
            })?;
            ("convlstm", report)
        }
        "loss" => {
            let mut rng = Rng::new(108);
            let shapes = [[2, 3, 8, 8], [2, 3, 4, 4], [2, 3, 2, 2]];
            let params: Inputs = shapes
                .iter()
                .enumerate()
                .map(|(i, &s)| (format!("out{i}"), uniform(s, -0.2, 1.2, &mut rng)))
                .collect();
            let targets: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|&s| uniform(s, 0.0, 1.0, &mut rng))
                .collect();
            let cfg = LossConfig {
                kappa: vec![1.0, 0.5, 0.25],
            };
            let report = check(params, 8, |t, p| {
                let outs = (0..3)
                    .map(|i| p.get(&format!("out{i}")).cloned())
                    .collect::<Result<Vec<_>>>()?;
                let tgts: Vec<_> = targets.iter().map(|x| t.constant(x.clone())).collect();
                multiscale_l2_loss(t, &outs, &tgts, &cfg)
            })?;
            ("loss", report)
        }
        "srn" => {
            let cfg = SrnConfig::new(Variant::SrEdrb(1))
                .with_kernel(3)
                .with_base_channels(2);
            let srn = Srn::new(cfg)?;
            let mut rng = Rng::new(1);
            let params = block_params(&srn.param_specs(), &mut rng);
            let image = uniform([1, 3, 8, 8], 0.0, 1.0, &mut rng);
            let pyramid = build_pyramid(&image, cfg.n_scales)?;
            let report = check(params, 9, |t, p| {
                let inputs: Vec<_> = pyramid
                    .levels
                    .iter()
                    .map(|l| t.constant(l.clone()))
                    .collect();
                let outs = srn.forward(t, p, &inputs)?;
                let mut total = project(t, &outs[0])?;
                for o in &outs[1..] {
                    total = t.add(&total, &project(t, o)?)?;
                }
                Ok(total)
            })?;
            ("srn", report)
        }
        other => {
            return Err(Error::invalid(
                "gradcheck",
                format!(
                    "unknown module `{other}` (expected one of {})",
                    GRADCHECK_CASES.join(", ")
                ),
            ))
        }
    };
    Ok(CaseOutcome { name, report })
}

pub fn run_gradcheck_suite() -> Result<Vec<CaseOutcome>> {
    GRADCHECK_CASES
        .iter()
        .map(|c| run_gradcheck_case(c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        for outcome in run_gradcheck_suite().unwrap() {
            assert!(outcome.passed(), "{}: {:?}", outcome.name, outcome.report);
            assert!(outcome.report.coordinates > 0);
        }
    }

    #[test]
    fn unknown_case_is_rejected() {
        assert!(matches!(
            run_gradcheck_case("lstm2"),
            Err(Error::InvalidArgument { .. })
        ));
    }
}
