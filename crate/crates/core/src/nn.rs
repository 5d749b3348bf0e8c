//! Network building blocks: ResBlock, EBlock, DBlock, InBlock, OutBlock and
//! the recurrent bottleneck cells.
//!
//! A block is a parameter *layout*: it knows the names and shapes of its
//! tensors and how to run them on a [`Tape`]. The tensors themselves live in
//! a [`Params`] binding, so the same layout serves training, inference and
//! parameter counting. Every conv layer `name` owns `name.w` and `name.b`.

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init::{xavier_init, Rng};
use crate::tensor::{Scalar, Shape, Tensor};

/// Channels of an RGB image.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Xavier,
    /// Xavier applied separately to `n` equal blocks along the output axis,
    /// one per recurrent gate.
    XavierGates(usize),
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn initialize<T: Scalar>(&self, rng: &mut Rng) -> Tensor<T> {
        match self.init {
            Init::Zeros => Tensor::zeros(self.shape),
            Init::Xavier => xavier_init(self.shape, rng),
            Init::XavierGates(gates) => {
                let [out, inp, kh, kw] = self.shape;
                let per = out / gates;
                let mut data = Vec::with_capacity(self.numel());
                for _ in 0..gates {
                    data.extend(xavier_init::<T>([per, inp, kh, kw], rng).into_data());
                }
                Tensor::new(self.shape, data).expect("gate shapes")
            }
        }
    }
}

/// Parameter tensors bound to a tape, looked up by name.
pub struct Params<T: Scalar> {
    vars: IndexMap<String, Var<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn bind<'a>(
        tape: &Tape<T>,
        tensors: impl IntoIterator<Item = (&'a String, &'a Tensor<T>)>,
    ) -> Self {
        let vars = tensors
            .into_iter()
            .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
            .collect();
        Self { vars }
    }

    /// Wraps variables already registered on a tape.
    pub fn from_vars(vars: IndexMap<String, Var<T>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::invalid("params", format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }
}

fn check_channels(op: &'static str, x: &Var<impl Scalar>, expected: usize) -> Result<()> {
    if x.shape()[1] != expected {
        return Err(Error::invalid(
            op,
            format!(
                "expected {expected} input channels, got shape {:?}",
                x.shape()
            ),
        ));
    }
    Ok(())
}

/// One convolution (or stride-`stride` transposed convolution) with bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub transpose: bool,
}

impl ConvLayer {
    pub fn new(
        name: impl Into<String>,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Self {
            name: name.into(),
            in_c,
            out_c,
            k,
            stride,
            transpose: false,
        }
    }

    pub fn transposed(name: impl Into<String>, in_c: usize, out_c: usize, k: usize) -> Self {
        Self {
            transpose: true,
            stride: 2,
            ..Self::new(name, in_c, out_c, k, 2)
        }
    }

    pub fn weight_shape(&self) -> Shape {
        if self.transpose {
            [self.in_c, self.out_c, self.k, self.k]
        } else {
            [self.out_c, self.in_c, self.k, self.k]
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.w", self.name),
            shape: self.weight_shape(),
            init: Init::Xavier,
        });
        out.push(ParamSpec {
            name: format!("{}.b", self.name),
            shape: [self.out_c, 1, 1, 1],
            init: Init::Zeros,
        });
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        let w = p.get(&format!("{}.w", self.name))?;
        let b = p.get(&format!("{}.b", self.name))?;
        if self.transpose {
            tape.conv2d_transpose(x, w, Some(b), self.stride)
        } else {
            tape.conv2d(x, w, Some(b), self.stride)
        }
    }

    pub fn conv_count(&self) -> usize {
        1
    }
}

/// Two equal-width convolutions. With `identity` set this is the
/// normalization-free ResBlock `x + conv2(relu(conv1(x)))`; without it, the
/// plain pair `relu(conv2(relu(conv1(x))))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub identity: bool,
}

impl ResBlock {
    pub fn new(name: &str, channels: usize, k: usize, identity: bool) -> Self {
        Self {
            conv1: ConvLayer::new(format!("{name}.conv1"), channels, channels, k, 1),
            conv2: ConvLayer::new(format!("{name}.conv2"), channels, channels, k, 1),
            identity,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_c
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        self.conv1.declare(out);
        self.conv2.declare(out);
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels("resblock", x, self.channels())?;
        let h = tape.relu(&self.conv1.forward(tape, p, x)?)?;
        let y = self.conv2.forward(tape, p, &h)?;
        if self.identity {
            tape.add(x, &y)
        } else {
            tape.relu(&y)
        }
    }
}

fn res_chain(
    prefix: &str,
    count: usize,
    channels: usize,
    k: usize,
    identity: bool,
) -> Vec<ResBlock> {
    (0..count)
        .map(|i| ResBlock::new(&format!("{prefix}.res{i}"), channels, k, identity))
        .collect()
}

fn run_chain<T: Scalar>(
    blocks: &[ResBlock],
    tape: &Tape<T>,
    p: &Params<T>,
    x: Var<T>,
) -> Result<Var<T>> {
    blocks.iter().try_fold(x, |acc, b| b.forward(tape, p, &acc))
}

/// Stride-2 conv doubling the channels, ReLU, then a ResBlock chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EBlock {
    pub down: ConvLayer,
    pub res: Vec<ResBlock>,
}

impl EBlock {
    pub fn new(name: &str, in_c: usize, k: usize, num_res: usize, identity: bool) -> Self {
        Self {
            down: ConvLayer::new(format!("{name}.down"), in_c, 2 * in_c, k, 2),
            res: res_chain(name, num_res, 2 * in_c, k, identity),
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        self.down.declare(out);
        self.res.iter().for_each(|r| r.declare(out));
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels("eblock", x, self.down.in_c)?;
        let y = tape.relu(&self.down.forward(tape, p, x)?)?;
        run_chain(&self.res, tape, p, y)
    }

    pub fn conv_count(&self) -> usize {
        1 + 2 * self.res.len()
    }
}

/// ResBlock chain, then a stride-2 transposed conv halving the channels,
/// then ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DBlock {
    pub res: Vec<ResBlock>,
    pub up: ConvLayer,
}

impl DBlock {
    pub fn new(name: &str, channels: usize, k: usize, num_res: usize, identity: bool) -> Self {
        Self {
            res: res_chain(name, num_res, channels, k, identity),
            up: ConvLayer::transposed(format!("{name}.up"), channels, channels / 2, k),
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        self.res.iter().for_each(|r| r.declare(out));
        self.up.declare(out);
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        let c = x.shape()[1];
        if !c.is_multiple_of(2) {
            return Err(Error::invalid("dblock", format!("odd channel count {c}")));
        }
        check_channels("dblock", x, self.up.in_c)?;
        let y = run_chain(&self.res, tape, p, x.clone())?;
        tape.relu(&self.up.forward(tape, p, &y)?)
    }

    pub fn conv_count(&self) -> usize {
        1 + 2 * self.res.len()
    }
}

/// Stride-1 conv from the 6-channel input (blurry ⊕ previous estimate) to
/// the base width, ReLU, then a ResBlock chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InBlock {
    pub conv: ConvLayer,
    pub res: Vec<ResBlock>,
}

impl InBlock {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        num_res: usize,
        identity: bool,
    ) -> Self {
        Self {
            conv: ConvLayer::new(format!("{name}.conv"), in_c, out_c, k, 1),
            res: res_chain(name, num_res, out_c, k, identity),
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        self.conv.declare(out);
        self.res.iter().for_each(|r| r.declare(out));
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels("inblock", x, self.conv.in_c)?;
        let y = tape.relu(&self.conv.forward(tape, p, x)?)?;
        run_chain(&self.res, tape, p, y)
    }

    pub fn conv_count(&self) -> usize {
        1 + 2 * self.res.len()
    }
}

/// ResBlock chain, then a stride-1 conv to the output channels with no
/// activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutBlock {
    pub res: Vec<ResBlock>,
    pub conv: ConvLayer,
}

impl OutBlock {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        num_res: usize,
        identity: bool,
    ) -> Self {
        Self {
            res: res_chain(name, num_res, in_c, k, identity),
            conv: ConvLayer::new(format!("{name}.conv"), in_c, out_c, k, 1),
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        self.res.iter().for_each(|r| r.declare(out));
        self.conv.declare(out);
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels("outblock", x, self.conv.in_c)?;
        let y = run_chain(&self.res, tape, p, x.clone())?;
        self.conv.forward(tape, p, &y)
    }

    pub fn conv_count(&self) -> usize {
        1 + 2 * self.res.len()
    }
}

/// Recurrent state carried between scales. `h` and `c` always share a shape.
#[derive(Clone, Debug)]
pub struct LstmState<T: Scalar> {
    pub h: Var<T>,
    pub c: Var<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(tape: &Tape<T>, shape: Shape) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(shape)),
            c: tape.constant(Tensor::zeros(shape)),
        }
    }

    pub fn resize(&self, tape: &Tape<T>, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            h: tape.resize(&self.h, h, w)?,
            c: tape.resize(&self.c, h, w)?,
        })
    }
}

/// Convolutional LSTM without peepholes. Gate kernels are stored fused along
/// the output axis in the order input, forget, cell, output:
/// `name.wx` `(4C, C, k, k)` for the input path with bias `name.b` `(4C)`,
/// and `name.wh` `(4C, C, k, k)` for the hidden path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLstm {
    pub name: String,
    pub channels: usize,
    pub k: usize,
}

impl ConvLstm {
    pub const GATES: usize = 4;

    pub fn new(name: impl Into<String>, channels: usize, k: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            k,
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        let (c, k, g) = (self.channels, self.k, Self::GATES);
        for path in ["wx", "wh"] {
            out.push(ParamSpec {
                name: format!("{}.{path}", self.name),
                shape: [g * c, c, k, k],
                init: Init::XavierGates(g),
            });
        }
        out.push(ParamSpec {
            name: format!("{}.b", self.name),
            shape: [g * c, 1, 1, 1],
            init: Init::Zeros,
        });
    }

    /// One step: returns the new state and the output `g = h'`.
    pub fn step<T: Scalar>(
        &self,
        tape: &Tape<T>,
        p: &Params<T>,
        x: &Var<T>,
        state: &LstmState<T>,
    ) -> Result<(LstmState<T>, Var<T>)> {
        check_channels("convlstm", x, self.channels)?;
        if state.h.shape() != x.shape() || state.c.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "convlstm",
                left: x.shape(),
                right: state.h.shape(),
            });
        }
        let c = self.channels;
        let wx = p.get(&format!("{}.wx", self.name))?;
        let wh = p.get(&format!("{}.wh", self.name))?;
        let b = p.get(&format!("{}.b", self.name))?;
        let from_x = tape.conv2d(x, wx, Some(b), 1)?;
        let gates = tape.add(&from_x, &tape.conv2d(&state.h, wh, None, 1)?)?;
        let i = tape.sigmoid(&tape.slice_channels(&gates, 0, c)?)?;
        let f = tape.sigmoid(&tape.slice_channels(&gates, c, c)?)?;
        let g = tape.tanh(&tape.slice_channels(&gates, 2 * c, c)?)?;
        let o = tape.sigmoid(&tape.slice_channels(&gates, 3 * c, c)?)?;
        let c_new = tape.add(&tape.mul(&f, &state.c)?, &tape.mul(&i, &g)?)?;
        let h_new = tape.mul(&o, &tape.tanh(&c_new)?)?;
        Ok((
            LstmState {
                h: h_new.clone(),
                c: c_new,
            },
            h_new,
        ))
    }
}

/// Vanilla convolutional RNN cell `h' = tanh(Wx*x + Wh*h + b)`, output `h'`.
/// The cell-state slot of [`LstmState`] is carried through unchanged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvRnn {
    pub name: String,
    pub channels: usize,
    pub k: usize,
}

impl ConvRnn {
    pub fn new(name: impl Into<String>, channels: usize, k: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            k,
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamSpec>) {
        let (c, k) = (self.channels, self.k);
        for path in ["wx", "wh"] {
            out.push(ParamSpec {
                name: format!("{}.{path}", self.name),
                shape: [c, c, k, k],
                init: Init::Xavier,
            });
        }
        out.push(ParamSpec {
            name: format!("{}.b", self.name),
            shape: [c, 1, 1, 1],
            init: Init::Zeros,
        });
    }

    pub fn step<T: Scalar>(
        &self,
        tape: &Tape<T>,
        p: &Params<T>,
        x: &Var<T>,
        state: &LstmState<T>,
    ) -> Result<(LstmState<T>, Var<T>)> {
        check_channels("rnn", x, self.channels)?;
        if state.h.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "rnn",
                left: x.shape(),
                right: state.h.shape(),
            });
        }
        let wx = p.get(&format!("{}.wx", self.name))?;
        let wh = p.get(&format!("{}.wh", self.name))?;
        let b = p.get(&format!("{}.b", self.name))?;
        let pre = tape.add(
            &tape.conv2d(x, wx, Some(b), 1)?,
            &tape.conv2d(&state.h, wh, None, 1)?,
        )?;
        let h = tape.tanh(&pre)?;
        Ok((
            LstmState {
                h: h.clone(),
                c: state.c.clone(),
            },
            h,
        ))
    }
}

/// Allocates and initializes the tensors described by `specs`, in order.
pub fn init_params<T: Scalar>(specs: &[ParamSpec], rng: &mut Rng) -> IndexMap<String, Tensor<T>> {
    specs
        .iter()
        .map(|s| (s.name.clone(), s.initialize(rng)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn build<T: Scalar>(specs: &[ParamSpec], seed: u64) -> IndexMap<String, Tensor<T>> {
        init_params(specs, &mut Rng::new(seed))
    }

    fn run<T: Scalar, R>(
        weights: &IndexMap<String, Tensor<T>>,
        f: impl FnOnce(&Tape<T>, &Params<T>) -> Result<R>,
    ) -> Result<R> {
        let tape = Tape::no_grad();
        let p = Params::bind(&tape, weights);
        f(&tape, &p)
    }

    fn random_input(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn resblock_with_zero_weights_is_identity() {
        let block = ResBlock::new("r", 4, 3, true);
        let mut specs = Vec::new();
        block.declare(&mut specs);
        let zeros: IndexMap<String, Tensor<f64>> = specs
            .iter()
            .map(|s| (s.name.clone(), Tensor::zeros(s.shape)))
            .collect();
        let x = random_input([2, 4, 5, 6], 1);
        let y = run(&zeros, |t, p| block.forward(t, p, &t.constant(x.clone()))).unwrap();
        assert_eq!(y.value(), &x);
    }

    #[test]
    fn resblock_preserves_shape_and_rejects_wrong_width() {
        let block = ResBlock::new("r", 64, 5, true);
        let mut specs = Vec::new();
        block.declare(&mut specs);
        let w = build::<f32>(&specs, 2);
        let x = Tensor::<f32>::full([1, 64, 16, 16], 0.1);
        let y = run(&w, |t, p| block.forward(t, p, &t.constant(x.clone()))).unwrap();
        assert_eq!(y.shape(), [1, 64, 16, 16]);
        let bad = Tensor::<f32>::zeros([1, 32, 16, 16]);
        assert!(run(&w, |t, p| block.forward(t, p, &t.constant(bad))).is_err());
    }

    #[test]
    fn encoder_and_decoder_shapes_follow_the_layout() {
        let k = 3;
        let e1 = EBlock::new("e1", 32, k, 1, true);
        let e2 = EBlock::new("e2", 64, k, 1, true);
        let d1 = DBlock::new("d1", 128, k, 1, true);
        let d2 = DBlock::new("d2", 64, k, 1, true);
        let inb = InBlock::new("in", 6, 32, k, 1, true);
        let outb = OutBlock::new("out", 32, 3, k, 1, true);
        let mut specs = Vec::new();
        e1.declare(&mut specs);
        e2.declare(&mut specs);
        d1.declare(&mut specs);
        d2.declare(&mut specs);
        inb.declare(&mut specs);
        outb.declare(&mut specs);
        let w = build::<f32>(&specs, 3);
        run(&w, |t, p| {
            let x = t.constant(Tensor::zeros([1, 32, 64, 64]));
            let a = e1.forward(t, p, &x)?;
            assert_eq!(a.shape(), [1, 64, 32, 32]);
            let b = e2.forward(t, p, &a)?;
            assert_eq!(b.shape(), [1, 128, 16, 16]);
            let c = d1.forward(t, p, &t.constant(Tensor::zeros([1, 128, 16, 16])))?;
            assert_eq!(c.shape(), [1, 64, 32, 32]);
            let d = d2.forward(t, p, &c)?;
            assert_eq!(d.shape(), [1, 32, 64, 64]);
            let i = inb.forward(t, p, &t.constant(Tensor::zeros([1, 6, 64, 64])))?;
            assert_eq!(i.shape(), [1, 32, 64, 64]);
            let o = outb.forward(t, p, &i)?;
            assert_eq!(o.shape(), [1, 3, 64, 64]);
            assert!(d1
                .forward(t, p, &t.constant(Tensor::zeros([1, 127, 4, 4])))
                .is_err());
            assert!(inb
                .forward(t, p, &t.constant(Tensor::zeros([1, 3, 8, 8])))
                .is_err());
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn zero_input_with_zero_biases_gives_zero_eblock_output() {
        let e = EBlock::new("e", 4, 3, 2, true);
        let mut specs = Vec::new();
        e.declare(&mut specs);
        let w = build::<f64>(&specs, 4);
        let y = run(&w, |t, p| {
            e.forward(t, p, &t.constant(Tensor::zeros([1, 4, 6, 6])))
        })
        .unwrap();
        assert_eq!(y.shape(), [1, 8, 3, 3]);
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_layout_has_43_layers() {
        let n = 3;
        let total = InBlock::new("in", 6, 32, 5, n, true).conv_count()
            + EBlock::new("e1", 32, 5, n, true).conv_count()
            + EBlock::new("e2", 64, 5, n, true).conv_count()
            + DBlock::new("d1", 128, 5, n, true).conv_count()
            + DBlock::new("d2", 64, 5, n, true).conv_count()
            + OutBlock::new("out", 32, 3, 5, n, true).conv_count();
        assert_eq!(total, 42);
        assert_eq!(total + 1, 43);
    }

    #[test]
    fn convlstm_zero_everything_stays_zero() {
        let cell = ConvLstm::new("lstm", 4, 3);
        let mut specs = Vec::new();
        cell.declare(&mut specs);
        let zeros: IndexMap<String, Tensor<f64>> = specs
            .iter()
            .map(|s| (s.name.clone(), Tensor::zeros(s.shape)))
            .collect();
        let (state, out) = run(&zeros, |t, p| {
            let s = LstmState::zeros(t, [1, 4, 5, 5]);
            cell.step(t, p, &t.constant(Tensor::zeros([1, 4, 5, 5])), &s)
        })
        .unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
        assert!(state.c.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn convlstm_hidden_stays_inside_unit_interval() {
        let cell = ConvLstm::new("lstm", 4, 3);
        let mut specs = Vec::new();
        cell.declare(&mut specs);
        let w = build::<f64>(&specs, 5);
        let (state, _) = run(&w, |t, p| {
            let s = LstmState {
                h: t.constant(random_input([2, 4, 6, 6], 6).scale(3.0)),
                c: t.constant(random_input([2, 4, 6, 6], 7).scale(3.0)),
            };
            cell.step(
                t,
                p,
                &t.constant(random_input([2, 4, 6, 6], 8).scale(5.0)),
                &s,
            )
        })
        .unwrap();
        assert!(state.h.value().data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell_state() {
        let cell = ConvLstm::new("lstm", 2, 3);
        let mut specs = Vec::new();
        cell.declare(&mut specs);
        let mut w: IndexMap<String, Tensor<f64>> = specs
            .iter()
            .map(|s| (s.name.clone(), Tensor::zeros(s.shape)))
            .collect();
        // forget-gate bias block is channels [C, 2C)
        let b = w.get_mut("lstm.b").unwrap();
        b.data_mut()[2..4].fill(40.0);
        let c0 = random_input([1, 2, 4, 4], 9);
        let (state, _) = run(&w, |t, p| {
            let s = LstmState {
                h: t.constant(random_input([1, 2, 4, 4], 10)),
                c: t.constant(c0.clone()),
            };
            cell.step(t, p, &t.constant(random_input([1, 2, 4, 4], 11)), &s)
        })
        .unwrap();
        for (a, e) in state.c.value().data().iter().zip(c0.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn convlstm_rejects_mismatched_state() {
        let cell = ConvLstm::new("lstm", 2, 3);
        let mut specs = Vec::new();
        cell.declare(&mut specs);
        let w = build::<f32>(&specs, 1);
        let r = run(&w, |t, p| {
            let s = LstmState::zeros(t, [1, 2, 4, 5]);
            cell.step(t, p, &t.constant(Tensor::zeros([1, 2, 4, 4])), &s)
        });
        assert!(r.is_err());
    }

    fn check_block(
        specs: &[ParamSpec],
        input: Tensor<f64>,
        f: impl Fn(&Tape<f64>, &Params<f64>, &Var<f64>) -> Result<Var<f64>>,
    ) -> f64 {
        let mut params: Vec<(String, Tensor<f64>)> = init_params::<f64>(specs, &mut Rng::new(21))
            .into_iter()
            .collect();
        // Nonzero biases so their gradients are exercised too.
        let mut rng = Rng::new(22);
        for (n, t) in params.iter_mut() {
            if n.ends_with(".b") {
                *t = Tensor::from_fn(t.shape(), |_| rng.uniform(-0.1, 0.1));
            }
        }
        params.push(("input".into(), input));
        let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        let report = grad_check(
            &params,
            |t, vars| {
                let map: IndexMap<String, Var<f64>> =
                    names.iter().cloned().zip(vars.iter().cloned()).collect();
                let p = Params::from_vars(map);
                let y = f(t, &p, p.get("input")?)?;
                let weights = t.constant(Tensor::from_fn(y.shape(), |[a, b, c, d]| {
                    ((a * 7 + b * 5 + c * 3 + d) as f64 * 0.37).sin()
                }));
                t.sum(&t.mul(&y, &weights)?)
            },
            1e-3,
            23,
        )
        .unwrap();
        report.max_rel_error
    }

    #[test]
    fn resblock_gradients_match_finite_differences() {
        let block = ResBlock::new("r", 4, 3, true);
        let mut specs = Vec::new();
        block.declare(&mut specs);
        let err = check_block(&specs, random_input([1, 4, 6, 6], 30), |t, p, x| {
            block.forward(t, p, x)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn dblock_gradients_match_finite_differences() {
        let block = DBlock::new("d", 4, 3, 1, true);
        let mut specs = Vec::new();
        block.declare(&mut specs);
        let err = check_block(&specs, random_input([1, 4, 3, 3], 31), |t, p, x| {
            block.forward(t, p, x)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn convlstm_gradients_match_finite_differences() {
        let cell = ConvLstm::new("lstm", 4, 3);
        let mut specs = Vec::new();
        cell.declare(&mut specs);
        let h0 = random_input([1, 4, 4, 4], 32);
        let c0 = random_input([1, 4, 4, 4], 33);
        let err = check_block(&specs, random_input([1, 4, 4, 4], 34), |t, p, x| {
            let s = LstmState {
                h: t.constant(h0.clone()),
                c: t.constant(c0.clone()),
            };
            let (state, out) = cell.step(t, p, x, &s)?;
            t.add(&out, &state.c)
        });
        assert!(err < 1e-4, "{err}");
    }
}
