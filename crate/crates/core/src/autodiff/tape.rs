use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::ops::{self, conv, resize, Activation};
use crate::tensor::{Scalar, Shape, Tensor};

use super::GradientSet;

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value produced on a [`Tape`]. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct Var<T: Scalar = f32> {
    tape: usize,
    node: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    /// Whether gradients flow through this value.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }
}

#[derive(Debug)]
struct Input<T: Scalar> {
    node: Option<usize>,
    value: Rc<Tensor<T>>,
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf {
        name: Option<String>,
        shape: Shape,
    },
    Conv {
        x: Input<T>,
        w: Input<T>,
        b: Option<usize>,
        stride: usize,
        transpose: bool,
    },
    Resize {
        x: usize,
        in_h: usize,
        in_w: usize,
    },
    Act {
        x: usize,
        act: Activation,
        out: Rc<Tensor<T>>,
        mask: Option<Rc<Vec<bool>>>,
    },
    Add(Option<usize>, Option<usize>),
    Sub(Option<usize>, Option<usize>),
    Mul(Input<T>, Input<T>),
    Concat {
        a: Option<usize>,
        b: Option<usize>,
        split: usize,
    },
    Slice {
        x: usize,
        start: usize,
        in_shape: Shape,
    },
    Crop {
        x: usize,
        in_shape: Shape,
    },
    Scale {
        x: usize,
        k: T,
    },
    Sum {
        x: usize,
        shape: Shape,
        mean: bool,
    },
}

/// ReLU activation-pattern log used by finite-difference checks to evaluate
/// the function on the linear piece that contains the base point.
#[derive(Debug, Default)]
enum MaskMode {
    #[default]
    Off,
    Record(Vec<Rc<Vec<bool>>>),
    Replay(Vec<Rc<Vec<bool>>>, usize),
}

/// Records tensor operations for reverse-mode differentiation.
///
/// Node ids grow monotonically, so the recorded graph is acyclic and reverse
/// id order is a valid topological order for the backward sweep. A tape is
/// single-threaded; independent tapes may run on separate threads.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    id: usize,
    recording: bool,
    nodes: RefCell<Vec<Op<T>>>,
    masks: RefCell<MaskMode>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    tape: usize,
    leaves: Vec<Option<Tensor<T>>>,
    params: GradientSet<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf created by [`Tape::var`] or
    /// [`Tape::param`]. `None` for untracked or intermediate values.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        var.node.and_then(|n| self.leaves.get(n)?.as_ref())
    }

    pub fn params(&self) -> &GradientSet<T> {
        &self.params
    }

    pub fn into_params(self) -> GradientSet<T> {
        self.params
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
            masks: RefCell::new(MaskMode::Off),
        }
    }

    /// A tape that records nothing: every op is evaluated eagerly and
    /// intermediate values are freed as soon as they are dropped.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn record_relu_masks(&self) {
        *self.masks.borrow_mut() = MaskMode::Record(Vec::new());
    }

    pub(crate) fn take_relu_masks(&self) -> Vec<Rc<Vec<bool>>> {
        match std::mem::take(&mut *self.masks.borrow_mut()) {
            MaskMode::Record(v) | MaskMode::Replay(v, _) => v,
            MaskMode::Off => Vec::new(),
        }
    }

    pub(crate) fn replay_relu_masks(&self, masks: Vec<Rc<Vec<bool>>>) {
        *self.masks.borrow_mut() = MaskMode::Replay(masks, 0);
    }

    fn push(&self, op: Op<T>) -> Option<usize> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(op);
        Some(nodes.len() - 1)
    }

    fn wrap(&self, node: Option<usize>, value: Tensor<T>) -> Var<T> {
        self.wrap_rc(node, Rc::new(value))
    }

    fn wrap_rc(&self, node: Option<usize>, value: Rc<Tensor<T>>) -> Var<T> {
        Var {
            tape: self.id,
            node,
            value,
        }
    }

    fn check(&self, v: &Var<T>) -> Result<Option<usize>> {
        if v.node.is_some() && v.tape != self.id {
            return Err(Error::Unrecorded);
        }
        Ok(v.node)
    }

    fn input(&self, v: &Var<T>) -> Result<Input<T>> {
        Ok(Input {
            node: self.check(v)?,
            value: v.value.clone(),
        })
    }

    /// Named trainable leaf. Its gradient appears in [`Gradients::params`].
    pub fn param(&self, name: impl Into<String>, value: Tensor<T>) -> Var<T> {
        let node = if self.recording {
            self.push(Op::Leaf {
                name: Some(name.into()),
                shape: value.shape(),
            })
        } else {
            None
        };
        self.wrap(node, value)
    }

    /// Unnamed leaf whose gradient is available through [`Gradients::get`].
    pub fn var(&self, value: Tensor<T>) -> Var<T> {
        let node = if self.recording {
            self.push(Op::Leaf {
                name: None,
                shape: value.shape(),
            })
        } else {
            None
        };
        self.wrap(node, value)
    }

    /// Value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.wrap(None, value)
    }

    fn tracked(&self, inputs: &[Option<usize>]) -> bool {
        self.recording && inputs.iter().any(Option::is_some)
    }

    pub fn conv2d(
        &self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        stride: usize,
    ) -> Result<Var<T>> {
        self.conv_impl(x, w, b, stride, false)
    }

    pub fn conv2d_transpose(
        &self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        stride: usize,
    ) -> Result<Var<T>> {
        self.conv_impl(x, w, b, stride, true)
    }

    fn conv_impl(
        &self,
        x: &Var<T>,
        w: &Var<T>,
        b: Option<&Var<T>>,
        stride: usize,
        transpose: bool,
    ) -> Result<Var<T>> {
        let bias = b.map(|b| b.value.data());
        let out = if transpose {
            conv::conv2d_transpose(&x.value, &w.value, bias, stride)?
        } else {
            conv::conv2d(&x.value, &w.value, bias, stride)?
        };
        let (xi, wi) = (self.input(x)?, self.input(w)?);
        let bn = match b {
            Some(b) => self.check(b)?,
            None => None,
        };
        let node = if self.tracked(&[xi.node, wi.node, bn]) {
            self.push(Op::Conv {
                x: xi,
                w: wi,
                b: bn,
                stride,
                transpose,
            })
        } else {
            None
        };
        Ok(self.wrap(node, out))
    }

    pub fn resize(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        if (x.value.h(), x.value.w()) == (out_h, out_w) {
            return Ok(x.clone());
        }
        let out = resize::bilinear_resize(&x.value, out_h, out_w)?;
        let xn = self.check(x)?;
        let node = match xn {
            Some(xn) if self.recording => self.push(Op::Resize {
                x: xn,
                in_h: x.value.h(),
                in_w: x.value.w(),
            }),
            _ => None,
        };
        Ok(self.wrap(node, out))
    }

    pub fn activation(&self, x: &Var<T>, act: Activation) -> Result<Var<T>> {
        let xn = self.check(x)?;
        let mut mask = None;
        let out = if act == Activation::Relu {
            let mut modes = self.masks.borrow_mut();
            match &mut *modes {
                MaskMode::Off => ops::pointwise(&x.value, act),
                MaskMode::Record(log) => {
                    let m: Rc<Vec<bool>> =
                        Rc::new(x.value.data().iter().map(|&v| v > T::zero()).collect());
                    log.push(m.clone());
                    mask = Some(m);
                    ops::pointwise(&x.value, act)
                }
                MaskMode::Replay(log, cursor) => {
                    let m = log.get(*cursor).cloned().ok_or_else(|| {
                        Error::invalid("relu", "mask replay ran past the recorded pattern")
                    })?;
                    *cursor += 1;
                    if m.len() != x.value.len() {
                        return Err(Error::invalid("relu", "replayed mask has the wrong size"));
                    }
                    let data = x
                        .value
                        .data()
                        .iter()
                        .zip(m.iter())
                        .map(|(&v, &on)| if on { v } else { T::zero() })
                        .collect();
                    mask = Some(m);
                    Tensor::new(x.shape(), data)?
                }
            }
        } else {
            ops::pointwise(&x.value, act)
        };
        let out = Rc::new(out);
        let node = match xn {
            Some(xn) if self.recording => self.push(Op::Act {
                x: xn,
                act,
                out: out.clone(),
                mask,
            }),
            _ => None,
        };
        Ok(self.wrap_rc(node, out))
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Result<Var<T>> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&self, x: &Var<T>) -> Result<Var<T>> {
        self.activation(x, Activation::Tanh)
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = ops::add(&a.value, &b.value)?;
        let (an, bn) = (self.check(a)?, self.check(b)?);
        let node = if self.tracked(&[an, bn]) {
            self.push(Op::Add(an, bn))
        } else {
            None
        };
        Ok(self.wrap(node, out))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = ops::sub(&a.value, &b.value)?;
        let (an, bn) = (self.check(a)?, self.check(b)?);
        let node = if self.tracked(&[an, bn]) {
            self.push(Op::Sub(an, bn))
        } else {
            None
        };
        Ok(self.wrap(node, out))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = ops::mul(&a.value, &b.value)?;
        let (ai, bi) = (self.input(a)?, self.input(b)?);
        let node = if self.tracked(&[ai.node, bi.node]) {
            self.push(Op::Mul(ai, bi))
        } else {
            None
        };
        Ok(self.wrap(node, out))
    }

    pub fn concat_channels(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = ops::concat_channels(&a.value, &b.value)?;
        let (an, bn) = (self.check(a)?, self.check(b)?);
        let node = if self.tracked(&[an, bn]) {
            self.push(Op::Concat {
                a: an,
                b: bn,
                split: a.value.c(),
            })
        } else {
            None
        };
        Ok(self.wrap(node, out))
    }

    pub fn slice_channels(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let out = x.value.slice_channels(start, len)?;
        let node = match self.check(x)? {
            Some(xn) if self.recording => self.push(Op::Slice {
                x: xn,
                start,
                in_shape: x.shape(),
            }),
            _ => None,
        };
        Ok(self.wrap(node, out))
    }

    /// Keeps the top-left `h × w` window.
    pub fn crop(&self, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        if (x.value.h(), x.value.w()) == (h, w) {
            return Ok(x.clone());
        }
        let out = x.value.crop(0, 0, h, w)?;
        let node = match self.check(x)? {
            Some(xn) if self.recording => self.push(Op::Crop {
                x: xn,
                in_shape: x.shape(),
            }),
            _ => None,
        };
        Ok(self.wrap(node, out))
    }

    pub fn scale(&self, x: &Var<T>, k: f64) -> Result<Var<T>> {
        let k = T::of(k);
        let out = x.value.scale(k);
        let node = match self.check(x)? {
            Some(xn) if self.recording => self.push(Op::Scale { x: xn, k }),
            _ => None,
        };
        Ok(self.wrap(node, out))
    }

    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        self.reduce(x, false)
    }

    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        self.reduce(x, true)
    }

    fn reduce(&self, x: &Var<T>, mean: bool) -> Result<Var<T>> {
        let mut total = x.value.sum();
        if mean {
            total = total / T::of(x.value.len() as f64);
        }
        let node = match self.check(x)? {
            Some(xn) if self.recording => self.push(Op::Sum {
                x: xn,
                shape: x.shape(),
                mean,
            }),
            _ => None,
        };
        Ok(self.wrap(node, Tensor::scalar(total)))
    }

    /// Reverse sweep from a scalar `loss`. Every registered parameter gets
    /// exactly one gradient entry; parameters the loss does not depend on
    /// get zeros.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if !loss.value.is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape()));
        }
        let nodes = self.nodes.borrow();
        let root = match self.check(loss)? {
            Some(n) if n < nodes.len() => Some(n),
            Some(_) => return Err(Error::Unrecorded),
            None => None,
        };
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if let Some(root) = root {
            grads[root] = Some(Tensor::ones(loss.shape()));
            for id in (0..=root).rev() {
                let Some(g) = grads[id].take() else { continue };
                match &nodes[id] {
                    Op::Leaf { .. } => {
                        grads[id] = Some(g);
                    }
                    op => Self::propagate(op, g, &mut grads),
                }
            }
        }

        let mut params = IndexMap::new();
        for (id, op) in nodes.iter().enumerate() {
            if let Op::Leaf {
                name: Some(name),
                shape,
            } = op
            {
                let g = grads[id].clone().unwrap_or_else(|| Tensor::zeros(*shape));
                if params.insert(name.clone(), g).is_some() {
                    return Err(Error::invalid(
                        "backward",
                        format!("parameter `{name}` registered twice"),
                    ));
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            leaves: grads,
            params: GradientSet::from_map(params),
        })
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], node: Option<usize>, g: Tensor<T>) {
        if let Some(n) = node {
            match &mut grads[n] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
    }

    fn propagate(op: &Op<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Leaf { .. } => unreachable!(),
            Op::Conv {
                x,
                w,
                b,
                stride,
                transpose,
            } => {
                let need_x = x.node.is_some();
                let cg = if *transpose {
                    conv::conv2d_transpose_backward(&x.value, &w.value, *stride, &g, need_x)
                } else {
                    conv::conv2d_backward(&x.value, &w.value, *stride, &g, need_x)
                };
                if let Some(dx) = cg.input {
                    Self::accumulate(grads, x.node, dx);
                }
                Self::accumulate(grads, w.node, cg.weights);
                if b.is_some() {
                    let len = cg.bias.len();
                    let db = Tensor::new([len, 1, 1, 1], cg.bias).expect("bias shape");
                    Self::accumulate(grads, *b, db);
                }
            }
            Op::Resize { x, in_h, in_w } => {
                Self::accumulate(
                    grads,
                    Some(*x),
                    resize::bilinear_resize_backward(&g, *in_h, *in_w),
                );
            }
            Op::Act { x, act, out, mask } => {
                let data = match mask {
                    Some(m) => g
                        .data()
                        .iter()
                        .zip(m.iter())
                        .map(|(&gv, &on)| if on { gv } else { T::zero() })
                        .collect(),
                    None => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&gv, &y)| gv * act.derivative_from_output(y))
                        .collect(),
                };
                Self::accumulate(
                    grads,
                    Some(*x),
                    Tensor::new(g.shape(), data).expect("shape"),
                );
            }
            Op::Add(a, b) => {
                if b.is_some() {
                    Self::accumulate(grads, *b, g.clone());
                }
                Self::accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if b.is_some() {
                    Self::accumulate(grads, *b, g.scale(-T::one()));
                }
                Self::accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if a.node.is_some() {
                    Self::accumulate(grads, a.node, ops::mul(&g, &b.value).expect("shape"));
                }
                if b.node.is_some() {
                    Self::accumulate(grads, b.node, ops::mul(&g, &a.value).expect("shape"));
                }
            }
            Op::Concat { a, b, split } => {
                let total = g.c();
                if a.is_some() {
                    Self::accumulate(grads, *a, g.slice_channels(0, *split).expect("slice"));
                }
                if b.is_some() {
                    Self::accumulate(
                        grads,
                        *b,
                        g.slice_channels(*split, total - split).expect("slice"),
                    );
                }
            }
            Op::Slice { x, start, in_shape } => {
                let [n, c, h, w] = *in_shape;
                let len = g.c();
                let plane = h * w;
                let mut dx = Tensor::zeros(*in_shape);
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    dx.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[src..src + len * plane]);
                }
                Self::accumulate(grads, Some(*x), dx);
            }
            Op::Crop { x, in_shape } => {
                let [_, _, h, w] = *in_shape;
                let (gh, gw) = (g.h(), g.w());
                let mut dx = Tensor::zeros(*in_shape);
                for (dst, src) in dx
                    .data_mut()
                    .chunks_exact_mut(h * w)
                    .zip(g.data().chunks_exact(gh * gw))
                {
                    for r in 0..gh {
                        dst[r * w..r * w + gw].copy_from_slice(&src[r * gw..(r + 1) * gw]);
                    }
                }
                Self::accumulate(grads, Some(*x), dx);
            }
            Op::Scale { x, k } => {
                Self::accumulate(grads, Some(*x), g.scale(*k));
            }
            Op::Sum { x, shape, mean } => {
                let mut v = g.data()[0];
                if *mean {
                    v = v / T::of(shape.iter().product::<usize>() as f64);
                }
                Self::accumulate(grads, Some(*x), Tensor::full(*shape, v));
            }
        }
    }
}
