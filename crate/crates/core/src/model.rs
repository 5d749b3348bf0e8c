//! The scale-recurrent network: variant configuration, weight allocation,
//! the coarse-to-fine forward pass and closed-form parameter counting.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init::Rng;
use crate::nn::{
    init_params, ConvLayer, ConvLstm, ConvRnn, DBlock, EBlock, InBlock, LstmState, OutBlock,
    ParamSpec, Params, ResBlock, IMAGE_CHANNELS,
};
use crate::ops::bilinear_resize;
use crate::tensor::{Scalar, Tensor};

/// Each pyramid level is this fraction of the previous one.
pub const PAD_MULTIPLE: usize = 4;

pub const SCALE_FACTOR: f64 = 0.5;

/// Name prefixes of recurrent-cell parameters, the only ones subject to
/// gradient clipping.
pub const RECURRENT_PREFIXES: [&str; 2] = ["lstm.", "rnn."];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Single scale, conv bottleneck.
    Ss,
    /// Independent single-scale networks per scale.
    Sc,
    /// Shared weights across scales, no recurrence.
    WoR,
    /// Vanilla convolutional RNN bottleneck.
    Rnn,
    /// Stride-1 conv stack with a ConvLSTM, no encoder-decoder.
    SrFlat,
    /// Stride-1 ResBlock stack with a ConvLSTM.
    SrRb,
    /// Encoder-decoder whose ResBlocks lose their identity connections.
    SrEd,
    /// Encoder-decoder with `k` ResBlocks per block.
    SrEdrb(usize),
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Ss,
        Variant::Sc,
        Variant::WoR,
        Variant::Rnn,
        Variant::SrFlat,
        Variant::SrRb,
        Variant::SrEd,
        Variant::SrEdrb(1),
        Variant::SrEdrb(2),
        Variant::SrEdrb(3),
    ];

    /// Label used in result tables (`w/oR`, `SR-EDRB3`, ...).
    pub fn table_label(&self) -> String {
        match self {
            Variant::Ss => "SS".into(),
            Variant::Sc => "SC".into(),
            Variant::WoR => "w/oR".into(),
            Variant::Rnn => "RNN".into(),
            Variant::SrFlat => "SR-Flat".into(),
            Variant::SrRb => "SR-RB".into(),
            Variant::SrEd => "SR-ED".into(),
            Variant::SrEdrb(k) => format!("SR-EDRB{k}"),
        }
    }

    fn is_encoder_decoder(&self) -> bool {
        !matches!(self, Variant::SrFlat | Variant::SrRb)
    }

    fn identity_skips(&self) -> bool {
        !matches!(self, Variant::SrFlat | Variant::SrEd)
    }

    fn bottleneck(&self) -> BottleneckKind {
        match self {
            Variant::Ss | Variant::Sc | Variant::WoR => BottleneckKind::Conv,
            Variant::Rnn => BottleneckKind::Rnn,
            _ => BottleneckKind::Lstm,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Ss => f.write_str("SS"),
            Variant::Sc => f.write_str("SC"),
            Variant::WoR => f.write_str("WOR"),
            Variant::Rnn => f.write_str("RNN"),
            Variant::SrFlat => f.write_str("SR_FLAT"),
            Variant::SrRb => f.write_str("SR_RB"),
            Variant::SrEd => f.write_str("SR_ED"),
            Variant::SrEdrb(k) => write!(f, "SR_EDRB{k}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts both `SR_EDRB3` and `SR-EDRB3` spellings, any case.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        let v = match key.as_str() {
            "SS" => Variant::Ss,
            "SC" => Variant::Sc,
            "WOR" | "W/OR" => Variant::WoR,
            "RNN" => Variant::Rnn,
            "SR_FLAT" => Variant::SrFlat,
            "SR_RB" => Variant::SrRb,
            "SR_ED" => Variant::SrEd,
            _ => match key
                .strip_prefix("SR_EDRB")
                .and_then(|k| k.parse::<usize>().ok())
            {
                Some(k @ 1..=3) => Variant::SrEdrb(k),
                _ => return Err(Error::UnknownVariant(s.to_string())),
            },
        };
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BottleneckKind {
    Lstm,
    Rnn,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrnConfig {
    pub variant: Variant,
    pub n_scales: usize,
    pub num_resblocks: usize,
    pub kernel_size: usize,
    pub base_channels: usize,
}

impl SrnConfig {
    /// Full-size defaults: 3 scales (1 for SS), 5×5 kernels, 32 base channels
    /// and 3 ResBlocks per block unless the variant fixes the count.
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            n_scales: if variant == Variant::Ss { 1 } else { 3 },
            num_resblocks: match variant {
                Variant::SrEdrb(k) => k,
                _ => 3,
            },
            kernel_size: 5,
            base_channels: 32,
        }
    }

    pub fn with_kernel(mut self, k: usize) -> Self {
        self.kernel_size = k;
        self
    }

    pub fn with_base_channels(mut self, b: usize) -> Self {
        self.base_channels = b;
        self
    }

    pub fn with_scales(mut self, n: usize) -> Self {
        self.n_scales = n;
        self
    }

    pub fn with_resblocks(mut self, n: usize) -> Self {
        self.num_resblocks = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config(reason));
        if self.n_scales == 0 {
            return bad("n_scales must be at least 1".into());
        }
        if self.variant == Variant::Ss && self.n_scales != 1 {
            return bad(format!(
                "SS runs at a single scale, got n_scales = {}",
                self.n_scales
            ));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.num_resblocks == 0 {
            return bad("num_resblocks must be at least 1".into());
        }
        if let Variant::SrEdrb(k) = self.variant {
            if self.num_resblocks != k {
                return bad(format!(
                    "{} requires num_resblocks = {k}, got {}",
                    self.variant, self.num_resblocks
                ));
            }
        }
        Ok(())
    }

    /// Number of independent weight sets: one per scale for SC, else one.
    pub fn weight_sets(&self) -> usize {
        if self.variant == Variant::Sc {
            self.n_scales
        } else {
            1
        }
    }
}

/// True for parameters of the recurrent bottleneck cell.
pub fn is_recurrent_param(name: &str) -> bool {
    let local = name
        .split_once('.')
        .filter(|(head, _)| is_scale_prefix(head))
        .map_or(name, |(_, rest)| rest);
    RECURRENT_PREFIXES.iter().any(|p| local.starts_with(p))
}

fn is_scale_prefix(head: &str) -> bool {
    head.len() > 1 && head.starts_with('s') && head[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Ordered parameter map. For SC every name carries a `s{i}.` prefix, with
/// `s1` the finest scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T: Scalar = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor<T>)>) -> Result<Self> {
        let mut map = IndexMap::new();
        for (name, t) in tensors {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::invalid(
                    "model_weights",
                    format!("duplicate tensor `{name}`"),
                ));
            }
        }
        Ok(Self { tensors: map })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total element count over all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn bind(&self, tape: &Tape<T>) -> Params<T> {
        Params::bind(tape, &self.tensors)
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn into_inner(self) -> IndexMap<String, Tensor<T>> {
        self.tensors
    }
}

/// Blurry inputs from finest (index 0) to coarsest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePyramid<T: Scalar = f32> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Scalar> ScalePyramid<T> {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Successive bilinear halving; level `i + 1` is `ceil(level i / 2)`.
pub fn build_pyramid<T: Scalar>(image: &Tensor<T>, n_scales: usize) -> Result<ScalePyramid<T>> {
    if n_scales == 0 {
        return Err(Error::invalid(
            "build_pyramid",
            "n_scales must be at least 1",
        ));
    }
    let mut levels = vec![image.clone()];
    for _ in 1..n_scales {
        let prev = levels.last().expect("nonempty");
        let next = bilinear_resize(prev, prev.h().div_ceil(2), prev.w().div_ceil(2))?;
        levels.push(next);
    }
    Ok(ScalePyramid { levels })
}

#[derive(Clone, Debug)]
enum Bottleneck {
    Lstm(ConvLstm),
    Rnn(ConvRnn),
    Conv(ConvLayer),
}

impl Bottleneck {
    fn declare(&self, out: &mut Vec<ParamSpec>) {
        match self {
            Bottleneck::Lstm(c) => c.declare(out),
            Bottleneck::Rnn(c) => c.declare(out),
            Bottleneck::Conv(c) => c.declare(out),
        }
    }

    /// Resizes the carried state to `x` before stepping. A missing state
    /// starts at zeros.
    fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        p: &Params<T>,
        x: &Var<T>,
        state: Option<&LstmState<T>>,
    ) -> Result<(Var<T>, Option<LstmState<T>>)> {
        let prepare = |state: Option<&LstmState<T>>| -> Result<LstmState<T>> {
            let [_, _, h, w] = x.shape();
            match state {
                Some(s) if s.h.shape()[2..] == [h, w] => Ok(s.clone()),
                Some(s) => s.resize(tape, h, w),
                None => Ok(LstmState::zeros(tape, x.shape())),
            }
        };
        match self {
            Bottleneck::Lstm(cell) => {
                let (s, out) = cell.step(tape, p, x, &prepare(state)?)?;
                Ok((out, Some(s)))
            }
            Bottleneck::Rnn(cell) => {
                let (s, out) = cell.step(tape, p, x, &prepare(state)?)?;
                Ok((out, Some(s)))
            }
            Bottleneck::Conv(conv) => Ok((tape.relu(&conv.forward(tape, p, x)?)?, None)),
        }
    }
}

#[derive(Clone, Debug)]
enum FlatLayer {
    Conv { layer: ConvLayer, relu: bool },
    Pair(ResBlock),
}

impl FlatLayer {
    fn declare(&self, out: &mut Vec<ParamSpec>) {
        match self {
            FlatLayer::Conv { layer, .. } => layer.declare(out),
            FlatLayer::Pair(r) => r.declare(out),
        }
    }

    fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Params<T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            FlatLayer::Conv { layer, relu: true } => tape.relu(&layer.forward(tape, p, x)?),
            FlatLayer::Conv { layer, relu: false } => layer.forward(tape, p, x),
            FlatLayer::Pair(r) => r.forward(tape, p, x),
        }
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
enum Body {
    EncDec {
        inb: InBlock,
        e1: EBlock,
        e2: EBlock,
        d1: DBlock,
        d2: DBlock,
        outb: OutBlock,
    },
    Flat {
        enc: Vec<FlatLayer>,
        dec: Vec<FlatLayer>,
    },
}

#[derive(Clone, Debug)]
struct Net {
    body: Body,
    bottleneck: Bottleneck,
}

impl Net {
    fn new(cfg: &SrnConfig, prefix: &str) -> Self {
        let (b, k, n) = (cfg.base_channels, cfg.kernel_size, cfg.num_resblocks);
        let identity = cfg.variant.identity_skips();
        let input_c = 2 * IMAGE_CHANNELS;
        let bottleneck_c = 4 * b;
        let bottleneck = match cfg.variant.bottleneck() {
            BottleneckKind::Lstm => {
                Bottleneck::Lstm(ConvLstm::new(format!("{prefix}lstm"), bottleneck_c, k))
            }
            BottleneckKind::Rnn => {
                Bottleneck::Rnn(ConvRnn::new(format!("{prefix}rnn"), bottleneck_c, k))
            }
            BottleneckKind::Conv => Bottleneck::Conv(ConvLayer::new(
                format!("{prefix}bottleneck"),
                bottleneck_c,
                bottleneck_c,
                k,
                1,
            )),
        };
        let body = if cfg.variant.is_encoder_decoder() {
            Body::EncDec {
                inb: InBlock::new(&format!("{prefix}inblock"), input_c, b, k, n, identity),
                e1: EBlock::new(&format!("{prefix}eblock1"), b, k, n, identity),
                e2: EBlock::new(&format!("{prefix}eblock2"), 2 * b, k, n, identity),
                d1: DBlock::new(&format!("{prefix}dblock1"), 4 * b, k, n, identity),
                d2: DBlock::new(&format!("{prefix}dblock2"), 2 * b, k, n, identity),
                outb: OutBlock::new(
                    &format!("{prefix}outblock"),
                    b,
                    IMAGE_CHANNELS,
                    k,
                    n,
                    identity,
                ),
            }
        } else {
            // Same stage structure as the encoder-decoder with strides removed:
            // features stay at 2b, the recurrent cell at 4b.
            let w = 2 * b;
            let conv = |name: &str, cin: usize, cout: usize, relu: bool| FlatLayer::Conv {
                layer: ConvLayer::new(format!("{prefix}{name}"), cin, cout, k, 1),
                relu,
            };
            let pairs = |stage: &str| -> Vec<FlatLayer> {
                (0..n)
                    .map(|i| {
                        FlatLayer::Pair(ResBlock::new(
                            &format!("{prefix}{stage}.res{i}"),
                            w,
                            k,
                            identity,
                        ))
                    })
                    .collect()
            };
            let mut enc = vec![conv("enc1.conv", input_c, w, true)];
            enc.extend(pairs("enc1"));
            enc.push(conv("enc2.conv", w, w, true));
            enc.extend(pairs("enc2"));
            enc.extend(pairs("enc3"));
            enc.push(conv("enc3.conv", w, bottleneck_c, true));
            let mut dec = vec![conv("dec1.conv", bottleneck_c, w, true)];
            dec.extend(pairs("dec1"));
            dec.extend(pairs("dec2"));
            dec.push(conv("dec2.conv", w, w, true));
            dec.extend(pairs("dec3"));
            dec.push(conv("dec3.conv", w, IMAGE_CHANNELS, false));
            Body::Flat { enc, dec }
        };
        Self { body, bottleneck }
    }

    fn declare(&self, out: &mut Vec<ParamSpec>) {
        match &self.body {
            Body::EncDec {
                inb,
                e1,
                e2,
                d1,
                d2,
                outb,
            } => {
                inb.declare(out);
                e1.declare(out);
                e2.declare(out);
                self.bottleneck.declare(out);
                d1.declare(out);
                d2.declare(out);
                outb.declare(out);
            }
            Body::Flat { enc, dec } => {
                enc.iter().for_each(|l| l.declare(out));
                self.bottleneck.declare(out);
                dec.iter().for_each(|l| l.declare(out));
            }
        }
    }

    fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        p: &Params<T>,
        input: &Var<T>,
        state: Option<&LstmState<T>>,
    ) -> Result<(Var<T>, Option<LstmState<T>>)> {
        match &self.body {
            Body::EncDec {
                inb,
                e1,
                e2,
                d1,
                d2,
                outb,
            } => {
                let x0 = inb.forward(tape, p, input)?;
                let x1 = e1.forward(tape, p, &x0)?;
                let x2 = e2.forward(tape, p, &x1)?;
                let (g, state) = self.bottleneck.forward(tape, p, &x2, state)?;
                let y1 = d1.forward(tape, p, &tape.add(&g, &x2)?)?;
                let y1 = crop_to(tape, &y1, &x1)?;
                let y2 = d2.forward(tape, p, &tape.add(&y1, &x1)?)?;
                let y2 = crop_to(tape, &y2, &x0)?;
                let out = outb.forward(tape, p, &tape.add(&y2, &x0)?)?;
                Ok((out, state))
            }
            Body::Flat { enc, dec } => {
                let f = enc
                    .iter()
                    .try_fold(input.clone(), |x, l| l.forward(tape, p, &x))?;
                let (g, state) = self.bottleneck.forward(tape, p, &f, state)?;
                let out = dec.iter().try_fold(g, |x, l| l.forward(tape, p, &x))?;
                Ok((out, state))
            }
        }
    }
}

/// Trims an upsampled decoder map to its skip partner when odd sizes made
/// it one pixel larger.
fn crop_to<T: Scalar>(tape: &Tape<T>, x: &Var<T>, like: &Var<T>) -> Result<Var<T>> {
    let ([_, _, h, w], [_, _, th, tw]) = (x.shape(), like.shape());
    if (h, w) == (th, tw) {
        Ok(x.clone())
    } else {
        tape.crop(x, th, tw)
    }
}

/// Layout of a configured network. Holds no tensors.
#[derive(Clone, Debug)]
pub struct Srn {
    config: SrnConfig,
    nets: Vec<Net>,
}

impl Srn {
    pub fn new(config: SrnConfig) -> Result<Self> {
        config.validate()?;
        let nets = if config.variant == Variant::Sc {
            (1..=config.n_scales)
                .map(|i| Net::new(&config, &format!("s{i}.")))
                .collect()
        } else {
            vec![Net::new(&config, "")]
        };
        Ok(Self { config, nets })
    }

    pub fn config(&self) -> &SrnConfig {
        &self.config
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.nets.iter().for_each(|n| n.declare(&mut out));
        out
    }

    pub fn init_weights<T: Scalar>(&self, rng: &mut Rng) -> ModelWeights<T> {
        ModelWeights {
            tensors: init_params(&self.param_specs(), rng),
        }
    }

    /// Checks that `weights` holds exactly this layout's tensors and shapes.
    pub fn check_weights<T: Scalar>(&self, weights: &ModelWeights<T>) -> Result<()> {
        let specs = self.param_specs();
        if specs.len() != weights.len() {
            return Err(Error::Config(format!(
                "expected {} tensors for {}, found {}",
                specs.len(),
                self.config.variant,
                weights.len()
            )));
        }
        for s in &specs {
            match weights.get(&s.name) {
                Some(t) if t.shape() == s.shape => {}
                Some(t) => {
                    return Err(Error::ShapeMismatch {
                        op: "check_weights",
                        left: s.shape,
                        right: t.shape(),
                    })
                }
                None => return Err(Error::Config(format!("missing tensor `{}`", s.name))),
            }
        }
        Ok(())
    }

    /// Runs the recursion from the coarsest level up. `pyramid[0]` is the
    /// finest level; outputs use the same order.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        params: &Params<T>,
        pyramid: &[Var<T>],
    ) -> Result<Vec<Var<T>>> {
        let n = pyramid.len();
        if n != self.config.n_scales {
            return Err(Error::invalid(
                "forward_multiscale",
                format!(
                    "pyramid has {n} levels, config expects {}",
                    self.config.n_scales
                ),
            ));
        }
        for b in pyramid {
            if b.shape()[1] != IMAGE_CHANNELS {
                return Err(Error::invalid(
                    "forward_multiscale",
                    format!("input shape {:?}", b.shape()),
                ));
            }
        }
        let mut outputs: Vec<Option<Var<T>>> = vec![None; n];
        let mut state: Option<LstmState<T>> = None;
        let mut prev = pyramid[n - 1].clone();
        for i in (0..n).rev() {
            let net = &self.nets[if self.nets.len() > 1 { i } else { 0 }];
            let b = &pyramid[i];
            let [_, _, h, w] = b.shape();
            if prev.shape()[2..] != [h, w] {
                prev = tape.resize(&prev, h, w)?;
            }
            let input = tape.concat_channels(b, &prev)?;
            let (out, next) = net.forward(tape, params, &input, state.as_ref())?;
            state = next;
            prev = out.clone();
            outputs[i] = Some(out);
        }
        Ok(outputs
            .into_iter()
            .map(|o| o.expect("every scale ran"))
            .collect())
    }

    /// Gradient-free restoration of a batch of blurry images; returns the
    /// finest-scale estimate, unclamped.
    pub fn restore(
        &self,
        weights: &ModelWeights<f32>,
        blurry: &Tensor<f32>,
    ) -> Result<Tensor<f32>> {
        let tape = Tape::no_grad();
        let params = weights.bind(&tape);
        let pyramid = build_pyramid(blurry, self.config.n_scales)?;
        let inputs: Vec<Var<f32>> = pyramid
            .levels
            .into_iter()
            .map(|l| tape.constant(l))
            .collect();
        let mut outs = self.forward(&tape, &params, &inputs)?;
        Ok(outs.swap_remove(0).value().clone())
    }

    /// [`Srn::restore`] on an image reflect-padded up to multiples of
    /// [`PAD_MULTIPLE`], cropped back to the input size and clamped to `[0, 1]`.
    pub fn restore_padded(
        &self,
        weights: &ModelWeights<f32>,
        blurry: &Tensor<f32>,
    ) -> Result<Tensor<f32>> {
        let [_, _, h, w] = blurry.shape();
        let padded = blurry.pad_reflect(
            h.next_multiple_of(PAD_MULTIPLE),
            w.next_multiple_of(PAD_MULTIPLE),
        )?;
        Ok(self
            .restore(weights, &padded)?
            .crop(0, 0, h, w)?
            .clamp(0.0, 1.0))
    }
}

pub fn build_model<T: Scalar>(config: &SrnConfig, rng: &mut Rng) -> Result<ModelWeights<T>> {
    Ok(Srn::new(*config)?.init_weights(rng))
}

pub fn forward_multiscale<T: Scalar>(
    tape: &Tape<T>,
    params: &Params<T>,
    pyramid: &[Var<T>],
    config: &SrnConfig,
) -> Result<Vec<Var<T>>> {
    Srn::new(*config)?.forward(tape, params, pyramid)
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    k * k * cin * cout + cout
}

/// Closed-form parameter count per block, in forward order.
pub fn param_breakdown(config: &SrnConfig) -> Result<Vec<(String, usize)>> {
    config.validate()?;
    let (b, k, n) = (
        config.base_channels,
        config.kernel_size,
        config.num_resblocks,
    );
    let conv = |cin, cout| conv_params(cin, cout, k);
    let pairs = |c| n * 2 * conv(c, c);
    let input_c = 2 * IMAGE_CHANNELS;
    let bc = 4 * b;
    let (bottleneck_name, bottleneck) = match config.variant.bottleneck() {
        BottleneckKind::Lstm => ("lstm", 2 * 4 * k * k * bc * bc + 4 * bc),
        BottleneckKind::Rnn => ("rnn", 2 * k * k * bc * bc + bc),
        BottleneckKind::Conv => ("bottleneck", conv(bc, bc)),
    };
    let one: Vec<(&str, usize)> = if config.variant.is_encoder_decoder() {
        vec![
            ("inblock", conv(input_c, b) + pairs(b)),
            ("eblock1", conv(b, 2 * b) + pairs(2 * b)),
            ("eblock2", conv(2 * b, 4 * b) + pairs(4 * b)),
            (bottleneck_name, bottleneck),
            ("dblock1", pairs(4 * b) + conv(4 * b, 2 * b)),
            ("dblock2", pairs(2 * b) + conv(2 * b, b)),
            ("outblock", pairs(b) + conv(b, IMAGE_CHANNELS)),
        ]
    } else {
        let w = 2 * b;
        vec![
            ("enc1", conv(input_c, w) + pairs(w)),
            ("enc2", conv(w, w) + pairs(w)),
            ("enc3", pairs(w) + conv(w, bc)),
            (bottleneck_name, bottleneck),
            ("dec1", conv(bc, w) + pairs(w)),
            ("dec2", pairs(w) + conv(w, w)),
            ("dec3", pairs(w) + conv(w, IMAGE_CHANNELS)),
        ]
    };
    Ok(if config.variant == Variant::Sc {
        (1..=config.n_scales)
            .flat_map(|i| {
                one.iter()
                    .map(move |(name, c)| (format!("s{i}.{name}"), *c))
            })
            .collect()
    } else {
        one.into_iter()
            .map(|(name, c)| (name.to_string(), c))
            .collect()
    })
}

pub fn count_params(config: &SrnConfig) -> Result<usize> {
    Ok(param_breakdown(config)?.iter().map(|(_, c)| c).sum())
}
