use indexmap::IndexMap;
use proptest::prelude::*;
use srn_core::autodiff::Tape;
use srn_core::init::Rng;
use srn_core::metrics::{multiscale_l2_loss, LossConfig};
use srn_core::model::{build_pyramid, count_params, ModelWeights, Srn, SrnConfig, Variant};
use srn_core::nn::{init_params, DBlock, EBlock, InBlock, OutBlock, Params, ResBlock};
use srn_core::{Shape, Tensor};

fn random(shape: Shape, seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(0.0, 1.0) as f32)
}

fn eval_block(
    specs: &[srn_core::nn::ParamSpec],
    x: Tensor<f32>,
    f: impl Fn(
        &Tape<f32>,
        &Params<f32>,
        &srn_core::autodiff::Var<f32>,
    ) -> srn_core::Result<srn_core::autodiff::Var<f32>>,
) -> Shape {
    let weights: IndexMap<String, Tensor<f32>> = init_params(specs, &mut Rng::new(1));
    let tape = Tape::no_grad();
    let p = Params::bind(&tape, &weights);
    f(&tape, &p, &tape.constant(x)).unwrap().shape()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_shapes_follow_their_formulas(
        n in 1usize..3, c in 1usize..4, h in 1usize..10, w in 1usize..10,
        k in prop::sample::select(vec![3usize, 5]), depth in 0usize..3, identity in any::<bool>(),
    ) {
        let x = random([n, c, h, w], (h * 31 + w) as u64);

        let res = ResBlock::new("r", c, k, identity);
        let mut specs = Vec::new();
        res.declare(&mut specs);
        prop_assert_eq!(eval_block(&specs, x.clone(), |t, p, v| res.forward(t, p, v)), [n, c, h, w]);

        let enc = EBlock::new("e", c, k, depth, identity);
        let mut specs = Vec::new();
        enc.declare(&mut specs);
        prop_assert_eq!(
            eval_block(&specs, x.clone(), |t, p, v| enc.forward(t, p, v)),
            [n, 2 * c, h.div_ceil(2), w.div_ceil(2)]
        );

        let dec = DBlock::new("d", 2 * c, k, depth, identity);
        let mut specs = Vec::new();
        dec.declare(&mut specs);
        let wide = random([n, 2 * c, h, w], 7);
        prop_assert_eq!(eval_block(&specs, wide, |t, p, v| dec.forward(t, p, v)), [n, c, 2 * h, 2 * w]);

        let inb = InBlock::new("i", 6, c, k, depth, identity);
        let mut specs = Vec::new();
        inb.declare(&mut specs);
        prop_assert_eq!(eval_block(&specs, random([n, 6, h, w], 8), |t, p, v| inb.forward(t, p, v)), [n, c, h, w]);

        let out = OutBlock::new("o", c, 3, k, depth, identity);
        let mut specs = Vec::new();
        out.declare(&mut specs);
        prop_assert_eq!(eval_block(&specs, x, |t, p, v| out.forward(t, p, v)), [n, 3, h, w]);
    }

    #[test]
    fn parameter_count_ignores_scale_count(
        v in prop::sample::select(vec![
            Variant::WoR, Variant::Rnn, Variant::SrFlat, Variant::SrRb, Variant::SrEd,
            Variant::SrEdrb(1), Variant::SrEdrb(2), Variant::SrEdrb(3),
        ]),
        scales in 1usize..6,
        k in prop::sample::select(vec![3usize, 5]),
    ) {
        let base = SrnConfig::new(v).with_kernel(k);
        let cfg = base.with_scales(scales);
        prop_assert_eq!(count_params(&cfg).unwrap(), count_params(&base).unwrap());
        prop_assert_eq!(Srn::new(cfg).unwrap().param_specs(), Srn::new(base).unwrap().param_specs());
    }
}

fn tiny(v: Variant) -> SrnConfig {
    SrnConfig::new(v)
        .with_kernel(3)
        .with_base_channels(2)
        .with_resblocks(1)
}

#[test]
fn full_srn_gradients_are_finite() {
    let cfg = SrnConfig::new(Variant::SrEdrb(3))
        .with_kernel(3)
        .with_base_channels(2);
    let srn = Srn::new(cfg).unwrap();
    let weights: ModelWeights<f32> = srn.init_weights(&mut Rng::new(4));
    let blurry = random([2, 3, 16, 16], 5);
    let sharp = random([2, 3, 16, 16], 6);
    let tape = Tape::new();
    let p = weights.bind(&tape);
    let inputs: Vec<_> = build_pyramid(&blurry, 3)
        .unwrap()
        .levels
        .into_iter()
        .map(|l| tape.constant(l))
        .collect();
    let targets: Vec<_> = build_pyramid(&sharp, 3)
        .unwrap()
        .levels
        .into_iter()
        .map(|l| tape.constant(l))
        .collect();
    let outputs = srn.forward(&tape, &p, &inputs).unwrap();
    let loss = multiscale_l2_loss(&tape, &outputs, &targets, &LossConfig::uniform(3)).unwrap();
    let grads = tape.backward(&loss).unwrap().into_params();
    assert_eq!(grads.len(), weights.len());
    for (name, g) in grads.iter() {
        assert!(g.is_finite(), "{name}");
    }
    assert!(grads.global_norm(|_| true) > 0.0);
}

#[test]
fn three_scale_forward_on_64_square() {
    let cfg = SrnConfig::new(Variant::SrEdrb(3));
    let srn = Srn::new(cfg).unwrap();
    let weights: ModelWeights<f32> = srn.init_weights(&mut Rng::new(1));
    let tape = Tape::no_grad();
    let p = weights.bind(&tape);
    let inputs: Vec<_> = build_pyramid(&random([1, 3, 64, 64], 2), 3)
        .unwrap()
        .levels
        .into_iter()
        .map(|l| tape.constant(l))
        .collect();
    let shapes: Vec<Shape> = srn
        .forward(&tape, &p, &inputs)
        .unwrap()
        .iter()
        .map(|o| o.shape())
        .collect();
    assert_eq!(shapes, vec![[1, 3, 64, 64], [1, 3, 32, 32], [1, 3, 16, 16]]);

    let ss = Srn::new(
        SrnConfig::new(Variant::Ss)
            .with_kernel(3)
            .with_base_channels(2),
    )
    .unwrap();
    let w: ModelWeights<f32> = ss.init_weights(&mut Rng::new(1));
    let p = w.bind(&tape);
    let outs = ss
        .forward(&tape, &p, &[tape.constant(random([1, 3, 16, 16], 3))])
        .unwrap();
    assert_eq!(outs.len(), 1);
}

#[test]
fn full_hd_frame_at_tiny_width() {
    let srn = Srn::new(tiny(Variant::SrEdrb(1))).unwrap();
    let weights: ModelWeights<f32> = srn.init_weights(&mut Rng::new(1));
    let out = srn
        .restore(&weights, &random([1, 3, 720, 1280], 9))
        .unwrap();
    assert_eq!(out.shape(), [1, 3, 720, 1280]);
    assert!(out.is_finite());
}

#[test]
fn scales_read_the_same_named_tensors() {
    for v in [Variant::SrEdrb(1), Variant::SrFlat, Variant::Rnn] {
        let one = Srn::new(tiny(v).with_scales(1)).unwrap();
        let three = Srn::new(tiny(v)).unwrap();
        let names = |s: &Srn| {
            s.param_specs()
                .into_iter()
                .map(|p| p.name)
                .collect::<Vec<_>>()
        };
        assert_eq!(names(&one), names(&three), "{v}");
    }
}
