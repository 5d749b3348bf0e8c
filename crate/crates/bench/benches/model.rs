use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use srn_core::data::generate_synthetic_dataset;
use srn_core::init::Rng;
use srn_core::model::{ModelWeights, Srn, SrnConfig, Variant};
use srn_core::train::{TrainConfig, Trainer};
use srn_core::Tensor;

fn desk_model(variant: Variant) -> SrnConfig {
    SrnConfig::new(variant).with_kernel(3).with_base_channels(8)
}

fn bench_restore(c: &mut Criterion) {
    let mut group = c.benchmark_group("restore_64px");
    group.sample_size(20);
    let mut rng = Rng::new(1);
    let image = Tensor::from_fn([1, 3, 64, 64], |_| rng.uniform(0.0, 1.0) as f32);
    for variant in [Variant::SrEdrb(3), Variant::SrFlat] {
        let srn = Srn::new(desk_model(variant)).unwrap();
        let weights: ModelWeights<f32> = srn.init_weights(&mut Rng::new(2));
        group.bench_function(variant.to_string(), |b| {
            b.iter(|| srn.restore(black_box(&weights), black_box(&image)).unwrap())
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let data = generate_synthetic_dataset(12, (64, 64), &mut Rng::new(1)).unwrap();
    let mut trainer = Trainer::new(desk_model(Variant::SrEdrb(3)), TrainConfig::desk()).unwrap();
    let (blurry, sharp) = trainer.batch(&data.train, 0).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    group.bench_function("SR_EDRB3_desk_batch", |b| {
        b.iter(|| {
            trainer
                .step_on(black_box(&blurry), black_box(&sharp), 1_000_000)
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_restore, bench_train_step);
criterion_main!(benches);
