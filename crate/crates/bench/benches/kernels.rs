use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use srn_core::init::Rng;
use srn_core::ops::conv::{conv2d_backward, conv2d_transpose};
use srn_core::ops::{bilinear_resize, conv2d};
use srn_core::Tensor;

fn random(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0) as f32)
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for (ch, size, k) in [(8, 64, 3), (32, 64, 5), (64, 32, 5)] {
        let x = random([1, ch, size, size], 1);
        let w = random([ch, ch, k, k], 2);
        let id = format!("{ch}ch_{size}px_k{k}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &(), |b, _| {
            b.iter(|| conv2d(black_box(&x), black_box(&w), None, 1).unwrap())
        });
        let g = conv2d(&x, &w, None, 1).unwrap();
        group.bench_with_input(BenchmarkId::new("backward", &id), &(), |b, _| {
            b.iter(|| conv2d_backward(black_box(&x), black_box(&w), 1, black_box(&g), true))
        });
    }
    group.finish();

    let x = random([1, 32, 32, 32], 3);
    let w = random([32, 16, 4, 4], 4);
    c.bench_function("conv2d_transpose/32ch_32px_k4", |b| {
        b.iter(|| conv2d_transpose(black_box(&x), black_box(&w), None, 2).unwrap())
    });
}

fn bench_resize(c: &mut Criterion) {
    let x = random([1, 3, 256, 256], 5);
    c.bench_function("bilinear_resize/256_to_128", |b| {
        b.iter(|| bilinear_resize(black_box(&x), 128, 128).unwrap())
    });
    c.bench_function("bilinear_resize/128_to_256", |b| {
        let y = random([1, 3, 128, 128], 6);
        b.iter(|| bilinear_resize(black_box(&y), 256, 256).unwrap())
    });
}

criterion_group!(benches, bench_conv, bench_resize);
criterion_main!(benches);
