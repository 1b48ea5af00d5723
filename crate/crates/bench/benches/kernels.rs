use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kbae_core::channel::{generate_phase_dataset, ChannelConfig};
use kbae_core::codebook::{encode_bits, IndexVector};
use kbae_core::pipeline::{train_on, TrainConfig};
use kbae_core::tensor::{conv2d, LayerParams};
use kbae_core::{Codebook, Dataset, Dims, ModelConfig, Tensor4};

fn filled(n: usize, c: usize, h: usize, w: usize, salt: usize) -> Tensor4 {
    let mut t = Tensor4::zeros(Dims::new(n, c, h, w));
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = (((i * 7919 + salt) % 1000) as f64 / 500.0) - 1.0;
    }
    t
}

fn conv_forward(c: &mut Criterion) {
    // Largest PSFNet encoder layer: 16 → 16 channels, 3×3, on 32×32.
    let x = filled(1, 16, 32, 32, 1);
    let layer = LayerParams::conv2d(filled(16, 16, 3, 3, 2), vec![0.0; 16], 1, 1).unwrap();
    c.bench_function("conv2d 16x32x32 k3", |b| {
        b.iter(|| conv2d(black_box(&x), &layer).unwrap())
    });
}

fn nearest_index(c: &mut Criterion) {
    let codebook = Codebook::init(1024, 16, 3).unwrap();
    let queries: Vec<f64> = (0..64 * 16).map(|i| ((i * 31 % 97) as f64) / 97.0).collect();
    c.bench_function("nearest 64 queries Z=1024 K=16", |b| {
        b.iter(|| codebook.nearest_all(black_box(&queries)).unwrap())
    });
}

fn bit_encode(c: &mut Criterion) {
    let indices: Vec<usize> = (0..64).map(|i| (i * 37) % 256).collect();
    let iv = IndexVector::from_usize(&indices, 256).unwrap();
    c.bench_function("encode 64 indices of 8 bits", |b| {
        b.iter(|| encode_bits(black_box(&iv)))
    });
}

fn training_step(c: &mut Criterion) {
    let side = 32;
    let samples = generate_phase_dataset(&ChannelConfig::new(side, 1), 100).unwrap();
    let train = Dataset::new(side, samples).unwrap();
    let mut cfg = TrainConfig::new(ModelConfig::psfnet(side, 16, 256), 7);
    cfg.epochs = 1;
    cfg.batch_size = 100;
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one step PSFNet C=16 batch 100", |b| {
        b.iter_batched(
            || cfg.clone(),
            |cfg| train_on(&cfg, &train, None).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, conv_forward, nearest_index, bit_encode, training_step);
criterion_main!(benches);
