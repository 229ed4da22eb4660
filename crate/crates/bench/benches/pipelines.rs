//! Benchmarks for the hot paths: filterbank design, GCC-PHAT features,
//! model forward passes and anechoic BRIR synthesis.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use waveloc_core::audio::{BinauralFrame, FRAME_LEN};
use waveloc_core::dsp::{gammatone::design_gammatone_bank, gcc_phat};
use waveloc_core::models::{build_model, predict_frame, ModelConfig, ModelInput, ModelKind};
use waveloc_core::sim::synth_anechoic_brir;

fn random_frame(rng: &mut ChaCha8Rng) -> BinauralFrame {
    let left: Vec<f32> = (0..FRAME_LEN).map(|_| rng.random_range(-0.5..0.5)).collect();
    let right: Vec<f32> = (0..FRAME_LEN).map(|_| rng.random_range(-0.5..0.5)).collect();
    BinauralFrame::from_slices(&left, &right).unwrap()
}

fn bench_gammatone(c: &mut Criterion) {
    c.bench_function("design_gammatone_bank", |b| {
        b.iter(|| black_box(design_gammatone_bank()))
    });
}

fn bench_gcc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frame = random_frame(&mut rng);
    c.bench_function("gcc_phat_frame", |b| b.iter(|| black_box(gcc_phat(&frame))));
}

fn bench_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frame = random_frame(&mut rng);
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for kind in [ModelKind::WavelocGtf, ModelKind::WavelocConv] {
        let model = build_model(&ModelConfig::new(kind, 3)).unwrap();
        group.bench_function(kind.as_str(), |b| {
            b.iter(|| black_box(predict_frame(&model, ModelInput::Frame(&frame)).unwrap()))
        });
    }
    let baseline = build_model(&ModelConfig::new(ModelKind::GccBaseline, 3)).unwrap();
    let feature = gcc_phat(&frame);
    group.bench_function("gcc_baseline", |b| {
        b.iter(|| black_box(predict_frame(&baseline, ModelInput::Gcc(&feature)).unwrap()))
    });
    group.finish();
}

fn bench_brir(c: &mut Criterion) {
    c.bench_function("synth_anechoic_brir_45deg", |b| {
        b.iter(|| black_box(synth_anechoic_brir(45).unwrap()))
    });
}

criterion_group!(benches, bench_gammatone, bench_gcc, bench_forward, bench_brir);
criterion_main!(benches);
