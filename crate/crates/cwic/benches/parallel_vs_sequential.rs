//! Compares the data-parallel code paths against their sequential
//! counterparts: raw convolution, one-pass PMF prediction, batched training
//! steps, and the two decoder scheduling modes.  Build with
//! `--no-default-features` to force the sequential fallback everywhere and
//! compare against the rayon-backed default.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cwic::autoenc::{ModelBundle, NetworkConfig, Trainer, TrainerOptions};
use cwic::codec::{decode_cuboid, encode_cuboid, DecodeMode};
use cwic::container::TrainedModel;
use cwic::entropy::{CodeCuboid, OrderKind, TcaeConfig, TcaeModel};
use cwic::importance::{ImportanceConfig, QuantizedImportanceMap};
use cwic::tensor::{conv2d_forward_par, ConvLayerParams, FeatureCuboid};

fn mode_label(parallel: bool) -> &'static str {
    if parallel {
        "parallel"
    } else {
        "sequential"
    }
}

fn random_cuboid(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureCuboid {
    let mut x = FeatureCuboid::zeros(c, h, w);
    for v in x.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    x
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let input = random_cuboid(&mut rng, 8, 64, 64);
    let params = ConvLayerParams::init_random(&mut rng, 8, 8, 3, 3, 1, 1);
    let mut g = c.benchmark_group("conv2d_8x64x64_k3");
    for parallel in [false, true] {
        g.bench_with_input(BenchmarkId::from_parameter(mode_label(parallel)), &parallel, |b, &p| {
            b.iter(|| conv2d_forward_par(black_box(&input), black_box(&params), p).unwrap())
        });
    }
    g.finish();
}

fn small_context_model(rng: &mut ChaCha8Rng, channels: usize, alphabet: usize) -> TcaeModel {
    let mut cfg = TcaeConfig::new(channels, alphabet, OrderKind::Inclined);
    cfg.groups = 2;
    cfg.residual_blocks = 1;
    cfg.kernel = 3;
    TcaeModel::init(cfg, rng).expect("model")
}

fn bench_predict_pmfs(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let model = small_context_model(&mut rng, 4, 5);
    let symbols: Vec<u16> = (0..4 * 16 * 16).map(|_| rng.random_range(0..5)).collect();
    let codes = CodeCuboid::from_symbols(4, 16, 16, 5, symbols).expect("codes");
    let mut g = c.benchmark_group("predict_pmfs_4x16x16");
    for parallel in [false, true] {
        g.bench_with_input(BenchmarkId::from_parameter(mode_label(parallel)), &parallel, |b, &p| {
            b.iter(|| model.predict_pmfs(black_box(&codes), p).unwrap())
        });
    }
    g.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(602);
    let network = NetworkConfig {
        stage_channels: [2, 3, 4],
        code_channels: 4,
        sub_blocks: 1,
        importance_blocks: 1,
    };
    let importance = ImportanceConfig::new(2, 4, 0.5, 1e-3).expect("config");
    let batch: Vec<FeatureCuboid> =
        (0..4).map(|_| random_cuboid(&mut rng, 3, 16, 16).map(|v| 0.5 + 0.4 * v)).collect();
    let mut g = c.benchmark_group("train_step_batch4_16x16");
    g.sample_size(20);
    for parallel in [false, true] {
        g.bench_with_input(BenchmarkId::from_parameter(mode_label(parallel)), &parallel, |b, &p| {
            let bundle = ModelBundle::init(network.clone(), importance, 4, 7).expect("bundle");
            let options = TrainerOptions { parallel: p, ..TrainerOptions::default() };
            let mut trainer = Trainer::new(bundle, options).expect("trainer");
            b.iter(|| trainer.train_step(black_box(&batch)).unwrap())
        });
    }
    g.finish();
}

fn bench_decode_modes(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(603);
    let network = NetworkConfig {
        stage_channels: [2, 3, 4],
        code_channels: 4,
        sub_blocks: 1,
        importance_blocks: 1,
    };
    let importance = ImportanceConfig::new(2, 4, 0.5, 1e-3).expect("config");
    let bundle = ModelBundle::init(network, importance, 4, 8).expect("bundle");
    let model = TrainedModel::new(
        bundle,
        small_context_model(&mut rng, 4, 5),
        small_context_model(&mut rng, 1, 2),
    )
    .expect("model");
    let symbols: Vec<u16> = (0..4 * 8 * 8).map(|_| rng.random_range(0..4)).collect();
    let levels = CodeCuboid::from_symbols(4, 8, 8, 4, symbols).expect("levels");
    let qi_levels: Vec<u16> = (0..64).map(|_| rng.random_range(0..2)).collect();
    let qi = QuantizedImportanceMap::from_levels(8, 8, 2, qi_levels).expect("importance");
    let stream = encode_cuboid(&model, &levels, &qi, (64, 64), false).expect("encode");
    let mut g = c.benchmark_group("decode_4x8x8");
    g.sample_size(10);
    for (label, mode) in
        [("plane_batched", DecodeMode::PlaneBatched), ("per_position", DecodeMode::PerPosition)]
    {
        g.bench_with_input(BenchmarkId::from_parameter(label), &mode, |b, &m| {
            b.iter(|| decode_cuboid(&model, black_box(&stream), m, false).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_conv, bench_predict_pmfs, bench_train_step, bench_decode_modes);
criterion_main!(benches);
