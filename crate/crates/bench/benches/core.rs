use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use wmlff_core::datagen::{self, PlantedConfig};
use wmlff_core::eval;
use wmlff_core::features::{piecewise_log, EncodedDataset, FeatureSchema};
use wmlff_core::model::{ModelConfig, WmlffModel};
use wmlff_core::numerics::{Rng, Tape};
use wmlff_core::training::{batch_loss, LossKind};

fn planted_encoded(rows: usize) -> EncodedDataset {
    let planted = datagen::generate(&PlantedConfig::new(rows, 17)).unwrap();
    let outcome = FeatureSchema::fit(&datagen::planted_schema_config(), &planted.raw).unwrap();
    outcome.schema.encode(&planted.raw).unwrap()
}

fn default_model(data: &EncodedDataset) -> WmlffModel {
    let cfg = ModelConfig::new(data.cardinalities.clone(), data.n_num);
    WmlffModel::init(cfg, &mut Rng::new(11)).unwrap()
}

fn bench_encode(c: &mut Criterion) {
    let planted = datagen::generate(&PlantedConfig::new(4096, 17)).unwrap();
    let outcome = FeatureSchema::fit(&datagen::planted_schema_config(), &planted.raw).unwrap();
    c.bench_function("encode_4096_rows", |b| {
        b.iter(|| outcome.schema.encode(black_box(&planted.raw)).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let data = planted_encoded(1024);
    let model = default_model(&data);
    c.bench_function("forward_row", |b| {
        let mut i = 0;
        b.iter(|| {
            let mut tape = Tape::new();
            let out = model
                .forward(&mut tape, data.row_c(i), data.row_n(i), None)
                .unwrap();
            i = (i + 1) % data.n_rows;
            black_box(out.logits)
        })
    });
}

fn bench_batch_backward(c: &mut Criterion) {
    let data = planted_encoded(1024);
    let model = default_model(&data);
    let rows: Vec<usize> = (0..256).collect();
    c.bench_function("batch_256_loss_and_gradients", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let mut noise = Rng::new(3);
            let loss = batch_loss(
                &model,
                &mut tape,
                &data,
                &rows,
                LossKind::JointBce,
                Some(&mut noise),
            )
            .unwrap();
            black_box(tape.backward(model.params(), loss).unwrap())
        })
    });
}

fn bench_auc(c: &mut Criterion) {
    let mut rng = Rng::new(29);
    let p: Vec<f64> = (0..100_000).map(|_| rng.uniform(0.0, 1.0)).collect();
    let y: Vec<f64> = p
        .iter()
        .map(|&v| if rng.uniform(0.0, 1.0) < v { 1.0 } else { 0.0 })
        .collect();
    c.bench_function("auc_100k", |b| {
        b.iter(|| eval::auc(black_box(&p), black_box(&y)).unwrap())
    });
}

fn bench_piecewise_log(c: &mut Criterion) {
    let mut rng = Rng::new(41);
    let xs: Vec<f64> = (0..4096).map(|_| rng.uniform(-1e6, 1e6)).collect();
    c.bench_function("piecewise_log_4096", |b| {
        b.iter(|| xs.iter().map(|&x| piecewise_log(black_box(x))).sum::<f64>())
    });
}

criterion_group!(
    benches,
    bench_encode,
    bench_forward,
    bench_batch_backward,
    bench_auc,
    bench_piecewise_log
);
criterion_main!(benches);
