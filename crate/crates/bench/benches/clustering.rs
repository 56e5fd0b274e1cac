use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sdnc_core::cluster::spectral_cluster;
use sdnc_core::sdnc::finetune_example;
use sdnc_core::{ScConfig, SdncConfig, SdncModel};

fn clustering(c: &mut Criterion) {
    let d = sdnc_bench::meeting();
    let sc = ScConfig::default();
    let mut g = c.benchmark_group("meeting");
    g.sample_size(20);
    g.bench_function("spectral_cluster", |b| b.iter(|| spectral_cluster(black_box(&d.seq), &sc).unwrap()));

    let model = SdncModel::new(SdncConfig::default(), 0).unwrap();
    let ex = finetune_example(&d.meeting, &d.seq).unwrap();
    g.bench_function("sdnc_encode", |b| b.iter(|| model.encode(black_box(&ex.seq)).unwrap()));
    g.bench_function("sdnc_predict", |b| b.iter(|| model.predict(black_box(&ex.seq), &ex.plan).unwrap()));
    g.finish();
}

criterion_group!(benches, clustering);
criterion_main!(benches);
