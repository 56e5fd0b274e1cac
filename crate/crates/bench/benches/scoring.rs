use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sdnc_core::metrics::{cpwer, der, reference_spans, reference_words, wer};
use sdnc_core::DerConfig;

fn scoring(c: &mut Criterion) {
    let d = sdnc_bench::meeting();
    let out = sdnc_bench::cascaded(&d);
    let refs = reference_words(&d.meeting, None);
    let hyps = out.transcript.words_by_label();
    c.bench_function("cpwer/meeting", |b| b.iter(|| cpwer(black_box(&refs), black_box(&hyps))));

    let r: Vec<String> = refs.values().flatten().cloned().collect();
    let h: Vec<String> = hyps.values().flatten().cloned().collect();
    c.bench_function("wer/meeting", |b| b.iter(|| wer(black_box(&r), black_box(&h))));

    let ref_spans = reference_spans(&d.meeting, None);
    let cfg = DerConfig::default();
    c.bench_function("der/meeting", |b| {
        b.iter(|| der(black_box(&ref_spans), black_box(&out.hyp_spans), &cfg).unwrap())
    });
}

criterion_group!(benches, scoring);
criterion_main!(benches);
