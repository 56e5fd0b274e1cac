//! Property tests for the invariants of the data model, segmentation,
//! augmentation, decoder plumbing and scorers.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::*;
use sdnc_core::augment::{apply_rotation, sample_orthogonal, speaker_shuffle};
use sdnc_core::cluster::split_by_labels;
use sdnc_core::io::{format_rttm, load_meeting, parse_rttm, save_meeting};
use sdnc_core::metrics::{cpwer, der, wer};
use sdnc_core::sdnc::{build_cross_mask, canonicalize, finetune_example, segment_speakers_by_first_speech};
use sdnc_core::segmentation::slice_windows;
use sdnc_core::synth::{gen_embeddings, gen_meeting, meeting_prototypes, sot_simulate};
use sdnc_core::{
    DecodePlan, DerConfig, SdncConfig, SdncModel, SpeakerSpan, SynthConfig, TimeInterval, VadSegment, WindowingConfig,
};

fn tiny_model() -> SdncModel {
    let cfg = SdncConfig {
        input_dim: 4,
        dim_model: 8,
        num_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ffn_dim: 16,
        max_clusters: 4,
        ..Default::default()
    };
    SdncModel::new(cfg, 3).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonicalize_is_idempotent_and_contiguous(labels in prop::collection::vec(1usize..9, 0..40)) {
        let c = canonicalize(&labels);
        prop_assert_eq!(canonicalize(&c), c.clone());
        let mut next = 1;
        for &l in &c {
            prop_assert!(l <= next);
            if l == next {
                next += 1;
            }
        }
        // equal inputs stay equal and distinct inputs stay distinct
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                prop_assert_eq!(labels[i] == labels[j], c[i] == c[j]);
            }
        }
    }

    #[test]
    fn greedy_output_length_is_the_sum_of_counts(
        sizes in prop::collection::vec(1usize..5, 1..6),
        counts_seed in any::<u64>(),
    ) {
        let mut r = rng_for(counts_seed);
        let seq = random_windows(&mut r, &sizes, 4);
        let counts: Vec<usize> = sizes.iter().map(|_| rand::Rng::random_range(&mut r, 1..=4)).collect();
        let plan = DecodePlan::new(counts.clone()).unwrap();
        let out = tiny_model().predict(&seq, &plan).unwrap();
        prop_assert_eq!(out.labels.len(), counts.iter().sum::<usize>());
        prop_assert_eq!(canonicalize(&out.labels), out.labels.clone());
        for (i, &k) in counts.iter().enumerate() {
            prop_assert_eq!(out.slot_segment_ids.iter().filter(|&&s| s == i + 1).count(), k);
        }
    }

    #[test]
    fn cross_mask_rows_see_exactly_their_segment(
        sizes in prop::collection::vec(1usize..6, 1..7),
        counts in prop::collection::vec(1usize..4, 7),
    ) {
        let mut r = rng_for(sizes.len() as u64);
        let seq = random_windows(&mut r, &sizes, 2);
        let plan = DecodePlan::new(counts[..sizes.len()].to_vec()).unwrap();
        let mask = build_cross_mask(&seq, &plan).unwrap();
        prop_assert_eq!(mask.rows(), plan.output_len());
        let ranges = seq.segment_ranges();
        let mut t = 0;
        for (i, &k) in plan.counts.iter().enumerate() {
            for _ in 0..k {
                prop_assert_eq!(mask.row_count(t), sizes[i]);
                for j in 0..seq.len() {
                    prop_assert_eq!(mask.allowed(t, j), ranges[i].1.contains(&j));
                }
                t += 1;
            }
        }
    }

    #[test]
    fn rotation_preserves_inner_products(dim in 2usize..12, seed in any::<u64>()) {
        let mut r = rng_for(seed);
        let seq = random_windows(&mut r, &[3, 2], dim);
        let q = sample_orthogonal(dim, seed);
        let rot = apply_rotation(&seq, &q).unwrap();
        for a in 0..seq.len() {
            for b in 0..seq.len() {
                let before = dot(&seq.windows[a].vector, &seq.windows[b].vector);
                let after = dot(&rot.windows[a].vector, &rot.windows[b].vector);
                prop_assert!((before - after).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn speaker_shuffle_keeps_the_canonical_target(index in 0u64..500, seed in any::<u64>()) {
        let cfg = SynthConfig { embed_noise_sigma: 0.0, overlap_prob: 0.0, num_segments: 12, ..Default::default() };
        let m = gen_meeting(&cfg, index).unwrap();
        let seq = gen_embeddings(&m, &cfg, &WindowingConfig::default()).unwrap();
        let speakers: BTreeMap<usize, Vec<String>> = m
            .vad_segments
            .iter()
            .map(|s| (s.id, segment_speakers_by_first_speech(&m, s.id).unwrap()))
            .collect();
        let shuffled = speaker_shuffle(&seq, &speakers, seed).unwrap();
        let protos = meeting_prototypes(&m, &cfg).unwrap();
        let proto_of = |v: &[f64]| protos.iter().position(|p| p.as_slice() == v).expect("vector is a prototype");
        let mut per_segment = Vec::new();
        for (_, range) in shuffled.segment_ranges() {
            let ids: Vec<usize> = shuffled.windows[range].iter().map(|w| proto_of(&w.vector)).collect();
            prop_assert!(ids.iter().all(|&i| i == ids[0]), "a moved block mixes speakers");
            per_segment.push(ids[0] + 1);
        }
        let target = finetune_example(&m, &seq).unwrap().target;
        prop_assert_eq!(canonicalize(&per_segment), target.labels);
    }

    #[test]
    fn split_by_labels_tiles_the_segment(
        start in 0.0f64..50.0,
        len in 0.2f64..12.0,
        labels_seed in any::<u64>(),
    ) {
        let seg = VadSegment { id: 1, interval: TimeInterval { start, end: start + len } };
        let windows = slice_windows(&seg.interval, &WindowingConfig::default()).unwrap();
        let mut r = rng_for(labels_seed);
        let labels: Vec<usize> = windows.iter().map(|_| rand::Rng::random_range(&mut r, 1..4)).collect();
        let runs = split_by_labels(&seg, &windows, &labels).unwrap();
        prop_assert_eq!(runs.first().unwrap().0.start, seg.interval.start);
        prop_assert_eq!(runs.last().unwrap().0.end, seg.interval.end);
        for pair in runs.windows(2) {
            prop_assert_eq!(pair[0].0.end, pair[1].0.start);
            prop_assert_ne!(pair[0].1, pair[1].1);
        }
        prop_assert!(runs.iter().all(|(i, _)| i.end > i.start));
    }

    #[test]
    fn slice_windows_are_ordered_and_inside(start in 0.0f64..50.0, len in 0.0f64..20.0, stride in 0.5f64..2.0) {
        let cfg = WindowingConfig { window_len: 1.5, stride, min_window: 0.05 };
        let iv = TimeInterval { start, end: start + len };
        let w = slice_windows(&iv, &cfg).unwrap();
        for x in &w {
            prop_assert!(x.start >= iv.start && x.end <= iv.end + 1e-12 && x.end > x.start);
        }
        for p in w.windows(2) {
            prop_assert!(p[0].start < p[1].start);
            if stride >= cfg.window_len {
                prop_assert!(p[0].end <= p[1].start + 1e-12);
            }
        }
    }

    #[test]
    fn scores_ignore_hypothesis_label_names(seed in any::<u64>()) {
        let mut r = rng_for(seed);
        let (refs, hyps) = cpwer_instance(&mut r, 5);
        let mut names: Vec<usize> = (10..10 + hyps.len()).collect();
        names.shuffle(&mut r);
        let renamed: BTreeMap<usize, Vec<String>> =
            hyps.values().cloned().zip(names.iter().copied()).map(|(v, k)| (k, v)).collect();
        prop_assert_eq!(cpwer(&refs, &hyps).errors, cpwer(&refs, &renamed).errors);

        let ref_spans = spans(&mut r, 3, 60.0, "r");
        let hyp_spans = perturbed_spans(&mut r, &ref_spans, 3, 60.0);
        let relabeled: Vec<SpeakerSpan> = hyp_spans
            .iter()
            .map(|s| SpeakerSpan { speaker: format!("{}-x", s.speaker), interval: s.interval })
            .collect();
        let cfg = DerConfig::default();
        prop_assert_eq!(
            der(&ref_spans, &hyp_spans, &cfg).unwrap().der(),
            der(&ref_spans, &relabeled, &cfg).unwrap().der()
        );
    }

    #[test]
    fn cpwer_is_at_most_any_fixed_mapping(seed in any::<u64>()) {
        let mut r = rng_for(seed);
        let (refs, hyps) = cpwer_instance(&mut r, 4);
        let best = cpwer(&refs, &hyps).errors;
        let mut hyp_streams: Vec<Vec<String>> = hyps.values().cloned().collect();
        let n = refs.len().max(hyp_streams.len());
        hyp_streams.resize(n, Vec::new());
        hyp_streams.shuffle(&mut r);
        let mut ref_streams: Vec<Vec<String>> = refs.values().cloned().collect();
        ref_streams.resize(n, Vec::new());
        let fixed: usize = ref_streams.iter().zip(&hyp_streams).map(|(a, b)| wer(a, b).errors).sum();
        prop_assert!(best <= fixed);
    }

    #[test]
    fn sot_count_matches_change_tokens(index in 0u64..200, p in 0.0f64..1.0, seed in any::<u64>()) {
        let cfg = SynthConfig { num_segments: 8, ..Default::default() };
        let m = gen_meeting(&cfg, index).unwrap();
        for s in &m.vad_segments {
            let sot = sot_simulate(&m, s.id, p, seed);
            let changes = sot.token_stream.iter().filter(|t| *t == "<sc>").count();
            prop_assert_eq!(sot.speaker_count, changes + 1);
            prop_assert_eq!(sot.groups().len(), sot.speaker_count);
        }
    }

    #[test]
    fn meetings_and_rttm_round_trip(index in 0u64..200) {
        let cfg = SynthConfig { num_segments: 6, ..Default::default() };
        let m = gen_meeting(&cfg, index).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_meeting(&m, &path).unwrap();
        prop_assert_eq!(&load_meeting(&path).unwrap(), &m);

        let mut r = rng_for(index);
        let s = spans(&mut r, 3, 40.0, "spk");
        // RTTM stores times at 10 ms resolution
        let back = parse_rttm(&format_rttm("m", &s), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), s.len());
        let order = |v: &[SpeakerSpan]| {
            let mut v = v.to_vec();
            v.sort_by(|a, b| a.speaker.cmp(&b.speaker).then(a.interval.start.total_cmp(&b.interval.start)));
            v
        };
        for (a, b) in order(&back).iter().zip(&order(&s)) {
            prop_assert_eq!(&a.speaker, &b.speaker);
            prop_assert!((a.interval.start - b.interval.start).abs() <= 0.005 + 1e-9);
            prop_assert!((a.interval.end - b.interval.end).abs() <= 0.01 + 1e-9);
        }
    }
}

/// The angle of a Haar-random 2-D rotation or reflection is uniform on the
/// circle; a Kolmogorov-Smirnov statistic below 0.05 over 1000 samples is
/// well inside the 5% critical value of about 0.043 plus slack.
#[test]
fn two_dimensional_haar_angles_are_uniform() {
    let n = 1000;
    let mut angles: Vec<f64> = (0..n)
        .map(|s| {
            let q = sample_orthogonal(2, s);
            let m = q.entries();
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            assert!((det.abs() - 1.0).abs() < 1e-12, "det {det}");
            m[(1, 0)].atan2(m[(0, 0)])
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let ks = angles
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let cdf = (a + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
            (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "KS statistic {ks}");
}
