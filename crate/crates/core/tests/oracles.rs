//! Production routines checked against the brute-force references in
//! `sdnc_core::oracle` on random instances.

mod common;

use rand::Rng;
use sdnc_core::cluster::kmeans;
use sdnc_core::metrics::{cpwer, der, edit_distance, wer, wilcoxon, DerConfig};
use sdnc_core::oracle;
use sdnc_core::segmentation::first_speaker_split;
use sdnc_core::{SpeakerTurn, TimeInterval, VadSegment};

use common::*;

#[test]
fn cpwer_matches_permutation_search() {
    let mut r = rng_for(1);
    for _ in 0..60 {
        let (refs, hyps) = cpwer_instance(&mut r, 5);
        let got = cpwer(&refs, &hyps);
        let rs: Vec<Vec<String>> = refs.values().cloned().collect();
        let hs: Vec<Vec<String>> = hyps.values().cloned().collect();
        let (errors, words) = oracle::cpwer_exhaustive(&rs, &hs);
        assert_eq!((got.errors, got.ref_words), (errors, words));
    }
}

#[test]
fn wer_matches_alignment_enumeration() {
    let mut r = rng_for(2);
    for _ in 0..300 {
        let a = tokens(&mut r, 8);
        let b = tokens(&mut r, 8);
        let best = oracle::edit_distance_exhaustive(&a, &b);
        assert_eq!(edit_distance(&a, &b), best);
        let w = wer(&a, &b);
        assert_eq!(w.errors, best);
        assert_eq!(w.substitutions + w.deletions + w.insertions, best);
    }
}

#[test]
fn frame_der_tracks_interval_der() {
    let mut r = rng_for(3);
    let cfg = DerConfig::default();
    for _ in 0..60 {
        let nr = r.random_range(1..=3);
        let nh = r.random_range(1..=3);
        let refs = spans(&mut r, nr, 120.0, "r");
        let hyps = perturbed_spans(&mut r, &refs, nh, 120.0);
        let exact = oracle::der_exact(&refs, &hyps, cfg.collar);
        let framed = der(&refs, &hyps, &cfg).unwrap();
        let (a, b) = (framed.der().unwrap_or(0.0), exact.der());
        assert!((a - b).abs() <= 0.002, "frame {a} exact {b}");
    }
}

#[test]
fn wilcoxon_matches_sign_enumeration() {
    let mut r = rng_for(4);
    for _ in 0..100 {
        let n = r.random_range(1..=12);
        // coarse values so that ties and zeros occur
        let d: Vec<f64> = (0..n).map(|_| r.random_range(-4i32..=4) as f64 * 0.25).collect();
        let exact = oracle::wilcoxon_exhaustive(&d);
        let got = wilcoxon(&d);
        assert!((got.p_value - exact).abs() < 1e-12, "{d:?}: {} vs {exact}", got.p_value);
    }
}

#[test]
fn kmeans_reaches_the_best_two_partition() {
    let mut r = rng_for(5);
    for _ in 0..40 {
        let pts: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let best = oracle::best_two_partition_sse(&pts);
        let got = kmeans(&pts, 2, 50, 7).unwrap();
        assert!((got.objective - best).abs() < 1e-9, "{} vs {best}", got.objective);
    }
}

#[test]
fn first_speaker_split_matches_frame_simulation() {
    let mut r = rng_for(6);
    for case in 0..50 {
        let seg = VadSegment {
            id: 1,
            interval: TimeInterval { start: 0.0, end: 10.0 },
        };
        let n = r.random_range(1..=3);
        let turns: Vec<SpeakerTurn> = (0..n)
            .map(|i| {
                // tenth-of-a-second grid keeps every boundary on a frame edge
                let s = r.random_range(0..80) as f64 / 10.0;
                let e = (s + r.random_range(5..60) as f64 / 10.0).min(10.0);
                SpeakerTurn {
                    speaker_id: format!("s{i}"),
                    interval: TimeInterval { start: s, end: e },
                    words: Vec::new(),
                }
            })
            .collect();
        let refs: Vec<&SpeakerTurn> = turns.iter().collect();
        let got = first_speaker_split(&seg, &refs).unwrap();
        let pairs: Vec<(String, TimeInterval)> = turns.iter().map(|t| (t.speaker_id.clone(), t.interval)).collect();
        let want = oracle::first_speaker_frames(&seg.interval, &pairs, 0.01);
        assert_eq!(got.len(), want.len(), "case {case}: {got:?} vs {want:?}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.speaker_id, w.0);
            assert!((g.interval.start - w.1).abs() < 1e-6 && (g.interval.end - w.2).abs() < 1e-6);
        }
    }
}
