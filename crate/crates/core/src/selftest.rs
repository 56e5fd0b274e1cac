//! Fast consistency checks: production metrics against the brute-force
//! oracles, the autodiff gradients against finite differences, decoder
//! masking and rotation invariance. Used by the `selftest` subcommand and
//! the acceptance suite.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{apply_rotation, orthogonality_error, sample_orthogonal};
use crate::cluster::{kmeans, spectral_cluster, ScConfig};
use crate::error::Result;
use crate::experiment::{meeting_data, CorpusConfig};
use crate::metrics::{cpwer, der, edit_distance, wer, wilcoxon, DerConfig};
use crate::nn::grad_check;
use crate::oracle;
use crate::rng;
use crate::sdnc::{canonical_sequence, DecodePlan, SdncConfig, SdncModel};
use crate::types::{EmbeddingSequence, LabelSequence, SpeakerSpan, TimeInterval, WindowEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Random instances for the checks.
pub mod gen {
    use super::*;

    pub const VOCAB: [&str; 5] = ["a", "b", "c", "d", "e"];

    pub fn rng_for(seed: u64) -> ChaCha8Rng {
        rng::stream(seed, &[0xacce])
    }

    pub fn tokens(r: &mut impl Rng, max_len: usize) -> Vec<String> {
        let n = r.random_range(0..=max_len);
        (0..n).map(|_| VOCAB[r.random_range(0..VOCAB.len())].to_string()).collect()
    }

    /// Reference streams keyed by speaker and hypothesis streams keyed by
    /// label, each at most six words.
    pub fn cpwer_instance(
        r: &mut impl Rng,
        max_speakers: usize,
    ) -> (BTreeMap<String, Vec<String>>, BTreeMap<usize, Vec<String>>) {
        let nr = r.random_range(1..=max_speakers);
        let nh = r.random_range(1..=max_speakers);
        let refs = (0..nr).map(|i| (format!("s{i}"), tokens(r, 6))).collect();
        let hyps = (0..nh).map(|i| (i + 1, tokens(r, 6))).collect();
        (refs, hyps)
    }

    fn ms(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    /// Speaker spans over roughly `horizon` seconds at millisecond
    /// resolution.
    pub fn spans(r: &mut impl Rng, speakers: usize, horizon: f64, prefix: &str) -> Vec<SpeakerSpan> {
        let mut out = Vec::new();
        for s in 0..speakers {
            let mut t = r.random_range(0.0..3.0);
            while t < horizon {
                let d = r.random_range(0.5..5.0);
                out.push(SpeakerSpan {
                    speaker: format!("{prefix}{s}"),
                    interval: TimeInterval {
                        start: ms(t),
                        end: ms(t + d),
                    },
                });
                t += d + r.random_range(0.5..6.0);
            }
        }
        out
    }

    /// A hypothesis derived from `refs`: boundaries jittered, some spans
    /// relabelled or dropped, a few spurious spans added.
    pub fn perturbed_spans(r: &mut impl Rng, refs: &[SpeakerSpan], labels: usize, horizon: f64) -> Vec<SpeakerSpan> {
        let mut out = Vec::new();
        for s in refs {
            if r.random_bool(0.1) {
                continue;
            }
            let start = ms((s.interval.start + r.random_range(-0.4..0.4)).max(0.0));
            let end = ms(s.interval.end + r.random_range(-0.4..0.4));
            if end <= start {
                continue;
            }
            let idx: usize = s.speaker.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(0);
            let label = if r.random_bool(0.2) { r.random_range(0..labels) } else { idx % labels };
            out.push(SpeakerSpan {
                speaker: format!("h{label}"),
                interval: TimeInterval { start, end },
            });
        }
        for _ in 0..r.random_range(0..3) {
            let start = ms(r.random_range(0.0..horizon));
            out.push(SpeakerSpan {
                speaker: format!("h{}", r.random_range(0..labels)),
                interval: TimeInterval {
                    start,
                    end: ms(start + r.random_range(0.3..2.0)),
                },
            });
        }
        out
    }

    /// Uniform random window vectors, `sizes[i]` windows in segment `i + 1`.
    pub fn random_windows(r: &mut impl Rng, sizes: &[usize], dim: usize) -> EmbeddingSequence {
        let mut windows = Vec::new();
        let mut t = 0.0;
        for (i, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                windows.push(WindowEmbedding {
                    segment_id: i + 1,
                    interval: TimeInterval { start: t, end: t + 1.5 },
                    vector: (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(),
                });
                t += 1.5;
            }
        }
        EmbeddingSequence::new("selftest".into(), windows, dim).expect("well-formed windows")
    }

    /// A canonical target with `counts[i]` distinct labels in segment `i + 1`.
    pub fn random_target(r: &mut impl Rng, counts: &[usize], k: usize) -> LabelSequence {
        let mut labels = Vec::new();
        let mut segs = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            let mut pool: Vec<usize> = (1..=k).collect();
            pool.shuffle(r);
            labels.extend(&pool[..c]);
            segs.extend(std::iter::repeat_n(i + 1, c));
        }
        canonical_sequence(&labels, segs).expect("positive labels")
    }
}

use gen::*;

/// Number of random instances per check, as (cpwer, der, wer, wilcoxon,
/// kmeans).
#[derive(Debug, Clone, Copy)]
pub struct OracleCounts {
    pub cpwer: usize,
    pub der: usize,
    pub wer: usize,
    pub wilcoxon: usize,
    pub kmeans: usize,
}

impl OracleCounts {
    pub const FULL: OracleCounts = OracleCounts {
        cpwer: 200,
        der: 100,
        wer: 300,
        wilcoxon: 100,
        kmeans: 40,
    };
    pub const QUICK: OracleCounts = OracleCounts {
        cpwer: 40,
        der: 30,
        wer: 100,
        wilcoxon: 50,
        kmeans: 20,
    };
}

pub fn metric_oracles(n: OracleCounts) -> Check {
    let mut r = rng_for(101);
    let mut cp_bad = 0;
    for _ in 0..n.cpwer {
        let (refs, hyps) = cpwer_instance(&mut r, 6);
        let got = cpwer(&refs, &hyps);
        let rs: Vec<Vec<String>> = refs.values().cloned().collect();
        let hs: Vec<Vec<String>> = hyps.values().cloned().collect();
        cp_bad += usize::from(oracle::cpwer_exhaustive(&rs, &hs) != (got.errors, got.ref_words));
    }
    let cfg = DerConfig::default();
    let mut der_worst = 0.0f64;
    for _ in 0..n.der {
        let nr = r.random_range(1..=3);
        let nh = r.random_range(1..=3);
        let refs = spans(&mut r, nr, 120.0, "r");
        let hyps = perturbed_spans(&mut r, &refs, nh, 120.0);
        let framed = der(&refs, &hyps, &cfg).map_or(f64::NAN, |d| d.der().unwrap_or(0.0));
        let exact = oracle::der_exact(&refs, &hyps, cfg.collar).der();
        let gap = (framed - exact).abs();
        der_worst = if gap.is_nan() { f64::INFINITY } else { der_worst.max(gap) };
    }
    let mut wer_bad = 0;
    for _ in 0..n.wer {
        let a = tokens(&mut r, 8);
        let b = tokens(&mut r, 8);
        let best = oracle::edit_distance_exhaustive(&a, &b);
        wer_bad += usize::from(edit_distance(&a, &b) != best || wer(&a, &b).errors != best);
    }
    let mut wil_bad = 0;
    for _ in 0..n.wilcoxon {
        let len = r.random_range(1..=12);
        let d: Vec<f64> = (0..len).map(|_| r.random_range(-4i32..=4) as f64 * 0.25).collect();
        wil_bad += usize::from((wilcoxon(&d).p_value - oracle::wilcoxon_exhaustive(&d)).abs() > 1e-12);
    }
    let mut km_bad = 0;
    for _ in 0..n.kmeans {
        let pts: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let best = oracle::best_two_partition_sse(&pts);
        km_bad += usize::from(kmeans(&pts, 2, 50, 7).map_or(true, |k| (k.objective - best).abs() > 1e-9));
    }
    Check {
        name: "metric oracles".into(),
        passed: cp_bad == 0 && der_worst <= 0.002 && wer_bad == 0 && wil_bad == 0 && km_bad == 0,
        detail: format!(
            "cpwer mismatches {cp_bad}/{}, worst |DER frame - exact| {der_worst:.5} over {}, WER mismatches {wer_bad}/{}, Wilcoxon mismatches {wil_bad}/{}, k-means misses {km_bad}/{}",
            n.cpwer, n.der, n.wer, n.wilcoxon, n.kmeans
        ),
    }
}

/// Every parameter of a tiny model against central differences.
pub fn gradient_check() -> Check {
    let cfg = SdncConfig {
        input_dim: 4,
        dim_model: 8,
        num_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ffn_dim: 16,
        max_clusters: 3,
        ..Default::default()
    };
    let result = (|| -> Result<_> {
        let model = SdncModel::new(cfg, 11)?;
        let seq = random_windows(&mut rng_for(102), &[2, 3, 2], 4);
        let plan = DecodePlan::new(vec![1, 2, 1])?;
        let target = LabelSequence::new(vec![1, 2, 1, 3], vec![1, 2, 2, 3])?;
        grad_check(|g, p| model.loss_graph(g, p, &seq, &plan, &target, None), &model.params, 1e-5, 1e-4)
    })();
    let (passed, detail) = match result {
        Ok(rep) => (
            rep.passed(),
            format!(
                "{} parameters, worst relative error {:.2e} in {}",
                rep.per_param.len(),
                rep.worst_error,
                rep.worst_param
            ),
        ),
        Err(e) => (false, e.to_string()),
    };
    Check {
        name: "gradient check".into(),
        passed,
        detail,
    }
}

/// Perturbing the encoder features of segments after the first must leave
/// the first segment's slot logits bit-identical.
pub fn masking_locality(instances: usize) -> Check {
    let cfg = SdncConfig {
        dim_model: 32,
        ffn_dim: 64,
        ..Default::default()
    };
    let run = || -> Result<usize> {
        let model = SdncModel::new(cfg.clone(), 12)?;
        let mut r = rng_for(103);
        let mut identical = 0;
        for _ in 0..instances {
            let m = r.random_range(2..=6);
            let sizes: Vec<usize> = (0..m).map(|_| r.random_range(1..=5)).collect();
            let counts: Vec<usize> = (0..m).map(|_| r.random_range(1..=3)).collect();
            let seq = random_windows(&mut r, &sizes, cfg.input_dim);
            let plan = DecodePlan::new(counts.clone())?;
            let target = random_target(&mut r, &counts, cfg.max_clusters);
            let enc = model.encode(&seq)?;
            let mut perturbed = enc.clone();
            for (row, &sid) in enc.segment_ids.iter().enumerate() {
                if sid != 1 {
                    for x in perturbed.features.row_mut(row) {
                        *x += r.random_range(-5.0..5.0);
                    }
                }
            }
            let (a, _) = model.decode_teacher_forced(&enc, &plan, &target)?;
            let (b, _) = model.decode_teacher_forced(&perturbed, &plan, &target)?;
            let same = (0..counts[0]).all(|t| a.row(t).iter().zip(b.row(t)).all(|(x, y)| x.to_bits() == y.to_bits()));
            identical += usize::from(same);
        }
        Ok(identical)
    };
    let (passed, detail) = match run() {
        Ok(k) => (k == instances, format!("segment-1 logits bit-identical on {k}/{instances} instances")),
        Err(e) => (false, e.to_string()),
    };
    Check {
        name: "masking locality".into(),
        passed,
        detail,
    }
}

/// Orthogonality of sampled rotations and spectral clustering labels
/// unchanged by rotating the embeddings.
pub fn rotation_invariants(instances: u64) -> Check {
    let mut worst = 0.0f64;
    for (i, dim) in [2usize, 3, 8, 16, 32].iter().enumerate() {
        for s in 0..10 {
            worst = worst.max(orthogonality_error(sample_orthogonal(*dim, (i * 100 + s) as u64).entries()));
        }
    }
    let corpus = CorpusConfig::default();
    let sc = ScConfig::default();
    let run = || -> Result<u64> {
        let mut equal = 0;
        for seed in 0..instances {
            let d = meeting_data(&corpus, 500 + seed)?;
            let q = sample_orthogonal(d.seq.dim, 7000 + seed);
            let rotated = apply_rotation(&d.seq, &q)?;
            equal += u64::from(spectral_cluster(&d.seq, &sc)? == spectral_cluster(&rotated, &sc)?);
        }
        Ok(equal)
    };
    let (passed, detail) = match run() {
        Ok(k) => (
            worst <= 1e-6 && k == instances,
            format!("max |QtQ - I| {worst:.2e}; SC labels equal after rotation on {k}/{instances}"),
        ),
        Err(e) => (false, e.to_string()),
    };
    Check {
        name: "rotation invariants".into(),
        passed,
        detail,
    }
}

/// The quick variant of every check.
pub fn run_all() -> Vec<Check> {
    vec![
        metric_oracles(OracleCounts::QUICK),
        gradient_check(),
        masking_locality(20),
        rotation_invariants(5),
    ]
}
