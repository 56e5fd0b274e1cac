//! The cascaded (clustering, then ASR on predicted speaker runs) and
//! parallel (SOT alongside a clusterer driven by SOT speaker counts)
//! transcription systems, plus per-meeting scoring and system comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cluster::{majority_vote, spectral_cluster, split_by_labels, ScConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    self, cpwer, cpwer_p, der, homogeneous_ids, reference_spans, reference_words,
    transcript_subset, wer, DerConfig, PermutationSearch,
};
use crate::rng::{self, tag};
use crate::sdnc::{DecodePlan, SdncModel};
use crate::segmentation::WindowingConfig;
use crate::synth::{asr_simulate, corrupt_tokens, meeting_key, sot_simulate, SotOutput};
use crate::types::{
    EmbeddingSequence, LabelSequence, Meeting, SpeakerAttributedTranscript, SpeakerSpan, TranscriptEntry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CascadedSc,
    ParallelSdnc,
    ParallelSc,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CascadedSc => "cascaded_sc",
            Mode::ParallelSdnc => "parallel_sdnc",
            Mode::ParallelSc => "parallel_sc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub sot_count_error_prob: f64,
    pub asr_sub_prob: f64,
    pub asr_del_prob: f64,
    pub windowing: WindowingConfig,
    pub sc: ScConfig,
    pub der: DerConfig,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::ParallelSdnc,
            sot_count_error_prob: 0.05,
            asr_sub_prob: 0.05,
            asr_del_prob: 0.0,
            windowing: WindowingConfig::default(),
            sc: ScConfig::default(),
            der: DerConfig::default(),
            checkpoint: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("sot_count_error_prob", self.sot_count_error_prob),
            ("asr_sub_prob", self.asr_sub_prob),
            ("asr_del_prob", self.asr_del_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        self.windowing.validate()?;
        self.sc.validate()?;
        self.der.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flag {
    /// The SOT count exceeded the decoder's label capacity.
    CountClamped { segment_id: usize, from: usize, to: usize },
    /// Fewer clustered labels than SOT speakers; labels were added.
    Padded { segment_id: usize, from: usize, to: usize },
    /// More clustered labels than SOT speakers; labels were dropped.
    Truncated { segment_id: usize, from: usize, to: usize },
}

/// Everything one system produces for one meeting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub meeting_id: String,
    pub mode: Mode,
    pub transcript: SpeakerAttributedTranscript,
    /// Hypothesis speaker activity for DER.
    pub hyp_spans: Vec<SpeakerSpan>,
    /// Hypothesis activity restricted to reference-homogeneous segments,
    /// for DER-H.
    pub hyp_spans_h: Vec<SpeakerSpan>,
    /// Per-slot labels of the parallel systems.
    pub slot_labels: Option<LabelSequence>,
    pub flags: Vec<Flag>,
}

fn segment_windows(seq: &EmbeddingSequence, meeting: &Meeting) -> Result<BTreeMap<usize, std::ops::Range<usize>>> {
    let ranges: BTreeMap<usize, std::ops::Range<usize>> = seq.segment_ranges().into_iter().collect();
    for seg in &meeting.vad_segments {
        if !ranges.contains_key(&seg.id) {
            return Err(Error::NoWindows(seg.id));
        }
    }
    Ok(ranges)
}

fn restrict_spans(spans: &[SpeakerSpan], meeting: &Meeting, ids: &BTreeSet<usize>) -> Vec<SpeakerSpan> {
    let mut out = Vec::new();
    for &id in ids {
        let Some(seg) = meeting.segment(id) else { continue };
        for s in spans {
            let (a, b) = (s.interval.start.max(seg.interval.start), s.interval.end.min(seg.interval.end));
            if b > a {
                out.push(SpeakerSpan {
                    speaker: s.speaker.clone(),
                    interval: crate::types::TimeInterval { start: a, end: b },
                });
            }
        }
    }
    out
}

/// Cascaded system: cluster windows, split each segment into predicted
/// single-speaker runs, and transcribe each run.
pub fn run_cascaded(meeting: &Meeting, seq: &EmbeddingSequence, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let labels = spectral_cluster(seq, &cfg.sc)?;
    cascade_with_labels(meeting, seq, &labels, cfg)
}

/// The cascaded system downstream of clustering, for any per-window labels.
pub fn cascade_with_labels(
    meeting: &Meeting,
    seq: &EmbeddingSequence,
    labels: &[usize],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    if labels.len() != seq.len() {
        return Err(Error::Validation(format!(
            "{} window labels for {} windows",
            labels.len(),
            seq.len()
        )));
    }
    let ranges = segment_windows(seq, meeting)?;
    let mut entries = Vec::new();
    let mut spans = Vec::new();
    for seg in &meeting.vad_segments {
        let r = ranges[&seg.id].clone();
        let windows: Vec<_> = seq.windows[r.clone()].iter().map(|w| w.interval).collect();
        for (interval, label) in split_by_labels(seg, &windows, &labels[r])? {
            let words = asr_simulate(meeting, &interval, cfg.asr_sub_prob, cfg.asr_del_prob, cfg.seed);
            entries.push(TranscriptEntry {
                segment_id: seg.id,
                speaker_label: label,
                words,
            });
            spans.push(SpeakerSpan {
                speaker: label.to_string(),
                interval,
            });
        }
    }
    let h_ids = homogeneous_ids(meeting);
    Ok(PipelineOutput {
        meeting_id: meeting.meeting_id.clone(),
        mode: Mode::CascadedSc,
        transcript: SpeakerAttributedTranscript::new(entries)?,
        hyp_spans_h: restrict_spans(&spans, meeting, &h_ids),
        hyp_spans: spans,
        slot_labels: None,
        flags: Vec::new(),
    })
}

/// SOT output of every segment with ASR noise applied to the words.
fn sot_outputs(meeting: &Meeting, cfg: &PipelineConfig) -> Vec<SotOutput> {
    meeting
        .vad_segments
        .iter()
        .map(|seg| {
            let mut sot = sot_simulate(meeting, seg.id, cfg.sot_count_error_prob, cfg.seed);
            let mut r = rng::stream(cfg.seed, &[tag::ASR, meeting_key(meeting), seg.id as u64, 1]);
            sot.token_stream = corrupt_tokens(
                sot.token_stream.iter().map(String::as_str),
                cfg.asr_sub_prob,
                cfg.asr_del_prob,
                &mut r,
            );
            sot
        })
        .collect()
}

/// Pairs the g-th SOT token group of each segment with the g-th label.
/// Surplus groups go to the segment's last label.
fn assemble_parallel(
    meeting: &Meeting,
    mode: Mode,
    sots: &[SotOutput],
    labels: LabelSequence,
    flags: Vec<Flag>,
) -> Result<PipelineOutput> {
    let mut entries = Vec::new();
    let mut spans = Vec::new();
    let mut spans_h = Vec::new();
    let h_ids = homogeneous_ids(meeting);
    for (seg, sot) in meeting.vad_segments.iter().zip(sots) {
        let seg_labels: Vec<usize> = labels
            .slot_segment_ids
            .iter()
            .zip(&labels.labels)
            .filter(|(s, _)| **s == seg.id)
            .map(|(_, &l)| l)
            .collect();
        let last = *seg_labels.last().ok_or(Error::EmptySegment(seg.id))?;
        for (g, words) in sot.groups().into_iter().enumerate() {
            entries.push(TranscriptEntry {
                segment_id: seg.id,
                speaker_label: seg_labels.get(g).copied().unwrap_or(last),
                words,
            });
        }
        for &l in &seg_labels {
            spans.push(SpeakerSpan {
                speaker: l.to_string(),
                interval: seg.interval,
            });
        }
        if h_ids.contains(&seg.id) {
            spans_h.push(SpeakerSpan {
                speaker: seg_labels[0].to_string(),
                interval: seg.interval,
            });
        }
    }
    Ok(PipelineOutput {
        meeting_id: meeting.meeting_id.clone(),
        mode,
        transcript: SpeakerAttributedTranscript::new(entries)?,
        hyp_spans: spans,
        hyp_spans_h: spans_h,
        slot_labels: Some(labels),
        flags,
    })
}

/// Parallel system: SOT speaker counts drive the neural clusterer.
pub fn run_parallel(
    meeting: &Meeting,
    seq: &EmbeddingSequence,
    model: &SdncModel,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    segment_windows(seq, meeting)?;
    let sots = sot_outputs(meeting, cfg);
    let k_max = model.config.max_clusters;
    let mut flags = Vec::new();
    let counts = sots
        .iter()
        .map(|s| {
            if s.speaker_count > k_max {
                flags.push(Flag::CountClamped {
                    segment_id: s.segment_id,
                    from: s.speaker_count,
                    to: k_max,
                });
            }
            s.speaker_count.clamp(1, k_max)
        })
        .collect();
    let labels = model.predict(seq, &DecodePlan::new(counts)?)?;
    assemble_parallel(meeting, Mode::ParallelSdnc, &sots, labels, flags)
}

/// The parallel system downstream of clustering, for any slot labels.
pub fn parallel_with_labels(meeting: &Meeting, labels: LabelSequence, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let sots = sot_outputs(meeting, cfg);
    assemble_parallel(meeting, Mode::ParallelSdnc, &sots, labels, Vec::new())
}

/// Parallel system with spectral clustering in place of the neural
/// clusterer.
pub fn run_parallel_sc(meeting: &Meeting, seq: &EmbeddingSequence, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let ranges = segment_windows(seq, meeting)?;
    let sots = sot_outputs(meeting, cfg);
    let windows = spectral_cluster(seq, &cfg.sc)?;
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in &windows {
        *freq.entry(l).or_default() += 1;
    }
    let mut by_freq: Vec<(usize, usize)> = freq.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut next_new = by_freq.iter().map(|x| x.0).max().unwrap_or(0) + 1;

    let mut labels = Vec::new();
    let mut slot_segments = Vec::new();
    let mut flags = Vec::new();
    for (seg, sot) in meeting.vad_segments.iter().zip(&sots) {
        let r = ranges[&seg.id].clone();
        let seg_labels: Vec<usize> = if sot.speaker_count <= 1 {
            majority_vote(&windows[r.clone()], &vec![0; r.len()])?
        } else {
            let mut distinct: Vec<usize> = Vec::new();
            for &l in &windows[r] {
                if !distinct.contains(&l) {
                    distinct.push(l);
                }
            }
            let found = distinct.len();
            if found > sot.speaker_count {
                distinct.truncate(sot.speaker_count);
                flags.push(Flag::Truncated {
                    segment_id: seg.id,
                    from: found,
                    to: sot.speaker_count,
                });
            } else if found < sot.speaker_count {
                while distinct.len() < sot.speaker_count {
                    let pick = by_freq.iter().map(|x| x.0).find(|l| !distinct.contains(l));
                    distinct.push(pick.unwrap_or_else(|| {
                        next_new += 1;
                        next_new - 1
                    }));
                }
                flags.push(Flag::Padded {
                    segment_id: seg.id,
                    from: found,
                    to: sot.speaker_count,
                });
            }
            distinct
        };
        for l in seg_labels {
            labels.push(l);
            slot_segments.push(seg.id);
        }
    }
    let labels = crate::sdnc::canonical_sequence(&labels, slot_segments)?;
    assemble_parallel(meeting, Mode::ParallelSc, &sots, labels, flags)
}

/// Per-segment WER summed over segments: each segment's reference is its
/// words in speaker order, its hypothesis the words of its entries.
fn segment_wer(meeting: &Meeting, t: &SpeakerAttributedTranscript, ids: Option<&BTreeSet<usize>>) -> Option<f64> {
    let (mut errors, mut total) = (0usize, 0usize);
    for seg in &meeting.vad_segments {
        if ids.is_some_and(|s| !s.contains(&seg.id)) {
            continue;
        }
        let reference: Vec<String> = crate::synth::segment_speaker_words(meeting, seg.id)
            .into_iter()
            .flat_map(|(_, ws)| ws.into_iter().map(|w| w.token))
            .collect();
        let hyp: Vec<String> = t
            .entries
            .iter()
            .filter(|e| e.segment_id == seg.id)
            .flat_map(|e| e.words.iter().cloned())
            .collect();
        let r = wer(&reference, &hyp);
        errors += r.errors;
        total += r.ref_len;
    }
    match (total, errors) {
        (0, 0) if ids.is_some_and(|s| s.is_empty()) => None,
        (0, 0) => Some(0.0),
        (0, _) => None,
        (n, e) => Some(e as f64 / n as f64),
    }
}

/// Segments whose transcript entries carry more than one label.
pub fn multi_label_segments(meeting: &Meeting, t: &SpeakerAttributedTranscript) -> Vec<usize> {
    meeting
        .vad_segments
        .iter()
        .map(|seg| seg.id)
        .filter(|id| {
            t.entries
                .iter()
                .filter(|e| e.segment_id == *id)
                .map(|e| e.speaker_label)
                .collect::<BTreeSet<_>>()
                .len()
                > 1
        })
        .collect()
}

/// Metric name to value; `None` marks an undefined value.
pub type MeetingScores = BTreeMap<String, Option<f64>>;

/// DER, DER-H, WER, WER-H, cpWER, cpWER-H and cpWER-P of one output.
pub fn score_meeting(meeting: &Meeting, out: &PipelineOutput, der_cfg: &DerConfig) -> Result<MeetingScores> {
    let mut s = MeetingScores::new();
    let h_ids = homogeneous_ids(meeting);
    let refs = reference_spans(meeting, None);
    let refs_h = reference_spans(meeting, Some(&h_ids));
    s.insert("der".into(), der(&refs, &out.hyp_spans, der_cfg)?.der());
    let der_h = if h_ids.is_empty() {
        None
    } else {
        der(&refs_h, &out.hyp_spans_h, der_cfg)?.der()
    };
    s.insert("der_h".into(), der_h);
    s.insert("wer".into(), segment_wer(meeting, &out.transcript, None));
    s.insert("wer_h".into(), segment_wer(meeting, &out.transcript, Some(&h_ids)));

    let ref_words = reference_words(meeting, None);
    let hyp_words = out.transcript.words_by_label();
    s.insert("cpwer".into(), cpwer(&ref_words, &hyp_words).ratio());
    let cp_h = if h_ids.is_empty() {
        None
    } else {
        let rw = reference_words(meeting, Some(&h_ids));
        cpwer(&rw, &transcript_subset(&out.transcript, &h_ids).words_by_label()).ratio()
    };
    s.insert("cpwer_h".into(), cp_h);

    let multi = multi_label_segments(meeting, &out.transcript);
    s.insert(
        "cpwer_p".into(),
        cpwer_p(&ref_words, &out.transcript, &multi, PermutationSearch::Auto).ratio(),
    );
    Ok(s)
}

/// Per-meeting scores of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    pub config_hash: String,
    pub meetings: BTreeMap<String, MeetingScores>,
}

impl SystemReport {
    pub fn rows(&self) -> Vec<metrics::ScoreRow> {
        self.meetings
            .iter()
            .flat_map(|(m, scores)| {
                scores.iter().map(move |(metric, v)| metrics::ScoreRow {
                    meeting: m.clone(),
                    metric: metric.clone(),
                    value: *v,
                    config_hash: self.config_hash.clone(),
                })
            })
            .collect()
    }

    /// Mean of the defined per-meeting values of `metric`.
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self.meetings.values().filter_map(|s| s.get(metric).copied().flatten()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub system_a: Option<f64>,
    pub system_b: Option<f64>,
    /// `system_b - system_a`.
    pub delta: Option<f64>,
    pub p_value: f64,
}

/// Means and per-meeting values of two systems side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub system_a: String,
    pub system_b: String,
    pub means: Vec<ComparisonRow>,
    /// `(meeting, row)` for every meeting and metric.
    pub per_meeting: Vec<(String, ComparisonRow)>,
}

/// Per-metric means of two systems over the same meetings with a paired
/// Wilcoxon signed-rank test across meetings.
pub fn compare(a: &SystemReport, b: &SystemReport) -> Result<Comparison> {
    let ka: BTreeSet<&String> = a.meetings.keys().collect();
    let kb: BTreeSet<&String> = b.meetings.keys().collect();
    if ka != kb {
        let only: Vec<&String> = ka.symmetric_difference(&kb).copied().collect();
        return Err(Error::MismatchedMeetings(format!(
            "{} and {} differ on meetings {:?}",
            a.system, b.system, only
        )));
    }
    let metrics: BTreeSet<&String> = a.meetings.values().chain(b.meetings.values()).flat_map(|s| s.keys()).collect();
    let mut means = Vec::new();
    let mut per_meeting = Vec::new();
    for m in metrics {
        let diffs: Vec<f64> = ka
            .iter()
            .filter_map(|id| {
                let va = a.meetings[*id].get(m).copied().flatten()?;
                let vb = b.meetings[*id].get(m).copied().flatten()?;
                Some(vb - va)
            })
            .collect();
        let p_value = metrics::wilcoxon(&diffs).p_value;
        let row = |va: Option<f64>, vb: Option<f64>| ComparisonRow {
            metric: m.clone(),
            system_a: va,
            system_b: vb,
            delta: va.zip(vb).map(|(x, y)| y - x),
            p_value,
        };
        means.push(row(a.mean(m), b.mean(m)));
        for id in &ka {
            let va = a.meetings[*id].get(m).copied().flatten();
            let vb = b.meetings[*id].get(m).copied().flatten();
            per_meeting.push(((*id).clone(), row(va, vb)));
        }
    }
    Ok(Comparison {
        system_a: a.system.clone(),
        system_b: b.system.clone(),
        means,
        per_meeting,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

fn fmt_row(r: &ComparisonRow) -> String {
    format!(
        "{},{},{},{},{:.6}",
        r.metric,
        fmt_opt(r.system_a),
        fmt_opt(r.system_b),
        fmt_opt(r.delta),
        r.p_value
    )
}

impl Comparison {
    /// One row per metric with the system means.
    pub fn means_csv(&self) -> String {
        let mut s = String::from("metric,system_a,system_b,delta,p_value\n");
        for r in &self.means {
            s.push_str(&fmt_row(r));
            s.push('\n');
        }
        s
    }

    /// One row per meeting and metric.
    pub fn per_meeting_csv(&self) -> String {
        let mut s = String::from("meeting,metric,system_a,system_b,delta,p_value\n");
        for (m, r) in &self.per_meeting {
            s.push_str(m);
            s.push(',');
            s.push_str(&fmt_row(r));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdnc::SdncConfig;
    use crate::synth::{gen_embeddings, gen_meeting, SynthConfig};

    fn clean_synth() -> SynthConfig {
        SynthConfig {
            embed_noise_sigma: 0.0,
            overlap_prob: 0.0,
            num_segments: 12,
            ..Default::default()
        }
    }

    fn clean_pipeline(mode: Mode) -> PipelineConfig {
        PipelineConfig {
            mode,
            sot_count_error_prob: 0.0,
            asr_sub_prob: 0.0,
            asr_del_prob: 0.0,
            ..Default::default()
        }
    }

    fn meeting_and_seq(cfg: &SynthConfig, index: u64) -> (Meeting, EmbeddingSequence) {
        let m = gen_meeting(cfg, index).unwrap();
        let seq = gen_embeddings(&m, cfg, &WindowingConfig::default()).unwrap();
        (m, seq)
    }

    #[test]
    fn cascaded_is_error_free_on_clean_input() {
        let (m, seq) = meeting_and_seq(&clean_synth(), 3);
        let pc = clean_pipeline(Mode::CascadedSc);
        let out = run_cascaded(&m, &seq, &pc).unwrap();
        let s = score_meeting(&m, &out, &pc.der).unwrap();
        assert_eq!(s["cpwer"], Some(0.0));
        assert_eq!(s["der"], Some(0.0));
        assert_eq!(s["wer"], Some(0.0));
        assert_eq!(out, run_cascaded(&m, &seq, &pc).unwrap());
    }

    #[test]
    fn parallel_entry_count_is_the_sum_of_sot_counts() {
        let sc = SynthConfig::default();
        let (m, seq) = meeting_and_seq(&sc, 5);
        let model = SdncModel::new(SdncConfig::default(), 1).unwrap();
        let pc = PipelineConfig {
            sot_count_error_prob: 0.5,
            ..Default::default()
        };
        let out = run_parallel(&m, &seq, &model, &pc).unwrap();
        let expected: usize = sot_outputs(&m, &pc).iter().map(|s| s.speaker_count.min(5)).sum();
        assert_eq!(out.transcript.entries.len(), expected);
        assert_eq!(out.slot_labels.unwrap().len(), expected);
    }

    #[test]
    fn parallel_sc_with_single_counts_matches_majority_vote() {
        let (m, seq) = meeting_and_seq(&clean_synth(), 7);
        let pc = clean_pipeline(Mode::ParallelSc);
        let out = run_parallel_sc(&m, &seq, &pc).unwrap();
        let windows = spectral_cluster(&seq, &pc.sc).unwrap();
        let units: Vec<usize> = seq
            .segment_ranges()
            .into_iter()
            .enumerate()
            .flat_map(|(u, (_, r))| std::iter::repeat_n(u, r.len()))
            .collect();
        let mv = majority_vote(&windows, &units).unwrap();
        assert_eq!(out.slot_labels.unwrap().labels, crate::sdnc::canonicalize(&mv));
        assert!(out.flags.is_empty());
    }

    #[test]
    fn parallel_sc_pads_when_clustering_finds_too_few_labels() {
        let mut sc = clean_synth();
        sc.overlap_prob = 1.0;
        let (m, seq) = meeting_and_seq(&sc, 2);
        let mut pc = clean_pipeline(Mode::ParallelSc);
        pc.sc.fixed_k = Some(1);
        let out = run_parallel_sc(&m, &seq, &pc).unwrap();
        assert!(out.flags.iter().any(|f| matches!(f, Flag::Padded { .. })));
        let labels = out.slot_labels.unwrap();
        for seg in &m.vad_segments {
            let l: Vec<usize> = labels
                .slot_segment_ids
                .iter()
                .zip(&labels.labels)
                .filter(|(s, _)| **s == seg.id)
                .map(|(_, &l)| l)
                .collect();
            let distinct: BTreeSet<usize> = l.iter().copied().collect();
            assert_eq!(distinct.len(), l.len(), "labels within a segment are distinct");
        }
    }

    #[test]
    fn missing_segment_embeddings_are_rejected() {
        let (m, mut seq) = meeting_and_seq(&clean_synth(), 1);
        let last = m.vad_segments.last().unwrap().id;
        seq.windows.retain(|w| w.segment_id != last);
        let pc = clean_pipeline(Mode::CascadedSc);
        assert!(matches!(run_cascaded(&m, &seq, &pc), Err(Error::NoWindows(id)) if id == last));
    }

    fn report(name: &str, vals: &[(&str, f64)]) -> SystemReport {
        SystemReport {
            system: name.into(),
            config_hash: "h".into(),
            meetings: vals
                .iter()
                .map(|(m, v)| {
                    let mut s = MeetingScores::new();
                    s.insert("cpwer".into(), Some(*v));
                    s.insert("der".into(), Some(v / 2.0));
                    (m.to_string(), s)
                })
                .collect(),
        }
    }

    #[test]
    fn comparing_a_report_with_itself_gives_zero_deltas() {
        let a = report("a", &[("m1", 0.1), ("m2", 0.3), ("m3", 0.2)]);
        let c = compare(&a, &a).unwrap();
        for r in &c.means {
            assert_eq!(r.delta, Some(0.0));
            assert_eq!(r.p_value, 1.0);
        }
        assert_eq!(c.per_meeting_csv().lines().count(), 1 + 3 * 2);
        assert_eq!(c.means_csv().lines().count(), 1 + 2);
    }

    #[test]
    fn mismatched_meeting_sets_are_rejected() {
        let a = report("a", &[("m1", 0.1), ("m2", 0.3)]);
        let b = report("b", &[("m1", 0.1), ("m3", 0.3)]);
        assert!(matches!(compare(&a, &b), Err(Error::MismatchedMeetings(_))));
    }

    #[test]
    fn probabilities_are_validated() {
        let pc = PipelineConfig {
            asr_sub_prob: 1.5,
            ..Default::default()
        };
        assert!(pc.validate().is_err());
    }
}
