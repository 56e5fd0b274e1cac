//! Deterministic stand-ins for the corpus, the speaker-embedding extractor
//! and the two recognizers.
//!
//! Meetings are sequences of VAD segments separated by short pauses. A
//! segment holds one speaker or, with probability `overlap_prob`, a second
//! speaker who cuts in before the first one finishes. Embeddings are noisy
//! copies of per-speaker prototypes on the unit sphere.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::segmentation::{first_speaker_segments, slice_windows, FirstSpeakerSegment, WindowingConfig};
use crate::types::{
    EmbeddingSequence, Meeting, SpeakerTurn, TimeInterval, VadSegment, WindowEmbedding, Word,
    DEFAULT_MAX_SPEAKERS,
};

/// Speaker-change token emitted between speaker groups.
pub const SPEAKER_CHANGE: &str = "<sc>";

const VOCAB: &[&str] = &[
    "the", "a", "we", "should", "think", "about", "design", "remote", "control", "button",
    "battery", "price", "market", "user", "project", "meeting", "next", "time", "yes", "no",
    "maybe", "okay", "right", "so", "um", "uh", "i", "you", "they", "it", "that", "this", "what",
    "how", "why", "when", "colour", "shape", "rubber", "plastic", "case", "screen", "voice",
    "speech", "recognition", "cost", "euro", "target", "group", "young", "trendy", "fancy",
    "simple", "easy", "use", "function", "menu", "channel", "volume", "power", "chip", "kinetic",
    "solar", "cell",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub num_segments: usize,
    pub dim: usize,
    pub seg_dur_range: (f64, f64),
    pub overlap_prob: f64,
    pub words_per_sec: f64,
    pub embed_noise_sigma: f64,
    pub proto_min_angle: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_speakers: 4,
            num_segments: 30,
            dim: 16,
            seg_dur_range: (3.0, 7.5),
            overlap_prob: 0.3,
            words_per_sec: 2.5,
            embed_noise_sigma: 0.15,
            proto_min_angle: 45.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < 2 || self.num_speakers > DEFAULT_MAX_SPEAKERS {
            return Err(Error::Config(format!(
                "num_speakers must lie in [2, {DEFAULT_MAX_SPEAKERS}]"
            )));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_prob) {
            return Err(Error::Config("overlap_prob must lie in [0, 1]".into()));
        }
        if self.num_segments == 0 {
            return Err(Error::Config("num_segments must be positive".into()));
        }
        let (lo, hi) = self.seg_dur_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("seg_dur_range must satisfy 0 < lo <= hi".into()));
        }
        if !(self.words_per_sec > 0.0) || lo * self.words_per_sec < 1.0 {
            return Err(Error::Config(
                "shortest segment is too short to hold one word".into(),
            ));
        }
        if self.embed_noise_sigma < 0.0 {
            return Err(Error::Config("embed_noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// The serialized transcript of one VAD segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SotOutput {
    pub segment_id: usize,
    pub token_stream: Vec<String>,
    pub speaker_count: usize,
}

impl SotOutput {
    /// Token groups separated by speaker-change tokens.
    pub fn groups(&self) -> Vec<Vec<String>> {
        self.token_stream
            .split(|t| t == SPEAKER_CHANGE)
            .map(|g| g.to_vec())
            .collect()
    }
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{}", i + 1)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn make_turn(rng: &mut ChaCha8Rng, speaker: String, start: f64, end: f64, rate: f64) -> SpeakerTurn {
    let dur = end - start;
    let n = ((dur * rate).floor() as usize).max(1);
    let words = (0..n)
        .map(|k| Word {
            token: VOCAB.choose(rng).expect("vocab non-empty").to_string(),
            time: start + (k as f64 + 0.5) * dur / n as f64,
        })
        .collect();
    SpeakerTurn {
        speaker_id: speaker,
        interval: TimeInterval { start, end },
        words,
    }
}

/// Generates meeting number `index` of the corpus described by `cfg`.
pub fn gen_meeting(cfg: &SynthConfig, index: u64) -> Result<Meeting> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[tag::MEETING, index]);
    let (lo, hi) = cfg.seg_dur_range;
    let mut t = rng.random_range(0.2..1.0);
    let mut segments = Vec::with_capacity(cfg.num_segments);
    let mut turns = Vec::new();
    for i in 0..cfg.num_segments {
        let dur = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let (start, end) = (t, t + dur);
        segments.push(VadSegment {
            id: i + 1,
            interval: TimeInterval { start, end },
        });
        let first = rng.random_range(0..cfg.num_speakers);
        if rng.random_bool(cfg.overlap_prob) {
            let mut second = rng.random_range(0..cfg.num_speakers - 1);
            if second >= first {
                second += 1;
            }
            // the second speaker cuts in during the first speaker's tail
            let first_end = start + dur * rng.random_range(0.55..0.7);
            let second_start = start + dur * rng.random_range(0.3..0.45);
            turns.push(make_turn(&mut rng, speaker_name(first), start, first_end, cfg.words_per_sec));
            turns.push(make_turn(&mut rng, speaker_name(second), second_start, end, cfg.words_per_sec));
        } else {
            turns.push(make_turn(&mut rng, speaker_name(first), start, end, cfg.words_per_sec));
        }
        t = end + rng.random_range(0.3..1.5);
    }
    Meeting::new(
        format!("synth-{}-{:04}", cfg.seed, index),
        cfg.num_speakers,
        segments,
        turns,
        DEFAULT_MAX_SPEAKERS,
    )
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm prototypes with pairwise angle at least `min_angle_deg`.
pub fn sample_prototypes(
    count: usize,
    dim: usize,
    min_angle_deg: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    const MAX_TRIES: usize = 10_000;
    let max_cos = min_angle_deg.to_radians().cos();
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = false;
        for _ in 0..MAX_TRIES {
            let cand = unit_gaussian(rng, dim);
            if protos.iter().all(|p| dot(p, &cand) <= max_cos) {
                protos.push(cand);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Sampling(format!(
                "could not place {count} prototypes in {dim} dimensions at {min_angle_deg} degrees"
            )));
        }
    }
    Ok(protos)
}

/// Speaker prototypes of a meeting, keyed by speaker index in `0..num_speakers`.
pub fn meeting_prototypes(meeting: &Meeting, cfg: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng::stream(cfg.seed, &[tag::PROTOTYPE, fnv1a(&meeting.meeting_id)]);
    sample_prototypes(meeting.num_speakers, cfg.dim, cfg.proto_min_angle, &mut rng)
}

fn speaker_index(meeting: &Meeting, speaker: &str) -> usize {
    speaker
        .strip_prefix("spk")
        .and_then(|s| s.parse::<usize>().ok())
        .map(|i| i - 1)
        .unwrap_or_else(|| {
            let mut ids: Vec<String> = meeting.turns.iter().map(|t| t.speaker_id.clone()).collect();
            ids.sort();
            ids.dedup();
            ids.iter().position(|s| s == speaker).unwrap_or(0)
        })
}

/// How windows are laid over a meeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    /// Windows slide across each VAD segment; `segment_id` is the VAD id.
    Vad,
    /// Windows slide across each First Speaker segment; `segment_id` is the
    /// 1-based index of the First Speaker segment in meeting order.
    FirstSpeaker,
}

/// Windows of a meeting together with the reference owner of each window.
#[derive(Debug, Clone)]
pub struct Windowed {
    pub seq: EmbeddingSequence,
    pub owners: Vec<String>,
}

fn owner_at(fs: &[FirstSpeakerSegment], parent: usize, t: f64) -> Option<&str> {
    let candidates = fs.iter().filter(|f| f.parent_segment_id == parent);
    let mut best: Option<(&FirstSpeakerSegment, f64)> = None;
    for f in candidates {
        if f.interval.contains_time(t) {
            return Some(&f.speaker_id);
        }
        let d = (f.interval.start - t).abs().min((f.interval.end - t).abs());
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((f, d));
        }
    }
    best.map(|(f, _)| f.speaker_id.as_str())
}

/// Window intervals and owners without embedding vectors.
pub fn window_layout(
    meeting: &Meeting,
    wcfg: &WindowingConfig,
    mode: Segmentation,
) -> Result<Vec<(usize, TimeInterval, String)>> {
    let fs = first_speaker_segments(meeting)?;
    let mut out = Vec::new();
    match mode {
        Segmentation::Vad => {
            for seg in &meeting.vad_segments {
                for w in slice_windows(&seg.interval, wcfg)? {
                    let owner = owner_at(&fs, seg.id, w.midpoint())
                        .ok_or(Error::EmptySegment(seg.id))?;
                    out.push((seg.id, w, owner.to_string()));
                }
            }
        }
        Segmentation::FirstSpeaker => {
            for (k, f) in fs.iter().enumerate() {
                for w in slice_windows(&f.interval, wcfg)? {
                    out.push((k + 1, w, f.speaker_id.clone()));
                }
            }
        }
    }
    Ok(out)
}

/// Window embeddings over VAD segments.
pub fn gen_embeddings(
    meeting: &Meeting,
    cfg: &SynthConfig,
    wcfg: &WindowingConfig,
) -> Result<EmbeddingSequence> {
    Ok(gen_windowed(meeting, cfg, wcfg, Segmentation::Vad)?.seq)
}

/// Window embeddings plus per-window reference owners.
pub fn gen_windowed(
    meeting: &Meeting,
    cfg: &SynthConfig,
    wcfg: &WindowingConfig,
    mode: Segmentation,
) -> Result<Windowed> {
    cfg.validate()?;
    wcfg.validate()?;
    let protos = meeting_prototypes(meeting, cfg)?;
    let layout = window_layout(meeting, wcfg, mode)?;
    let mid = fnv1a(&meeting.meeting_id);
    let mode_tag = match mode {
        Segmentation::Vad => 0,
        Segmentation::FirstSpeaker => 1,
    };
    let mut windows = Vec::with_capacity(layout.len());
    let mut owners = Vec::with_capacity(layout.len());
    for (j, (segment_id, interval, owner)) in layout.into_iter().enumerate() {
        let proto = &protos[speaker_index(meeting, &owner).min(protos.len() - 1)];
        let vector = if cfg.embed_noise_sigma == 0.0 {
            proto.clone()
        } else {
            let mut r = rng::stream(cfg.seed, &[tag::WINDOW_NOISE, mid, mode_tag, j as u64]);
            let noisy: Vec<f64> = proto
                .iter()
                .map(|&p| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    p + cfg.embed_noise_sigma * z
                })
                .collect();
            let n = norm(&noisy);
            noisy.into_iter().map(|x| x / n).collect()
        };
        windows.push(WindowEmbedding {
            segment_id,
            interval,
            vector,
        });
        owners.push(owner);
    }
    Ok(Windowed {
        seq: EmbeddingSequence::new(meeting.meeting_id.clone(), windows, cfg.dim)?,
        owners,
    })
}

/// Reference speakers of a segment in order of their first word, each with
/// the words spoken inside the segment.
pub fn segment_speaker_words(meeting: &Meeting, segment_id: usize) -> Vec<(String, Vec<Word>)> {
    let Some(seg) = meeting.segment(segment_id) else {
        return Vec::new();
    };
    let mut groups: Vec<(String, Vec<Word>)> = Vec::new();
    for turn in meeting.turns_intersecting(&seg.interval) {
        let words = turn
            .words
            .iter()
            .filter(|w| seg.interval.contains_time(w.time))
            .cloned();
        match groups.iter_mut().find(|(s, _)| *s == turn.speaker_id) {
            Some((_, ws)) => ws.extend(words),
            None => groups.push((turn.speaker_id.clone(), words.collect())),
        }
    }
    for (_, ws) in &mut groups {
        ws.sort_by(|a, b| a.time.total_cmp(&b.time));
    }
    groups.retain(|(_, ws)| !ws.is_empty());
    groups.sort_by(|a, b| a.1[0].time.total_cmp(&b.1[0].time).then(a.0.cmp(&b.0)));
    groups
}

/// Serialized-output transcript of a segment, optionally with a speaker
/// count error.
pub fn sot_simulate(meeting: &Meeting, segment_id: usize, count_error_prob: f64, seed: u64) -> SotOutput {
    let mut groups: Vec<Vec<String>> = segment_speaker_words(meeting, segment_id)
        .into_iter()
        .map(|(_, ws)| ws.into_iter().map(|w| w.token).collect())
        .collect();
    if groups.is_empty() {
        groups.push(Vec::new());
    }
    let mut rng = rng::stream(seed, &[tag::SOT, fnv1a(&meeting.meeting_id), segment_id as u64]);
    if rng.random_bool(count_error_prob.clamp(0.0, 1.0)) {
        if rng.random_bool(0.5) {
            // one extra speaker: split the longest group in half
            let (gi, _) = groups
                .iter()
                .enumerate()
                .max_by_key(|(i, g)| (g.len(), usize::MAX - i))
                .expect("at least one group");
            let g = groups.remove(gi);
            let cut = g.len().div_ceil(2);
            groups.insert(gi, g[cut..].to_vec());
            groups.insert(gi, g[..cut].to_vec());
        } else if groups.len() > 1 {
            // one speaker fewer: merge a random adjacent pair
            let b = rng.random_range(0..groups.len() - 1);
            let next = groups.remove(b + 1);
            groups[b].extend(next);
        }
    }
    let speaker_count = groups.len();
    let mut token_stream = Vec::new();
    for (i, g) in groups.into_iter().enumerate() {
        if i > 0 {
            token_stream.push(SPEAKER_CHANGE.to_string());
        }
        token_stream.extend(g);
    }
    SotOutput {
        segment_id,
        token_stream,
        speaker_count,
    }
}

/// Time-ordered reference words whose midpoint falls in `[start, end)`,
/// with random substitutions and deletions.
pub fn asr_simulate(
    meeting: &Meeting,
    interval: &TimeInterval,
    sub_prob: f64,
    del_prob: f64,
    seed: u64,
) -> Vec<String> {
    let mut words: Vec<&Word> = meeting
        .turns
        .iter()
        .flat_map(|t| t.words.iter())
        .filter(|w| w.time >= interval.start && w.time < interval.end)
        .collect();
    words.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut rng = rng::stream(
        seed,
        &[tag::ASR, fnv1a(&meeting.meeting_id), interval.start.to_bits()],
    );
    corrupt_tokens(words.into_iter().map(|w| w.token.as_str()), sub_prob, del_prob, &mut rng)
}

/// Applies independent deletions and substitutions to a token stream.
/// Speaker-change tokens pass through untouched.
pub fn corrupt_tokens<'a>(
    tokens: impl IntoIterator<Item = &'a str>,
    sub_prob: f64,
    del_prob: f64,
    rng: &mut impl Rng,
) -> Vec<String> {
    let mut out = Vec::new();
    for t in tokens {
        if t == SPEAKER_CHANGE {
            out.push(t.to_string());
            continue;
        }
        if rng.random_bool(del_prob.clamp(0.0, 1.0)) {
            continue;
        }
        if rng.random_bool(sub_prob.clamp(0.0, 1.0)) {
            let mut s = *VOCAB.choose(rng).expect("vocab non-empty");
            while s == t {
                s = VOCAB.choose(rng).expect("vocab non-empty");
            }
            out.push(s.to_string());
        } else {
            out.push(t.to_string());
        }
    }
    out
}

/// Meeting-specific seed key, stable across runs.
pub fn meeting_key(meeting: &Meeting) -> u64 {
    fnv1a(&meeting.meeting_id)
}
