//! Scoring: WER, DER, cpWER, cpWER-P, homogeneous-segment views and the
//! Wilcoxon signed-rank test.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment;
use crate::error::{Error, Result};
use crate::segmentation::mark_homogeneous;
use crate::types::{LabelSequence, Meeting, SpeakerAttributedTranscript, SpeakerSpan, TranscriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub errors: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl WerResult {
    /// `errors / ref_len`; `None` when the reference is empty but the
    /// hypothesis is not.
    pub fn ratio(&self) -> Option<f64> {
        match (self.ref_len, self.errors) {
            (0, 0) => Some(0.0),
            (0, _) => None,
            (n, e) => Some(e as f64 / n as f64),
        }
    }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error counts from a minimum-cost alignment. Among optimal
/// alignments, substitutions are preferred over deletion/insertion pairs.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerResult {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut del, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]) {
            s += usize::from(reference[i - 1] != hypothesis[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    WerResult {
        errors: d[n][m],
        substitutions: s,
        deletions: del,
        insertions: ins,
        ref_len: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerConfig {
    pub collar: f64,
    pub include_overlap: bool,
    pub frame: f64,
}

impl Default for DerConfig {
    fn default() -> Self {
        DerConfig {
            collar: 0.25,
            include_overlap: true,
            frame: 0.01,
        }
    }
}

impl DerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.collar >= 0.0) || !(self.frame > 0.0) {
            return Err(Error::Config(format!(
                "DER needs collar >= 0 and frame > 0, got {} and {}",
                self.collar, self.frame
            )));
        }
        Ok(())
    }
}

/// Error components in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DerResult {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_ref: f64,
}

impl DerResult {
    /// `None` when there is no scored reference speech.
    pub fn der(&self) -> Option<f64> {
        (self.total_ref > 0.0).then(|| (self.miss + self.false_alarm + self.confusion) / self.total_ref)
    }

    pub fn add(&mut self, other: &DerResult) {
        self.miss += other.miss;
        self.false_alarm += other.false_alarm;
        self.confusion += other.confusion;
        self.total_ref += other.total_ref;
    }
}

fn speaker_index(spans: &[SpeakerSpan]) -> Vec<String> {
    spans.iter().map(|s| s.speaker.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Active speaker indices per frame, evaluated at frame centers.
fn frame_activity(spans: &[SpeakerSpan], names: &[String], frame: f64, n_frames: usize) -> Vec<Vec<usize>> {
    let mut act = vec![Vec::new(); n_frames];
    for s in spans {
        let who = names.binary_search(&s.speaker).expect("name from the same spans");
        let first = ((s.interval.start / frame - 0.5).ceil().max(0.0)) as usize;
        let mut f = first;
        while f < n_frames {
            let c = (f as f64 + 0.5) * frame;
            if c >= s.interval.end {
                break;
            }
            if c >= s.interval.start && !act[f].contains(&who) {
                act[f].push(who);
            }
            f += 1;
        }
    }
    act
}

/// Frame-grid DER with a collar around reference boundaries and an optimal
/// one-to-one speaker mapping.
pub fn der(refs: &[SpeakerSpan], hyps: &[SpeakerSpan], cfg: &DerConfig) -> Result<DerResult> {
    cfg.validate()?;
    let end = refs.iter().chain(hyps).map(|s| s.interval.end).fold(0.0, f64::max);
    let n_frames = (end / cfg.frame).ceil() as usize + 1;
    let ref_names = speaker_index(refs);
    let hyp_names = speaker_index(hyps);
    let r_act = frame_activity(refs, &ref_names, cfg.frame, n_frames);
    let h_act = frame_activity(hyps, &hyp_names, cfg.frame, n_frames);

    let mut scored = vec![true; n_frames];
    if cfg.collar > 0.0 {
        for b in refs.iter().flat_map(|s| [s.interval.start, s.interval.end]) {
            let lo = (((b - cfg.collar) / cfg.frame - 0.5).floor().max(0.0)) as usize;
            let hi = (((b + cfg.collar) / cfg.frame).ceil() as usize).min(n_frames);
            for (f, keep) in scored.iter_mut().enumerate().take(hi).skip(lo) {
                let c = (f as f64 + 0.5) * cfg.frame;
                if (c - b).abs() < cfg.collar {
                    *keep = false;
                }
            }
        }
    }
    if !cfg.include_overlap {
        for (f, keep) in scored.iter_mut().enumerate() {
            if r_act[f].len() > 1 {
                *keep = false;
            }
        }
    }

    let mut overlap = vec![vec![0.0; hyp_names.len()]; ref_names.len()];
    for f in (0..n_frames).filter(|&f| scored[f]) {
        for &r in &r_act[f] {
            for &h in &h_act[f] {
                overlap[r][h] -= 1.0;
            }
        }
    }
    let square = assignment::pad_square(&overlap, hyp_names.len(), 0.0);
    let assign = assignment::solve(&square);
    let mapped: Vec<Option<usize>> = (0..ref_names.len())
        .map(|r| (assign[r] < hyp_names.len()).then_some(assign[r]))
        .collect();

    let (mut miss, mut fa, mut conf, mut total) = (0usize, 0usize, 0usize, 0usize);
    for f in (0..n_frames).filter(|&f| scored[f]) {
        let (rs, hs) = (&r_act[f], &h_act[f]);
        let correct = rs.iter().filter(|&&r| mapped[r].is_some_and(|h| hs.contains(&h))).count();
        total += rs.len();
        miss += rs.len().saturating_sub(hs.len());
        fa += hs.len().saturating_sub(rs.len());
        conf += rs.len().min(hs.len()) - correct;
    }
    let s = cfg.frame;
    Ok(DerResult {
        miss: miss as f64 * s,
        false_alarm: fa as f64 * s,
        confusion: conf as f64 * s,
        total_ref: total as f64 * s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpwerResult<R, H> {
    pub errors: usize,
    pub ref_words: usize,
    /// Reference speaker to hypothesis label; `None` on either side stands
    /// for an empty padding stream.
    pub mapping: Vec<(Option<R>, Option<H>)>,
}

impl<R, H> CpwerResult<R, H> {
    pub fn ratio(&self) -> Option<f64> {
        match (self.ref_words, self.errors) {
            (0, 0) => Some(0.0),
            (0, _) => None,
            (n, e) => Some(e as f64 / n as f64),
        }
    }
}

/// Concatenated minimum-permutation WER.
pub fn cpwer<R: Ord + Clone, H: Ord + Clone>(
    ref_by_speaker: &BTreeMap<R, Vec<String>>,
    hyp_by_label: &BTreeMap<H, Vec<String>>,
) -> CpwerResult<R, H> {
    let refs: Vec<(&R, &Vec<String>)> = ref_by_speaker.iter().collect();
    let hyps: Vec<(&H, &Vec<String>)> = hyp_by_label.iter().collect();
    let n = refs.len().max(hyps.len());
    let empty: Vec<String> = Vec::new();
    let costs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = refs.get(i).map_or(&empty, |x| x.1);
            (0..n)
                .map(|j| edit_distance(r, hyps.get(j).map_or(&empty, |x| x.1)) as f64)
                .collect()
        })
        .collect();
    let assign = assignment::solve(&costs);
    let errors = assignment::total_cost(&costs, &assign) as usize;
    let mapping = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| (refs.get(i).map(|x| x.0.clone()), hyps.get(j).map(|x| x.0.clone())))
        .collect();
    CpwerResult {
        errors,
        ref_words: refs.iter().map(|r| r.1.len()).sum(),
        mapping,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PermutationSearch {
    /// Exhaustive up to [`EXHAUSTIVE_LIMIT`] combinations, coordinate
    /// descent above.
    #[default]
    Auto,
    Exhaustive,
    CoordinateDescent,
}

pub const EXHAUSTIVE_LIMIT: usize = 10_000;
const MAX_SWEEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpwerPResult {
    pub errors: usize,
    pub ref_words: usize,
    pub exhaustive: bool,
    /// Chosen permutation index per permuted segment.
    pub choice: Vec<usize>,
}

impl CpwerPResult {
    pub fn ratio(&self) -> Option<f64> {
        match (self.ref_words, self.errors) {
            (0, 0) => Some(0.0),
            (0, _) => None,
            (n, e) => Some(e as f64 / n as f64),
        }
    }
}

fn all_permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in all_permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// cpWER after permuting the predicted labels inside each listed segment.
pub fn cpwer_p(
    ref_by_speaker: &BTreeMap<String, Vec<String>>,
    hyp: &SpeakerAttributedTranscript,
    multi_speaker_segments: &[usize],
    search: PermutationSearch,
) -> CpwerPResult {
    // (segment id, distinct labels, permutations of those labels)
    let segs: Vec<(usize, Vec<usize>, Vec<Vec<usize>>)> = multi_speaker_segments
        .iter()
        .filter_map(|&sid| {
            let labels: Vec<usize> = hyp
                .entries
                .iter()
                .filter(|e| e.segment_id == sid)
                .map(|e| e.speaker_label)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            (labels.len() >= 2).then(|| {
                let perms = all_permutations(&labels);
                (sid, labels, perms)
            })
        })
        .collect();

    let evaluate = |choice: &[usize]| -> usize {
        let mut streams: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for e in &hyp.entries {
            let label = match segs.iter().position(|s| s.0 == e.segment_id) {
                Some(k) => {
                    let (_, labels, perms) = &segs[k];
                    let pos = labels.iter().position(|&l| l == e.speaker_label).expect("collected above");
                    perms[choice[k]][pos]
                }
                None => e.speaker_label,
            };
            streams.entry(label).or_default().extend(e.words.iter().cloned());
        }
        cpwer(ref_by_speaker, &streams).errors
    };

    let combos = segs
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.2.len()))
        .unwrap_or(usize::MAX);
    let exhaustive = match search {
        PermutationSearch::Auto => combos <= EXHAUSTIVE_LIMIT,
        PermutationSearch::Exhaustive => true,
        PermutationSearch::CoordinateDescent => false,
    };
    let mut choice = vec![0; segs.len()];
    let mut best = evaluate(&choice);
    if exhaustive {
        let mut cur = vec![0; segs.len()];
        'outer: loop {
            let mut k = 0;
            loop {
                if k == segs.len() {
                    break 'outer;
                }
                cur[k] += 1;
                if cur[k] < segs[k].2.len() {
                    break;
                }
                cur[k] = 0;
                k += 1;
            }
            let e = evaluate(&cur);
            if e < best {
                best = e;
                choice = cur.clone();
            }
        }
    } else {
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for k in 0..segs.len() {
                for p in 0..segs[k].2.len() {
                    if p == choice[k] {
                        continue;
                    }
                    let mut trial = choice.clone();
                    trial[k] = p;
                    let e = evaluate(&trial);
                    if e < best {
                        best = e;
                        choice = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    CpwerPResult {
        errors: best,
        ref_words: ref_by_speaker.values().map(Vec::len).sum(),
        exhaustive,
        choice,
    }
}

/// Ids of VAD segments with exactly one reference speaker.
pub fn homogeneous_ids(meeting: &Meeting) -> BTreeSet<usize> {
    mark_homogeneous(meeting).into_iter().filter(|(_, h)| *h).map(|(id, _)| id).collect()
}

/// Ids of VAD segments with more than one reference speaker.
pub fn overlapped_ids(meeting: &Meeting) -> BTreeSet<usize> {
    mark_homogeneous(meeting).into_iter().filter(|(_, h)| !*h).map(|(id, _)| id).collect()
}

/// Reference speaker spans, optionally restricted to the given segments.
pub fn reference_spans(meeting: &Meeting, segments: Option<&BTreeSet<usize>>) -> Vec<SpeakerSpan> {
    let keep = |t: &crate::types::SpeakerTurn| match segments {
        None => true,
        Some(ids) => ids
            .iter()
            .filter_map(|&id| meeting.segment(id))
            .any(|s| s.interval.intersects(&t.interval)),
    };
    meeting
        .turns
        .iter()
        .filter(|t| keep(t))
        .map(|t| SpeakerSpan {
            speaker: t.speaker_id.clone(),
            interval: t.interval,
        })
        .collect()
}

/// Reference words per speaker, optionally restricted to the given
/// segments. Words are assigned to the segment containing their time.
pub fn reference_words(meeting: &Meeting, segments: Option<&BTreeSet<usize>>) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for seg in &meeting.vad_segments {
        if segments.is_some_and(|ids| !ids.contains(&seg.id)) {
            continue;
        }
        for (spk, words) in crate::synth::segment_speaker_words(meeting, seg.id) {
            out.entry(spk).or_default().extend(words.into_iter().map(|w| w.token));
        }
    }
    out
}

/// Transcript entries of the listed segments only.
pub fn transcript_subset(t: &SpeakerAttributedTranscript, segments: &BTreeSet<usize>) -> SpeakerAttributedTranscript {
    SpeakerAttributedTranscript {
        entries: t
            .entries
            .iter()
            .filter(|e| segments.contains(&e.segment_id))
            .cloned()
            .collect::<Vec<TranscriptEntry>>(),
    }
}

/// Hypothesis spans that give each listed segment its first decoded label
/// over the full segment interval.
pub fn first_label_spans(meeting: &Meeting, labels: &LabelSequence, segments: &BTreeSet<usize>) -> Result<Vec<SpeakerSpan>> {
    let mut out = Vec::new();
    for &sid in segments {
        let seg = meeting
            .segment(sid)
            .ok_or_else(|| Error::Validation(format!("no segment with id {sid}")))?;
        let pos = labels
            .slot_segment_ids
            .iter()
            .position(|&s| s == sid)
            .ok_or_else(|| Error::Validation(format!("no decoded label for segment {sid}")))?;
        out.push(SpeakerSpan {
            speaker: labels.labels[pos].to_string(),
            interval: seg.interval,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest sample size handled by the exact null distribution.
const WILCOXON_EXACT_MAX: usize = 50;

/// Two-sided Wilcoxon signed-rank test on paired differences. Zero
/// differences are dropped; tied magnitudes get averaged ranks.
pub fn wilcoxon(diffs: &[f64]) -> WilcoxonResult {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return WilcoxonResult {
            n,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            exact: true,
        };
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nz[a].abs().total_cmp(&nz[b].abs()));
    // Doubled ranks are integers even with ties.
    let mut rank2 = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[order[j + 1]].abs() == nz[order[i]].abs() {
            j += 1;
        }
        for &k in &order[i..=j] {
            rank2[k] = i + j + 2;
        }
        i = j + 1;
    }
    let total2: usize = rank2.iter().sum();
    let wp2: usize = (0..n).filter(|&k| nz[k] > 0.0).map(|k| rank2[k]).sum();
    let w_plus = wp2 as f64 / 2.0;
    let w_minus = (total2 - wp2) as f64 / 2.0;
    let observed = wp2.min(total2 - wp2);

    if n <= WILCOXON_EXACT_MAX {
        let mut counts = vec![0f64; total2 + 1];
        counts[0] = 1.0;
        for &r in &rank2 {
            for s in (r..=total2).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all: f64 = counts.iter().sum();
        let extreme: f64 = (0..=total2).filter(|&s| s.min(total2 - s) <= observed).map(|s| counts[s]).sum();
        return WilcoxonResult {
            n,
            w_plus,
            w_minus,
            p_value: (extreme / all).min(1.0),
            exact: true,
        };
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[order[j + 1]].abs() == nz[order[i]].abs() {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    let w = w_plus.min(w_minus);
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_value: (2.0 * normal_sf(z)).min(1.0),
        exact: false,
    }
}

/// Upper tail of the standard normal distribution.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Complementary error function, Numerical Recipes `erfcc` (relative error
/// below 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// One row of a score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub meeting: String,
    pub metric: String,
    /// `None` marks an undefined value, such as a metric over an empty set.
    pub value: Option<f64>,
    pub config_hash: String,
}

/// First 16 hex digits of the SHA-256 of a value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value).map_err(|e| Error::Parse {
        context: "config".into(),
        message: e.to_string(),
    })?;
    Ok(hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string())
}

pub fn write_report_json(rows: &[ScoreRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(rows).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn format_report_csv(rows: &[ScoreRow]) -> String {
    let mut s = String::from("meeting,metric,value,config_hash\n");
    for r in rows {
        let v = r.value.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        s.push_str(&format!("{},{},{},{}\n", r.meeting, r.metric, v, r.config_hash));
    }
    s
}

pub fn write_report_csv(rows: &[ScoreRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_report_csv(rows)).map_err(|e| Error::io(path, e))
}
