//! Domain types shared by every stage of the pipeline.
//!
//! All types are plain data and immutable once validated. Times are `f64`
//! seconds and every comparison goes through [`TIME_EPS`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for every time comparison, in seconds.
pub const TIME_EPS: f64 = 1e-9;

/// Default upper bound on speakers per meeting.
pub const DEFAULT_MAX_SPEAKERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let iv = TimeInterval { start, end };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start.is_finite() || !self.end.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite interval [{}, {}]",
                self.start, self.end
            )));
        }
        if self.start < -TIME_EPS {
            return Err(Error::Validation(format!(
                "negative start time {}",
                self.start
            )));
        }
        if self.start > self.end + TIME_EPS {
            return Err(Error::Validation(format!(
                "interval start {} after end {}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// True when `t` lies inside the closed interval (with tolerance).
    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.start - TIME_EPS && t <= self.end + TIME_EPS
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        other.start >= self.start - TIME_EPS && other.end <= self.end + TIME_EPS
    }

    /// Length of the intersection, zero when disjoint.
    pub fn overlap(&self, other: &TimeInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// True when the intervals share more than a point.
    pub fn intersects(&self, other: &TimeInterval) -> bool {
        self.overlap(other) > TIME_EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub token: String,
    /// Midpoint time of the word.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTurn {
    #[serde(rename = "speaker")]
    pub speaker_id: String,
    #[serde(flatten)]
    pub interval: TimeInterval,
    pub words: Vec<Word>,
}

impl SpeakerTurn {
    pub fn validate(&self) -> Result<()> {
        self.interval.validate()?;
        let mut last = f64::NEG_INFINITY;
        for w in &self.words {
            if !self.interval.contains_time(w.time) {
                return Err(Error::Validation(format!(
                    "word '{}' at {} outside turn of {} [{}, {}]",
                    w.token, w.time, self.speaker_id, self.interval.start, self.interval.end
                )));
            }
            if w.time < last - TIME_EPS {
                return Err(Error::Validation(format!(
                    "word times decrease in turn of {}",
                    self.speaker_id
                )));
            }
            last = w.time;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadSegment {
    pub id: usize,
    #[serde(flatten)]
    pub interval: TimeInterval,
}

/// Ground truth for one meeting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeetingFile")]
pub struct Meeting {
    pub meeting_id: String,
    pub num_speakers: usize,
    pub vad_segments: Vec<VadSegment>,
    pub turns: Vec<SpeakerTurn>,
}

#[derive(Deserialize)]
struct MeetingFile {
    meeting_id: String,
    num_speakers: usize,
    vad_segments: Vec<VadSegment>,
    turns: Vec<SpeakerTurn>,
}

impl TryFrom<MeetingFile> for Meeting {
    type Error = Error;

    fn try_from(f: MeetingFile) -> Result<Self> {
        Meeting::new(
            f.meeting_id,
            f.num_speakers,
            f.vad_segments,
            f.turns,
            DEFAULT_MAX_SPEAKERS,
        )
    }
}

impl Meeting {
    pub fn new(
        meeting_id: String,
        num_speakers: usize,
        vad_segments: Vec<VadSegment>,
        turns: Vec<SpeakerTurn>,
        max_speakers: usize,
    ) -> Result<Self> {
        let m = Meeting {
            meeting_id,
            num_speakers,
            vad_segments,
            turns,
        };
        m.validate(max_speakers)?;
        Ok(m)
    }

    pub fn validate(&self, max_speakers: usize) -> Result<()> {
        if self.num_speakers < 2 || self.num_speakers > max_speakers {
            return Err(Error::Validation(format!(
                "num_speakers {} outside [2, {}]",
                self.num_speakers, max_speakers
            )));
        }
        for (i, seg) in self.vad_segments.iter().enumerate() {
            seg.interval.validate()?;
            if seg.id != i + 1 {
                return Err(Error::Validation(format!(
                    "VAD segment at position {} has id {}, expected {}",
                    i,
                    seg.id,
                    i + 1
                )));
            }
            if i > 0 {
                let prev = &self.vad_segments[i - 1];
                if seg.interval.start < prev.interval.end - TIME_EPS {
                    return Err(Error::Validation(format!(
                        "VAD segments {} and {} overlap or are unsorted",
                        prev.id, seg.id
                    )));
                }
            }
        }
        let union = merged_union(self.vad_segments.iter().map(|s| s.interval));
        let mut speakers = BTreeSet::new();
        for turn in &self.turns {
            turn.validate()?;
            if !union.iter().any(|u| u.contains(&turn.interval)) {
                return Err(Error::Validation(format!(
                    "turn of {} [{}, {}] lies outside the VAD segments",
                    turn.speaker_id, turn.interval.start, turn.interval.end
                )));
            }
            speakers.insert(turn.speaker_id.as_str());
        }
        if speakers.len() > self.num_speakers {
            return Err(Error::Validation(format!(
                "{} distinct speakers in turns but num_speakers is {}",
                speakers.len(),
                self.num_speakers
            )));
        }
        Ok(())
    }

    pub fn segment(&self, id: usize) -> Option<&VadSegment> {
        id.checked_sub(1).and_then(|i| self.vad_segments.get(i))
    }

    /// Turns that share more than a point with `interval`.
    pub fn turns_intersecting<'a>(
        &'a self,
        interval: &'a TimeInterval,
    ) -> impl Iterator<Item = &'a SpeakerTurn> + 'a {
        self.turns
            .iter()
            .filter(move |t| t.interval.intersects(interval))
    }

    /// Every speaker id, in order of first speech.
    pub fn speakers(&self) -> Vec<String> {
        let mut turns: Vec<&SpeakerTurn> = self.turns.iter().collect();
        turns.sort_by(|a, b| a.interval.start.total_cmp(&b.interval.start));
        let mut out: Vec<String> = Vec::new();
        for t in turns {
            if !out.contains(&t.speaker_id) {
                out.push(t.speaker_id.clone());
            }
        }
        out
    }
}

/// Merges possibly touching intervals into a sorted disjoint union.
pub fn merged_union(intervals: impl IntoIterator<Item = TimeInterval>) -> Vec<TimeInterval> {
    let mut v: Vec<TimeInterval> = intervals.into_iter().collect();
    v.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut out: Vec<TimeInterval> = Vec::with_capacity(v.len());
    for iv in v {
        match out.last_mut() {
            Some(last) if iv.start <= last.end + TIME_EPS => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEmbedding {
    pub segment_id: usize,
    pub interval: TimeInterval,
    pub vector: Vec<f64>,
}

/// The window-level embeddings of one meeting, in (segment, start) order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub meeting_id: String,
    pub windows: Vec<WindowEmbedding>,
    pub dim: usize,
}

impl EmbeddingSequence {
    pub fn new(meeting_id: String, windows: Vec<WindowEmbedding>, dim: usize) -> Result<Self> {
        let seq = EmbeddingSequence {
            meeting_id,
            windows,
            dim,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.windows.iter().enumerate() {
            w.interval.validate()?;
            if w.vector.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: w.vector.len(),
                });
            }
            if w.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("window {i} has non-finite entries")));
            }
            if i > 0 {
                let p = &self.windows[i - 1];
                let ordered = p.segment_id < w.segment_id
                    || (p.segment_id == w.segment_id
                        && p.interval.start <= w.interval.start + TIME_EPS);
                if !ordered {
                    return Err(Error::Validation(format!(
                        "windows {} and {} are not sorted by (segment, start)",
                        i - 1,
                        i
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every window sits inside its VAD segment.
    pub fn validate_against(&self, meeting: &Meeting) -> Result<()> {
        for w in &self.windows {
            let seg = meeting.segment(w.segment_id).ok_or_else(|| {
                Error::Validation(format!("window refers to unknown segment {}", w.segment_id))
            })?;
            if !seg.interval.contains(&w.interval) {
                return Err(Error::Validation(format!(
                    "window [{}, {}] outside segment {}",
                    w.interval.start, w.interval.end, w.segment_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Distinct segment ids in order of appearance.
    pub fn segment_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = Vec::new();
        for w in &self.windows {
            if ids.last() != Some(&w.segment_id) {
                ids.push(w.segment_id);
            }
        }
        ids
    }

    /// Contiguous window index ranges, one per segment, in order.
    pub fn segment_ranges(&self) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut out: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
        for (i, w) in self.windows.iter().enumerate() {
            match out.last_mut() {
                Some((id, r)) if *id == w.segment_id => r.end = i + 1,
                _ => out.push((w.segment_id, i..i + 1)),
            }
        }
        out
    }
}

/// Relative cluster labels, one per decoder output slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub labels: Vec<usize>,
    pub slot_segment_ids: Vec<usize>,
}

impl LabelSequence {
    pub fn new(labels: Vec<usize>, slot_segment_ids: Vec<usize>) -> Result<Self> {
        if labels.len() != slot_segment_ids.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} slot segment ids",
                labels.len(),
                slot_segment_ids.len()
            )));
        }
        let mut next = 1;
        for &l in &labels {
            if l == next {
                next += 1;
            } else if l == 0 || l > next {
                return Err(Error::Validation(format!(
                    "label sequence {labels:?} is not in first-appearance order"
                )));
            }
        }
        Ok(LabelSequence {
            labels,
            slot_segment_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub segment_id: usize,
    pub speaker_label: usize,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerAttributedTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl SpeakerAttributedTranscript {
    pub fn new(entries: Vec<TranscriptEntry>) -> Result<Self> {
        if entries.windows(2).any(|w| w[1].segment_id < w[0].segment_id) {
            return Err(Error::Validation(
                "transcript entries are not grouped by segment".into(),
            ));
        }
        Ok(SpeakerAttributedTranscript { entries })
    }

    /// Word streams concatenated per speaker label, in entry order.
    pub fn words_by_label(&self) -> std::collections::BTreeMap<usize, Vec<String>> {
        let mut out: std::collections::BTreeMap<usize, Vec<String>> = Default::default();
        for e in &self.entries {
            out.entry(e.speaker_label)
                .or_default()
                .extend(e.words.iter().cloned());
        }
        out
    }
}

/// A (speaker, interval) pair, the unit of RTTM files and DER scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpan {
    pub speaker: String,
    pub interval: TimeInterval,
}

impl SpeakerSpan {
    pub fn new(speaker: impl Into<String>, start: f64, end: f64) -> Result<Self> {
        Ok(SpeakerSpan {
            speaker: speaker.into(),
            interval: TimeInterval::new(start, end)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: usize, s: f64, e: f64) -> VadSegment {
        VadSegment {
            id,
            interval: TimeInterval { start: s, end: e },
        }
    }

    fn turn(spk: &str, s: f64, e: f64) -> SpeakerTurn {
        SpeakerTurn {
            speaker_id: spk.into(),
            interval: TimeInterval { start: s, end: e },
            words: vec![],
        }
    }

    #[test]
    fn interval_rejects_reversed() {
        assert!(TimeInterval::new(2.0, 1.0).is_err());
        assert!(TimeInterval::new(-1.0, 1.0).is_err());
        assert!(TimeInterval::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn meeting_rejects_overlapping_segments() {
        let r = Meeting::new(
            "m".into(),
            2,
            vec![seg(1, 0.0, 2.0), seg(2, 1.5, 3.0)],
            vec![],
            5,
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn meeting_rejects_turn_outside_vad() {
        let r = Meeting::new(
            "m".into(),
            2,
            vec![seg(1, 0.0, 2.0), seg(2, 3.0, 4.0)],
            vec![turn("A", 1.0, 3.5)],
            5,
        );
        assert!(r.is_err());
        let ok = Meeting::new(
            "m".into(),
            2,
            vec![seg(1, 0.0, 2.0), seg(2, 2.0, 4.0)],
            vec![turn("A", 1.0, 3.5)],
            5,
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn meeting_rejects_speaker_count_out_of_range() {
        let r = Meeting::new("m".into(), 6, vec![seg(1, 0.0, 1.0)], vec![], 5);
        assert!(r.is_err());
        let r = Meeting::new("m".into(), 1, vec![seg(1, 0.0, 1.0)], vec![], 5);
        assert!(r.is_err());
    }

    #[test]
    fn word_outside_turn_rejected() {
        let mut t = turn("A", 0.0, 1.0);
        t.words.push(Word {
            token: "x".into(),
            time: 1.5,
        });
        assert!(t.validate().is_err());
    }

    #[test]
    fn label_sequence_requires_first_appearance_order() {
        assert!(LabelSequence::new(vec![1, 2, 1, 3], vec![1, 1, 2, 3]).is_ok());
        assert!(LabelSequence::new(vec![2, 1], vec![1, 2]).is_err());
        assert!(LabelSequence::new(vec![1, 3], vec![1, 2]).is_err());
    }

    #[test]
    fn segment_ranges_follow_windows() {
        let w = |s: usize, t: f64| WindowEmbedding {
            segment_id: s,
            interval: TimeInterval {
                start: t,
                end: t + 1.0,
            },
            vector: vec![0.0],
        };
        let seq =
            EmbeddingSequence::new("m".into(), vec![w(1, 0.0), w(1, 1.0), w(3, 5.0)], 1).unwrap();
        assert_eq!(seq.segment_ranges(), vec![(1, 0..2), (3, 2..3)]);
        assert_eq!(seq.segment_ids(), vec![1, 3]);
    }
}
