//! "First Speaker" segmentation and fixed-window slicing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Meeting, SpeakerTurn, TimeInterval, VadSegment, TIME_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowingConfig {
    pub window_len: f64,
    pub stride: f64,
    pub min_window: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        WindowingConfig {
            window_len: 1.5,
            stride: 1.5,
            min_window: 0.05,
        }
    }
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_len > 0.0 && self.stride > 0.0) {
            return Err(Error::Config(
                "window_len and stride must be positive".into(),
            ));
        }
        if self.min_window < 0.0 || self.min_window >= self.window_len {
            return Err(Error::Config(
                "min_window must lie in [0, window_len)".into(),
            ));
        }
        Ok(())
    }
}

/// A piece of a VAD segment owned by the speaker who started talking first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstSpeakerSegment {
    pub parent_segment_id: usize,
    pub interval: TimeInterval,
    pub speaker_id: String,
}

/// Splits a VAD segment so that every instant belongs to the active speaker
/// whose turn started earliest.
///
/// Ties on start time go to the turn that ends first, then to the
/// lexicographically smaller speaker id. Turns are clipped to the segment.
pub fn first_speaker_split(
    segment: &VadSegment,
    turns: &[&SpeakerTurn],
) -> Result<Vec<FirstSpeakerSegment>> {
    let clipped: Vec<(&str, TimeInterval)> = turns
        .iter()
        .filter(|t| t.interval.intersects(&segment.interval))
        .map(|t| {
            (
                t.speaker_id.as_str(),
                TimeInterval {
                    start: t.interval.start.max(segment.interval.start),
                    end: t.interval.end.min(segment.interval.end),
                },
            )
        })
        .collect();
    if clipped.is_empty() {
        return Err(Error::EmptySegment(segment.id));
    }

    let mut bounds: Vec<f64> = clipped
        .iter()
        .flat_map(|(_, iv)| [iv.start, iv.end])
        .collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);

    let mut out: Vec<FirstSpeakerSegment> = Vec::new();
    for pair in bounds.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let owner = clipped
            .iter()
            .filter(|(_, iv)| iv.start <= a + TIME_EPS && iv.end >= b - TIME_EPS)
            .min_by(|(sa, ia), (sb, ib)| {
                ia.start
                    .total_cmp(&ib.start)
                    .then(ia.end.total_cmp(&ib.end))
                    .then(sa.cmp(sb))
            });
        let Some((speaker, _)) = owner else { continue };
        match out.last_mut() {
            Some(last) if last.speaker_id == *speaker && (last.interval.end - a).abs() <= TIME_EPS => {
                last.interval.end = b;
            }
            _ => out.push(FirstSpeakerSegment {
                parent_segment_id: segment.id,
                interval: TimeInterval { start: a, end: b },
                speaker_id: speaker.to_string(),
            }),
        }
    }
    Ok(out)
}

/// First Speaker segmentation of a whole meeting, in time order.
pub fn first_speaker_segments(meeting: &Meeting) -> Result<Vec<FirstSpeakerSegment>> {
    let mut out = Vec::new();
    for seg in &meeting.vad_segments {
        let turns: Vec<&SpeakerTurn> = meeting.turns_intersecting(&seg.interval).collect();
        out.extend(first_speaker_split(seg, &turns)?);
    }
    Ok(out)
}

/// Slices an interval into fixed-length windows; the last window is cut at
/// the interval end.
pub fn slice_windows(interval: &TimeInterval, cfg: &WindowingConfig) -> Result<Vec<TimeInterval>> {
    if interval.duration() <= TIME_EPS {
        return Err(Error::NonPositiveDuration {
            start: interval.start,
            end: interval.end,
        });
    }
    let mut windows = Vec::new();
    let mut k = 0usize;
    loop {
        let offset = interval.start + k as f64 * cfg.stride;
        if offset >= interval.end - TIME_EPS {
            break;
        }
        windows.push(TimeInterval {
            start: offset,
            end: (offset + cfg.window_len).min(interval.end),
        });
        k += 1;
    }
    if windows.len() > 1 {
        let first = windows[0];
        windows.retain(|w| w.duration() >= cfg.min_window - TIME_EPS);
        if windows.is_empty() {
            windows.push(first);
        }
    }
    Ok(windows)
}

/// A segment is homogeneous when exactly one reference speaker talks in it.
pub fn mark_homogeneous(meeting: &Meeting) -> Vec<(usize, bool)> {
    meeting
        .vad_segments
        .iter()
        .map(|seg| {
            let mut speakers: Vec<&str> = meeting
                .turns_intersecting(&seg.interval)
                .map(|t| t.speaker_id.as_str())
                .collect();
            speakers.sort_unstable();
            speakers.dedup();
            (seg.id, speakers.len() == 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(spk: &str, s: f64, e: f64) -> SpeakerTurn {
        SpeakerTurn {
            speaker_id: spk.into(),
            interval: TimeInterval { start: s, end: e },
            words: vec![],
        }
    }

    fn seg(s: f64, e: f64) -> VadSegment {
        VadSegment {
            id: 1,
            interval: TimeInterval { start: s, end: e },
        }
    }

    fn spans(out: &[FirstSpeakerSegment]) -> Vec<(String, f64, f64)> {
        out.iter()
            .map(|f| (f.speaker_id.clone(), f.interval.start, f.interval.end))
            .collect()
    }

    #[test]
    fn overlap_goes_to_first_speaker() {
        let (a, b) = (turn("A", 0.0, 4.0), turn("B", 3.0, 7.0));
        let out = first_speaker_split(&seg(0.0, 7.0), &[&a, &b]).unwrap();
        assert_eq!(
            spans(&out),
            vec![("A".into(), 0.0, 4.0), ("B".into(), 4.0, 7.0)]
        );
    }

    #[test]
    fn single_turn_is_identity() {
        let a = turn("A", 0.0, 5.0);
        let out = first_speaker_split(&seg(0.0, 5.0), &[&a]).unwrap();
        assert_eq!(spans(&out), vec![("A".into(), 0.0, 5.0)]);
    }

    #[test]
    fn simultaneous_start_prefers_earlier_end_then_id() {
        let (a, b) = (turn("B", 0.0, 2.0), turn("A", 0.0, 3.0));
        let out = first_speaker_split(&seg(0.0, 3.0), &[&a, &b]).unwrap();
        assert_eq!(
            spans(&out),
            vec![("B".into(), 0.0, 2.0), ("A".into(), 2.0, 3.0)]
        );
        let (a, b) = (turn("B", 0.0, 2.0), turn("A", 0.0, 2.0));
        let out = first_speaker_split(&seg(0.0, 3.0), &[&a, &b]).unwrap();
        assert_eq!(spans(&out), vec![("A".into(), 0.0, 2.0)]);
    }

    #[test]
    fn no_turns_is_an_error() {
        let a = turn("A", 10.0, 12.0);
        assert!(matches!(
            first_speaker_split(&seg(0.0, 5.0), &[&a]),
            Err(Error::EmptySegment(1))
        ));
    }

    #[test]
    fn slicing_examples() {
        let cfg = WindowingConfig::default();
        let w = slice_windows(&TimeInterval { start: 0.0, end: 4.0 }, &cfg).unwrap();
        assert_eq!(
            w,
            vec![
                TimeInterval { start: 0.0, end: 1.5 },
                TimeInterval { start: 1.5, end: 3.0 },
                TimeInterval { start: 3.0, end: 4.0 },
            ]
        );
        let w = slice_windows(&TimeInterval { start: 0.0, end: 0.8 }, &cfg).unwrap();
        assert_eq!(w, vec![TimeInterval { start: 0.0, end: 0.8 }]);
        assert!(slice_windows(&TimeInterval { start: 1.0, end: 1.0 }, &cfg).is_err());
    }

    #[test]
    fn slicing_drops_sliver_windows() {
        let cfg = WindowingConfig::default();
        let w = slice_windows(&TimeInterval { start: 0.0, end: 3.02 }, &cfg).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].end, 3.0);
    }
}
