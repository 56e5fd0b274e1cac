use std::collections::BTreeMap;

use super::{DecodePlan, canonical_sequence};
use crate::assignment;
use crate::error::{Error, Result};
use crate::synth::Windowed;
use crate::types::{EmbeddingSequence, LabelSequence, Meeting};

/// One meeting prepared for teacher-forced training.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub seq: EmbeddingSequence,
    pub plan: DecodePlan,
    pub target: LabelSequence,
    /// Reference speakers of each segment in target order.
    pub segment_speakers: BTreeMap<usize, Vec<String>>,
}

/// Speakers of a VAD segment ordered by the time they start talking inside
/// it, ties broken by speaker id.
pub fn segment_speakers_by_first_speech(meeting: &Meeting, segment_id: usize) -> Result<Vec<String>> {
    let seg = meeting
        .segment(segment_id)
        .ok_or_else(|| Error::Validation(format!("no segment with id {segment_id}")))?;
    let mut starts: BTreeMap<&str, f64> = BTreeMap::new();
    for turn in meeting.turns_intersecting(&seg.interval) {
        let s = turn.interval.start.max(seg.interval.start);
        let e = starts.entry(turn.speaker_id.as_str()).or_insert(s);
        *e = e.min(s);
    }
    if starts.is_empty() {
        return Err(Error::EmptySegment(segment_id));
    }
    let mut v: Vec<(&str, f64)> = starts.into_iter().collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    Ok(v.into_iter().map(|(s, _)| s.to_string()).collect())
}

fn build(seq: EmbeddingSequence, per_segment: Vec<(usize, Vec<String>)>) -> Result<TrainingExample> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut raw = Vec::new();
    let mut slot_segments = Vec::new();
    for (sid, speakers) in &per_segment {
        for s in speakers {
            let next = ids.len() + 1;
            raw.push(*ids.entry(s.as_str()).or_insert(next));
            slot_segments.push(*sid);
        }
    }
    let plan = DecodePlan::new(per_segment.iter().map(|(_, s)| s.len()).collect())?;
    let target = canonical_sequence(&raw, slot_segments)?;
    Ok(TrainingExample {
        seq,
        plan,
        target,
        segment_speakers: per_segment.into_iter().collect(),
    })
}

/// Pretraining example: windows over First Speaker segments, one slot per
/// segment labelled with the segment's owner.
pub fn pretrain_example(windowed: &Windowed) -> Result<TrainingExample> {
    let ranges = windowed.seq.segment_ranges();
    let per_segment = ranges
        .into_iter()
        .map(|(sid, r)| (sid, vec![windowed.owners[r.start].clone()]))
        .collect();
    build(windowed.seq.clone(), per_segment)
}

/// Fine-tuning example: windows over VAD segments with one slot per
/// distinct speaker, ordered by first speech.
pub fn finetune_example(meeting: &Meeting, seq: &EmbeddingSequence) -> Result<TrainingExample> {
    let per_segment = seq
        .segment_ranges()
        .into_iter()
        .map(|(sid, _)| Ok((sid, segment_speakers_by_first_speech(meeting, sid)?)))
        .collect::<Result<Vec<_>>>()?;
    build(seq.clone(), per_segment)
}

/// Fraction of slots whose predicted label matches the reference under the
/// one-to-one label mapping that maximizes matches.
pub fn slot_accuracy(predicted: &[usize], reference: &[usize]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::Shape(format!(
            "{} predicted labels for {} reference labels",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.iter().chain(reference).any(|&l| l == 0) {
        return Err(Error::Validation("labels must be positive".into()));
    }
    if predicted.is_empty() {
        return Ok(1.0);
    }
    let kp = predicted.iter().copied().max().unwrap_or(0);
    let kr = reference.iter().copied().max().unwrap_or(0);
    let mut counts = vec![vec![0.0; kr]; kp];
    for (&p, &r) in predicted.iter().zip(reference) {
        counts[p - 1][r - 1] -= 1.0;
    }
    let square = assignment::pad_square(&counts, kr, 0.0);
    let assign = assignment::solve(&square);
    let matched = -assignment::total_cost(&square, &assign);
    Ok(matched / predicted.len() as f64)
}
