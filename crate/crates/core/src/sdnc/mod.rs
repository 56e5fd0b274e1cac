//! Segment-level discriminative neural clustering.
//!
//! A transformer encoder reads every window embedding of a meeting. The
//! decoder emits one relative speaker label per (segment, speaker) slot;
//! each slot's cross-attention is restricted to the windows of its own
//! segment, and the number of slots per segment comes from outside.

mod data;
mod model;
mod train;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AttentionMask;
use crate::types::{EmbeddingSequence, LabelSequence};

pub use data::{
    finetune_example, pretrain_example, segment_speakers_by_first_speech, slot_accuracy,
    TrainingExample,
};
pub use model::{EncoderOutput, SdncModel};
pub use train::{train, write_loss_csv, AugmentConfig, LossPoint, Stage, TrainConfig};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdncConfig {
    pub input_dim: usize,
    pub dim_model: usize,
    pub num_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub max_clusters: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
}

impl Default for SdncConfig {
    fn default() -> Self {
        SdncConfig {
            input_dim: 16,
            dim_model: 96,
            num_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 192,
            max_clusters: crate::types::DEFAULT_MAX_SPEAKERS,
            dropout: 0.0,
            label_smoothing: 0.1,
        }
    }
}

impl SdncConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.dim_model == 0 || self.ffn_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.num_heads == 0 || !self.dim_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "dim_model {} is not divisible by num_heads {}",
                self.dim_model, self.num_heads
            ));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("need at least one encoder and one decoder layer".into());
        }
        if self.max_clusters < 2 {
            return bad(format!("max_clusters must be at least 2, got {}", self.max_clusters));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        Ok(())
    }
}

/// Number of speakers to decode in each segment, in segment order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodePlan {
    pub counts: Vec<usize>,
}

impl DecodePlan {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if let Some(i) = counts.iter().position(|&k| k == 0) {
            return Err(Error::Validation(format!("segment {} has a zero speaker count", i + 1)));
        }
        Ok(DecodePlan { counts })
    }

    pub fn output_len(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn check_max(&self, max_clusters: usize) -> Result<()> {
        match self.counts.iter().find(|&&k| k > max_clusters) {
            Some(&k) => Err(Error::TooManyClusters {
                label: k,
                max: max_clusters,
            }),
            None => Ok(()),
        }
    }

    /// `(segment index, rank within segment)` for every output slot.
    pub fn slots(&self) -> Vec<(usize, usize)> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, &k)| (0..k).map(move |r| (i, r)))
            .collect()
    }
}

/// Relabels by first appearance: the first distinct value becomes 1, the
/// next new value 2, and so on.
pub fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i + 1,
            None => {
                seen.push(*l);
                seen.len()
            }
        })
        .collect()
}

/// Canonicalized labels wrapped with their slot segment ids.
pub fn canonical_sequence(labels: &[usize], slot_segment_ids: Vec<usize>) -> Result<LabelSequence> {
    LabelSequence::new(canonicalize(labels), slot_segment_ids)
}

fn plan_ranges(segment_ranges: &[Range<usize>], plan: &DecodePlan) -> Result<()> {
    if plan.counts.len() > segment_ranges.len() {
        return Err(Error::NoWindows(segment_ranges.len() + 1));
    }
    if plan.counts.len() < segment_ranges.len() {
        return Err(Error::Shape(format!(
            "plan covers {} segments, sequence has {}",
            plan.counts.len(),
            segment_ranges.len()
        )));
    }
    Ok(())
}

fn cross_mask(segment_ranges: &[Range<usize>], slot_segments: &[usize], n: usize) -> Result<AttentionMask> {
    AttentionMask::from_fn(slot_segments.len(), n, |t, j| segment_ranges[slot_segments[t]].contains(&j))
}

/// Cross-attention mask letting each output slot see only the windows of
/// its own segment.
pub fn build_cross_mask(seq: &EmbeddingSequence, plan: &DecodePlan) -> Result<AttentionMask> {
    let ranges: Vec<Range<usize>> = seq.segment_ranges().into_iter().map(|(_, r)| r).collect();
    plan_ranges(&ranges, plan)?;
    let slots: Vec<usize> = plan.slots().into_iter().map(|(i, _)| i).collect();
    cross_mask(&ranges, &slots, seq.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{TimeInterval, WindowEmbedding};

    fn seq_with_sizes(sizes: &[usize]) -> EmbeddingSequence {
        let mut windows = Vec::new();
        let mut t = 0.0;
        for (i, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                windows.push(WindowEmbedding {
                    segment_id: i + 1,
                    interval: TimeInterval { start: t, end: t + 1.0 },
                    vector: vec![0.0],
                });
                t += 1.0;
            }
            t += 0.5;
        }
        EmbeddingSequence::new("m".into(), windows, 1).unwrap()
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize(&[3, 3, 1, 3, 2]), vec![1, 1, 2, 1, 3]);
        assert_eq!(canonicalize(&[1, 2, 1, 3]), vec![1, 2, 1, 3]);
        assert!(canonicalize(&[]).is_empty());
    }

    #[test]
    fn figure_one_mask() {
        let seq = seq_with_sizes(&[2, 3, 3]);
        let plan = DecodePlan::new(vec![1, 2, 1]).unwrap();
        let m = build_cross_mask(&seq, &plan).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 8));
        for slot in [1, 2] {
            let allowed: Vec<usize> = (0..8).filter(|&j| m.allowed(slot, j)).collect();
            assert_eq!(allowed, vec![2, 3, 4]);
        }
        assert_eq!(m.row_count(0), 2);
        assert_eq!(m.row_count(3), 3);
    }

    #[test]
    fn single_segment_mask_is_full() {
        let seq = seq_with_sizes(&[4]);
        let m = build_cross_mask(&seq, &DecodePlan::new(vec![1]).unwrap()).unwrap();
        assert_eq!(m, AttentionMask::full(1, 4));
    }

    #[test]
    fn plan_longer_than_sequence_is_an_error() {
        let seq = seq_with_sizes(&[2]);
        let plan = DecodePlan::new(vec![1, 1]).unwrap();
        assert!(matches!(build_cross_mask(&seq, &plan), Err(Error::NoWindows(2))));
        assert!(DecodePlan::new(vec![1, 0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SdncConfig::default().validate().is_ok());
        let c = SdncConfig {
            num_heads: 5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SdncConfig {
            max_clusters: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
