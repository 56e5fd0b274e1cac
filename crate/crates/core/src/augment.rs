//! Training-time augmentation: random rotations of the embedding space and
//! shuffling of same-speaker segment blocks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::householder_qr;
use crate::nn::Tensor;
use crate::rng::{self, tag};
use crate::types::EmbeddingSequence;

/// A square matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix {
    entries: Tensor,
}

impl OrthogonalMatrix {
    pub fn identity(dim: usize) -> Self {
        OrthogonalMatrix {
            entries: Tensor::identity(dim),
        }
    }

    /// Wraps `m` after checking `max |m^T m - I| <= 1e-6`.
    pub fn from_tensor(m: Tensor) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Shape("orthogonal matrix must be square".into()));
        }
        let err = orthogonality_error(&m);
        if err > 1e-6 {
            return Err(Error::Validation(format!(
                "matrix is not orthogonal (error {err:e})"
            )));
        }
        Ok(OrthogonalMatrix { entries: m })
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| self.entries.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `max |m^T m - I|`
pub fn orthogonality_error(m: &Tensor) -> f64 {
    let mtm = m.matmul_t(true, m, false).expect("square");
    mtm.sub(&Tensor::identity(m.rows())).max_abs()
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with each
/// column of Q multiplied by the sign of the matching diagonal entry of R.
pub fn sample_orthogonal(dim: usize, seed: u64) -> OrthogonalMatrix {
    let mut r = rng::stream(seed, &[tag::ROTATION, dim as u64]);
    let data: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(&mut r)).collect();
    let a = Tensor::from_vec(dim, dim, data).expect("dim x dim");
    let (mut q, rr) = householder_qr(&a);
    for j in 0..dim {
        if rr[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    OrthogonalMatrix { entries: q }
}

/// Rotation seed for one training example in one epoch.
pub fn rotation_seed(seed: u64, epoch: u64, example: u64) -> u64 {
    rng::derive_seed(seed, &[tag::ROTATION, epoch, example])
}

/// Replaces every window vector `x` with `Q x`.
pub fn apply_rotation(seq: &EmbeddingSequence, q: &OrthogonalMatrix) -> Result<EmbeddingSequence> {
    if q.dim() != seq.dim {
        return Err(Error::Dimension {
            expected: seq.dim,
            got: q.dim(),
        });
    }
    let mut out = seq.clone();
    for w in &mut out.windows {
        w.vector = q.apply(&w.vector);
    }
    Ok(out)
}

/// Permutes window blocks between segments whose ordered speaker lists are
/// equal, so that every segment keeps its target labels.
///
/// `segment_speakers` maps segment ids to the segment's reference speakers
/// in label order. A moved single-speaker block is truncated or cyclically
/// extended to the receiving segment's window count. Multi-speaker blocks
/// are only exchanged between segments with the same window count, since
/// resizing could drop a speaker. Window intervals stay in place, only the
/// vectors move.
pub fn speaker_shuffle(
    seq: &EmbeddingSequence,
    segment_speakers: &BTreeMap<usize, Vec<String>>,
    seed: u64,
) -> Result<EmbeddingSequence> {
    let ranges: BTreeMap<usize, std::ops::Range<usize>> = seq.segment_ranges().into_iter().collect();
    let mut groups: BTreeMap<(&[String], Option<usize>), Vec<usize>> = BTreeMap::new();
    for (&sid, speakers) in segment_speakers {
        let Some(range) = ranges.get(&sid) else {
            return Err(Error::NoWindows(sid));
        };
        let len = (speakers.len() > 1).then_some(range.len());
        groups.entry((speakers.as_slice(), len)).or_default().push(sid);
    }
    let mut rng = rng::stream(seed, &[tag::SHUFFLE]);
    let mut out = seq.clone();
    for sids in groups.values() {
        if sids.len() < 2 {
            continue;
        }
        let mut sources = sids.clone();
        sources.shuffle(&mut rng);
        for (&dst, &src) in sids.iter().zip(&sources) {
            if dst == src {
                continue;
            }
            let (dr, sr) = (ranges[&dst].clone(), ranges[&src].clone());
            let src_len = sr.len();
            for (k, di) in dr.enumerate() {
                out.windows[di].vector = seq.windows[sr.start + k % src_len].vector.clone();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{TimeInterval, WindowEmbedding};

    fn seq(blocks: &[(usize, usize)]) -> EmbeddingSequence {
        let mut windows = Vec::new();
        let mut t = 0.0;
        let mut v = 0.0;
        for &(sid, n) in blocks {
            for _ in 0..n {
                windows.push(WindowEmbedding {
                    segment_id: sid,
                    interval: TimeInterval { start: t, end: t + 1.0 },
                    vector: vec![v, -v],
                });
                t += 1.0;
                v += 1.0;
            }
        }
        EmbeddingSequence::new("m".into(), windows, 2).unwrap()
    }

    fn speakers(pairs: &[(usize, &str)]) -> BTreeMap<usize, Vec<String>> {
        pairs.iter().map(|(s, n)| (*s, vec![n.to_string()])).collect()
    }

    #[test]
    fn one_by_one_is_plus_or_minus_one() {
        for seed in 0..10 {
            let q = sample_orthogonal(1, seed);
            assert_eq!(q.entries().data()[0].abs(), 1.0);
        }
    }

    #[test]
    fn sampled_matrices_are_orthogonal() {
        for seed in 0..20 {
            let q = sample_orthogonal(16, seed);
            assert!(orthogonality_error(q.entries()) <= 1e-6);
        }
    }

    #[test]
    fn identity_rotation_is_a_no_op_and_zero_stays_zero() {
        let s = seq(&[(1, 2), (2, 1)]);
        assert_eq!(apply_rotation(&s, &OrthogonalMatrix::identity(2)).unwrap(), s);
        let q = sample_orthogonal(2, 5);
        let rotated = apply_rotation(&s, &q).unwrap();
        assert_eq!(rotated.windows[0].vector, vec![0.0, 0.0]);
        assert!(apply_rotation(&s, &sample_orthogonal(3, 1)).is_err());
    }

    #[test]
    fn single_slot_speaker_is_unchanged() {
        let s = seq(&[(1, 2), (2, 3)]);
        let out = speaker_shuffle(&s, &speakers(&[(1, "A"), (2, "B")]), 4).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn equal_blocks_get_exchanged() {
        let s = seq(&[(1, 2), (2, 1), (3, 2)]);
        let spk = speakers(&[(1, "A"), (2, "B"), (3, "A")]);
        let mut swapped = None;
        for seed in 0..50 {
            let out = speaker_shuffle(&s, &spk, seed).unwrap();
            if out != s {
                swapped = Some(out);
                break;
            }
        }
        let out = swapped.expect("some seed swaps the two A blocks");
        assert_eq!(out.windows[0].vector, s.windows[3].vector);
        assert_eq!(out.windows[1].vector, s.windows[4].vector);
        assert_eq!(out.windows[3].vector, s.windows[0].vector);
        assert_eq!(out.windows[2].vector, s.windows[2].vector);
        assert_eq!(out.windows[0].interval, s.windows[0].interval);
    }

    #[test]
    fn unequal_blocks_are_cycled_or_truncated() {
        let s = seq(&[(1, 1), (2, 3)]);
        let spk = speakers(&[(1, "A"), (2, "A")]);
        let out = (0..50)
            .map(|seed| speaker_shuffle(&s, &spk, seed).unwrap())
            .find(|o| *o != s)
            .unwrap();
        assert_eq!(out.windows[0].vector, s.windows[1].vector);
        for k in 1..4 {
            assert_eq!(out.windows[k].vector, s.windows[0].vector);
        }
    }

    #[test]
    fn multi_speaker_blocks_need_equal_lengths() {
        let s = seq(&[(1, 3), (2, 2), (3, 3)]);
        let ab = vec!["A".to_string(), "B".to_string()];
        let spk: BTreeMap<usize, Vec<String>> = [(1, ab.clone()), (2, ab.clone()), (3, ab)].into();
        for seed in 0..30 {
            let out = speaker_shuffle(&s, &spk, seed).unwrap();
            assert_eq!(out.windows[3].vector, s.windows[3].vector);
            assert_eq!(out.windows[4].vector, s.windows[4].vector);
        }
    }

    #[test]
    fn unknown_segment_is_an_error() {
        let s = seq(&[(1, 1)]);
        assert!(matches!(
            speaker_shuffle(&s, &speakers(&[(1, "A"), (9, "A")]), 0),
            Err(Error::NoWindows(9))
        ));
    }
}
