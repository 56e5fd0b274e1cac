//! Brute-force reference computations.
//!
//! Each routine here solves a problem by exhaustive enumeration or direct
//! simulation, sharing no code with the production path it is compared
//! against. They back the unit tests, the acceptance suite and the
//! `selftest` subcommand, and are only practical on small inputs.

use std::collections::{BTreeMap, BTreeSet};

use crate::types::{SpeakerSpan, TimeInterval};

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum edit cost found by enumerating every monotone alignment between
/// the two sequences.
///
/// An alignment is a set of strictly increasing `(i, j)` pairs; aligned
/// pairs cost 0 or 1 (substitution), every unaligned token costs 1.
pub fn edit_distance_exhaustive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn rec<T: PartialEq>(a: &[T], b: &[T], i0: usize, j0: usize, pairs: usize, subs: usize, best: &mut usize) {
        let cost = subs + (a.len() - pairs) + (b.len() - pairs);
        *best = (*best).min(cost);
        for i in i0..a.len() {
            for j in j0..b.len() {
                let s = usize::from(a[i] != b[j]);
                rec(a, b, i + 1, j + 1, pairs + 1, subs + s, best);
            }
        }
    }
    let mut best = usize::MAX;
    rec(a, b, 0, 0, 0, 0, &mut best);
    best
}

/// cpWER by trying every bijection between (padded) reference speakers and
/// hypothesis labels. Returns `(total errors, total reference words)`.
pub fn cpwer_exhaustive(ref_streams: &[Vec<String>], hyp_streams: &[Vec<String>]) -> (usize, usize) {
    let n = ref_streams.len().max(hyp_streams.len());
    let empty: Vec<String> = Vec::new();
    let get = |v: &[Vec<String>], i: usize| v.get(i).cloned().unwrap_or_else(|| empty.clone());
    let mut best = usize::MAX;
    for p in permutations(n) {
        let errs: usize = (0..n)
            .map(|i| edit_distance_exhaustive(&get(ref_streams, i), &get(hyp_streams, p[i])))
            .sum();
        best = best.min(errs);
    }
    let total: usize = ref_streams.iter().map(|s| s.len()).sum();
    (best, total)
}

/// Components of an exactly computed DER, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactDer {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_ref: f64,
}

impl ExactDer {
    pub fn der(&self) -> f64 {
        if self.total_ref > 0.0 {
            (self.miss + self.false_alarm + self.confusion) / self.total_ref
        } else {
            0.0
        }
    }
}

/// DER by interval arithmetic: the time axis is cut at every boundary and
/// collar edge, each elementary piece is scored exactly, and the speaker
/// mapping is found by trying every injection.
pub fn der_exact(refs: &[SpeakerSpan], hyps: &[SpeakerSpan], collar: f64) -> ExactDer {
    let excluded: Vec<TimeInterval> = refs
        .iter()
        .flat_map(|s| [s.interval.start, s.interval.end])
        .map(|b| TimeInterval {
            start: (b - collar).max(0.0),
            end: b + collar,
        })
        .collect();
    let mut cuts: Vec<f64> = refs
        .iter()
        .chain(hyps)
        .flat_map(|s| [s.interval.start, s.interval.end])
        .chain(excluded.iter().flat_map(|e| [e.start, e.end]))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let ref_names: Vec<String> = refs.iter().map(|s| s.speaker.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let hyp_names: Vec<String> = hyps.iter().map(|s| s.speaker.clone()).collect::<BTreeSet<_>>().into_iter().collect();

    // elementary pieces: (duration, ref set, hyp set)
    let mut pieces: Vec<(f64, Vec<usize>, Vec<usize>)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        if excluded.iter().any(|e| mid > e.start && mid < e.end) {
            continue;
        }
        let active = |spans: &[SpeakerSpan], names: &[String]| -> Vec<usize> {
            let set: BTreeSet<usize> = spans
                .iter()
                .filter(|s| mid >= s.interval.start && mid < s.interval.end)
                .map(|s| names.iter().position(|n| *n == s.speaker).unwrap())
                .collect();
            set.into_iter().collect()
        };
        pieces.push((b - a, active(refs, &ref_names), active(hyps, &hyp_names)));
    }

    let overlap = |r: usize, h: usize| -> f64 {
        pieces
            .iter()
            .filter(|(_, rs, hs)| rs.contains(&r) && hs.contains(&h))
            .map(|(d, _, _)| d)
            .sum()
    };
    let n = ref_names.len().max(hyp_names.len());
    let mut best_map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut best_score = f64::NEG_INFINITY;
    for p in permutations(n) {
        let score: f64 = (0..ref_names.len())
            .filter(|&r| p[r] < hyp_names.len())
            .map(|r| overlap(r, p[r]))
            .sum();
        if score > best_score + 1e-12 {
            best_score = score;
            best_map = (0..ref_names.len())
                .filter(|&r| p[r] < hyp_names.len())
                .map(|r| (r, p[r]))
                .collect();
        }
    }

    let mut out = ExactDer {
        miss: 0.0,
        false_alarm: 0.0,
        confusion: 0.0,
        total_ref: 0.0,
    };
    for (d, rs, hs) in &pieces {
        let correct = rs
            .iter()
            .filter(|r| best_map.get(r).is_some_and(|h| hs.contains(h)))
            .count();
        let (nr, nh) = (rs.len(), hs.len());
        out.total_ref += d * nr as f64;
        out.miss += d * nr.saturating_sub(nh) as f64;
        out.false_alarm += d * nh.saturating_sub(nr) as f64;
        out.confusion += d * (nr.min(nh) - correct) as f64;
    }
    out
}

/// Two-sided exact Wilcoxon signed-rank p-value by enumerating all `2^n`
/// sign assignments. Zero differences are dropped and tied magnitudes get
/// averaged ranks.
pub fn wilcoxon_exhaustive(diffs: &[f64]) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return 1.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| nz[a].abs().total_cmp(&nz[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[idx[j + 1]].abs() == nz[idx[i]].abs() {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    let w_plus: f64 = (0..n).filter(|&k| nz[k] > 0.0).map(|k| ranks[k]).sum();
    let total: f64 = ranks.iter().sum();
    let observed = w_plus.min(total - w_plus);
    let mut extreme = 0usize;
    for mask in 0u64..(1u64 << n) {
        let wp: f64 = (0..n).filter(|&k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if wp.min(total - wp) <= observed + 1e-9 {
            extreme += 1;
        }
    }
    (extreme as f64 / (1u64 << n) as f64).min(1.0)
}

/// First Speaker ownership evaluated on a grid of `frame`-second frames,
/// with runs of equal owners merged.
pub fn first_speaker_frames(
    seg: &TimeInterval,
    turns: &[(String, TimeInterval)],
    frame: f64,
) -> Vec<(String, f64, f64)> {
    let n = ((seg.end - seg.start) / frame).round() as usize;
    let mut out: Vec<(String, f64, f64)> = Vec::new();
    for k in 0..n {
        let t = seg.start + (k as f64 + 0.5) * frame;
        let owner = turns
            .iter()
            .filter(|(_, iv)| t > iv.start.max(seg.start) && t < iv.end.min(seg.end))
            .min_by(|(a, ia), (b, ib)| {
                ia.start
                    .total_cmp(&ib.start)
                    .then(ia.end.total_cmp(&ib.end))
                    .then(a.cmp(b))
            });
        let Some((spk, _)) = owner else { continue };
        let (fs, fe) = (seg.start + k as f64 * frame, seg.start + (k + 1) as f64 * frame);
        match out.last_mut() {
            Some(last) if last.0 == *spk && (last.2 - fs).abs() < frame * 1e-3 => last.2 = fe,
            _ => out.push((spk.clone(), fs, fe)),
        }
    }
    out
}

/// Smallest within-cluster sum of squares over every split of the points
/// into two non-empty groups.
pub fn best_two_partition_sse(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let sse = |members: &[usize]| -> f64 {
        let d = points[0].len();
        let mut c = vec![0.0; d];
        for &i in members {
            for k in 0..d {
                c[k] += points[i][k];
            }
        }
        for x in &mut c {
            *x /= members.len() as f64;
        }
        members
            .iter()
            .map(|&i| (0..d).map(|k| (points[i][k] - c[k]).powi(2)).sum::<f64>())
            .sum()
    };
    let mut best = f64::INFINITY;
    for mask in 1u64..(1u64 << n) - 1 {
        let a: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let b: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 0).collect();
        best = best.min(sse(&a) + sse(&b));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn exhaustive_edit_distance_basics() {
        let a = ["a", "b", "c"];
        assert_eq!(edit_distance_exhaustive(&a, &a), 0);
        assert_eq!(edit_distance_exhaustive(&a, &["a", "c"]), 1);
        assert_eq!(edit_distance_exhaustive(&a, &[]), 3);
        assert_eq!(edit_distance_exhaustive(&["x", "y"], &["y", "x"]), 2);
    }

    #[test]
    fn exact_der_hand_case() {
        let r = vec![SpeakerSpan::new("A", 0.0, 10.0).unwrap()];
        let h = vec![SpeakerSpan::new("x", 0.0, 9.5).unwrap()];
        let d = der_exact(&r, &h, 0.25);
        assert!((d.total_ref - 9.5).abs() < 1e-12);
        assert!((d.miss - 0.25).abs() < 1e-12);
        assert!((d.der() - 0.25 / 9.5).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_all_positive() {
        // 5 positive differences: only the all-positive and all-negative
        // assignments are as extreme, p = 2/32
        assert!((wilcoxon_exhaustive(&[1.0, 2.0, 3.0, 4.0, 5.0]) - 2.0 / 32.0).abs() < 1e-12);
        assert_eq!(wilcoxon_exhaustive(&[0.0, 0.0]), 1.0);
    }
}
