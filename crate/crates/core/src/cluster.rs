//! Spectral clustering baseline over window embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::nn::Tensor;
use crate::rng::{self, tag};
use crate::sdnc::canonicalize;
use crate::types::{EmbeddingSequence, TimeInterval, VadSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    /// Cosine similarity with negative values clipped to zero.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScConfig {
    pub affinity: Affinity,
    pub row_keep_fraction: f64,
    pub max_speakers: usize,
    pub fixed_k: Option<usize>,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig {
            affinity: Affinity::Cosine,
            row_keep_fraction: 0.1,
            max_speakers: 8,
            fixed_k: None,
            kmeans_restarts: 50,
            seed: 0,
        }
    }
}

impl ScConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.row_keep_fraction > 0.0 && self.row_keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "row_keep_fraction {} outside (0, 1]",
                self.row_keep_fraction
            )));
        }
        if self.max_speakers == 0 || self.fixed_k == Some(0) || self.kmeans_restarts == 0 {
            return Err(Error::Config(
                "max_speakers, fixed_k and kmeans_restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Pruned, symmetrized affinity matrix.
pub fn affinity_matrix(vectors: &[Vec<f64>], keep_fraction: f64) -> Result<Tensor> {
    let n = vectors.len();
    let norms: Vec<f64> = vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(x, y)| x * y).sum();
            let c = dot / (norms[i] * norms[j]);
            if !c.is_finite() {
                return Err(Error::Clustering(format!("non-finite affinity between windows {i} and {j}")));
            }
            a[(i, j)] = c.max(0.0);
        }
    }
    let keep = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut pruned = Tensor::zeros(n, n);
    for i in 0..n {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&x, &y| a[(i, y)].total_cmp(&a[(i, x)]).then(x.cmp(&y)));
        for &j in &idx[..keep] {
            pruned[(i, j)] = a[(i, j)];
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let m = pruned[(i, j)].max(pruned[(j, i)]);
            pruned[(i, j)] = m;
            pruned[(j, i)] = m;
        }
    }
    Ok(pruned)
}

/// `L = D - A`.
pub fn laplacian(a: &Tensor) -> Tensor {
    let n = a.rows();
    let mut l = a.scale(-1.0);
    for i in 0..n {
        let deg: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        l[(i, i)] = deg;
    }
    l
}

/// Eigengap estimate: the `k` in `1..max_speakers` maximizing
/// `lambda[k] - lambda[k-1]` (0-based), the smaller `k` on ties.
pub fn estimate_num_speakers(eigenvalues: &[f64], max_speakers: usize) -> usize {
    let upper = max_speakers.min(eigenvalues.len());
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..upper {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap > best.1 {
            best = (k, gap);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// 0-based cluster index per point.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeansResult {
    let k = centers.len();
    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("k >= 1");
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignment).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            *center = (0..dim)
                .map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64)
                .collect();
        }
    }
    let objective = points.iter().zip(&assignment).map(|(p, &a)| sq_dist(p, &centers[a])).sum();
    KMeansResult { assignment, objective }
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if u < di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            pick
        };
        centers.push(points[next].clone());
    }
    centers
}

/// Best of `restarts` k-means++ initialized Lloyd runs.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::Clustering(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng::stream(seed, &[tag::KMEANS, r as u64]);
        let run = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Canonicalized cluster label per window.
pub fn spectral_cluster(seq: &EmbeddingSequence, cfg: &ScConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = seq.len();
    if n == 0 {
        return Err(Error::Clustering("no windows to cluster".into()));
    }
    if let Some(k) = cfg.fixed_k {
        if k > n {
            return Err(Error::Clustering(format!("cannot form {k} clusters from {n} windows")));
        }
    }
    if n == 1 {
        return Ok(vec![1]);
    }
    let vectors: Vec<Vec<f64>> = seq.windows.iter().map(|w| w.vector.clone()).collect();
    let a = affinity_matrix(&vectors, cfg.row_keep_fraction)?;
    let (values, vecs) = symmetric_eigen(&laplacian(&a))?;
    let k = cfg.fixed_k.unwrap_or_else(|| estimate_num_speakers(&values, cfg.max_speakers));
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r: Vec<f64> = (0..k).map(|j| vecs[(i, j)]).collect();
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.into_iter().map(|x| x / norm).collect()
            } else {
                r
            }
        })
        .collect();
    let km = kmeans(&rows, k, cfg.kmeans_restarts, cfg.seed)?;
    Ok(canonicalize(&km.assignment.iter().map(|a| a + 1).collect::<Vec<_>>()))
}

/// Most frequent label per unit. `units[j]` is the unit of window `j`;
/// ties go to the tied label that appears first in the unit.
pub fn majority_vote(labels: &[usize], units: &[usize]) -> Result<Vec<usize>> {
    if labels.len() != units.len() {
        return Err(Error::Shape(format!("{} labels for {} windows", labels.len(), units.len())));
    }
    let n_units = units.iter().map(|u| u + 1).max().unwrap_or(0);
    let mut out = Vec::with_capacity(n_units);
    for u in 0..n_units {
        let members: Vec<usize> = labels.iter().zip(units).filter(|(_, &w)| w == u).map(|(&l, _)| l).collect();
        if members.is_empty() {
            return Err(Error::EmptySegment(u));
        }
        let mut best = (members[0], 0usize);
        for &l in &members {
            let c = members.iter().filter(|&&m| m == l).count();
            if c > best.1 {
                best = (l, c);
            }
        }
        out.push(best.0);
    }
    Ok(out)
}

/// Merges runs of equal consecutive window labels into intervals that
/// cover `segment` end to end.
pub fn split_by_labels(
    segment: &VadSegment,
    windows: &[TimeInterval],
    labels: &[usize],
) -> Result<Vec<(TimeInterval, usize)>> {
    if windows.len() != labels.len() {
        return Err(Error::Shape(format!("{} labels for {} windows", labels.len(), windows.len())));
    }
    if windows.is_empty() {
        return Err(Error::NoWindows(segment.id));
    }
    let mut out: Vec<(TimeInterval, usize)> = Vec::new();
    for (w, &l) in windows.iter().zip(labels) {
        match out.last_mut() {
            Some((iv, last)) if *last == l => iv.end = w.end,
            Some((iv, _)) => {
                iv.end = w.start;
                out.push((*w, l));
            }
            None => out.push((*w, l)),
        }
    }
    out[0].0.start = segment.interval.start;
    out.last_mut().expect("non-empty").0.end = segment.interval.end;
    Ok(out)
}
