//! Exact minimum-cost assignment (Hungarian algorithm, O(n^3)).

/// Solves the square assignment problem.
///
/// Returns `assign[row] = col` minimizing the total cost. Rectangular
/// problems should be padded by the caller.
pub fn solve(costs: &[Vec<f64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(costs.iter().all(|row| row.len() == n));

    let inf = f64::INFINITY;
    // potentials and matching use 1-based indices, 0 is a sentinel column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Pads a rectangular cost matrix to square with `fill`.
pub fn pad_square(costs: &[Vec<f64>], cols: usize, fill: f64) -> Vec<Vec<f64>> {
    let n = costs.len().max(cols);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| costs.get(i).and_then(|r| r.get(j)).copied().unwrap_or(fill))
                .collect()
        })
        .collect()
}

pub fn total_cost(costs: &[Vec<f64>], assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| costs[i][j]).sum()
}
