//! Aligning fresh cluster ids with the previous epoch's pseudo labels.
//!
//! The permutation maximizing the number of samples whose new label equals
//! their old one is a maximum-weight perfect matching on the `K × K`
//! agreement matrix, solved with the Kuhn–Munkres (Hungarian) algorithm.

use crate::error::{Error, Result};

/// A bijection on `0..k`, stored as `map[cluster] = label`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(k: usize) -> Self {
        Permutation((0..k).collect())
    }

    /// Fails unless `map` is a bijection on `0..map.len()`.
    pub fn from_vec(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::config("permutation", format!("{map:?} is not a bijection")));
            }
        }
        Ok(Permutation(map))
    }

    pub fn apply(&self, cluster: usize) -> usize {
        self.0[cluster]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// `Σ_j matrix[j][π(j)]`.
    pub fn agreement(&self, matrix: &[Vec<u64>]) -> u64 {
        self.0.iter().enumerate().map(|(j, &m)| matrix[j][m]).sum()
    }
}

/// `K × K` contingency counts: entry `(j, k)` is the number of samples with
/// new cluster `j` and previous label `k`.
pub fn agreement_matrix(assignments: &[usize], prev_labels: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if assignments.len() != prev_labels.len() {
        return Err(Error::LengthMismatch {
            left: assignments.len(),
            right: prev_labels.len(),
        });
    }
    let mut m = vec![vec![0u64; k]; k];
    for (&a, &p) in assignments.iter().zip(prev_labels) {
        for label in [a, p] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, bound: k });
            }
        }
        m[a][p] += 1;
    }
    Ok(m)
}

/// Minimum-cost perfect assignment on a square matrix (O(n³) shortest
/// augmenting path with potentials). Returns `row -> column`.
fn hungarian_min(cost: &[Vec<i128>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![i128::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = i128::MAX;
            let mut col1 = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let cur = cost[r - 1][c - 1] - u[r] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for c in 1..=n {
        if owner[c] > 0 {
            out[owner[c] - 1] = c - 1;
        }
    }
    out
}

/// The bijection maximizing `Σ_j matrix[j][π(j)]`. Among maximizers the
/// lexicographically smallest `(π(0), π(1), …)` wins.
///
/// Ties are folded into the costs: choosing label `l` for row `j` adds
/// `l · K^(K−1−j)` and every count is scaled by `K^K`, which exceeds the
/// largest possible tie-break total. The optimum is then unique and is the
/// lexicographic minimum among count maximizers.
pub fn optimal_permutation(matrix: &[Vec<u64>]) -> Permutation {
    let k = matrix.len();
    debug_assert!(matrix.iter().all(|r| r.len() == k), "square matrix");
    if k == 0 {
        return Permutation(Vec::new());
    }
    let kk = k as i128;
    let scale = kk.checked_pow(k as u32).and_then(|s| {
        let max_count = matrix.iter().flatten().copied().max().unwrap_or(0) as i128;
        s.checked_mul(max_count.max(1) * kk * 4).map(|_| s)
    });
    let cost: Vec<Vec<i128>> = match scale {
        Some(scale) => (0..k)
            .map(|j| {
                let place = kk.pow((k - 1 - j) as u32);
                (0..k)
                    .map(|l| -(matrix[j][l] as i128) * scale + l as i128 * place)
                    .collect()
            })
            .collect(),
        // Too large for exact tie folding; plain maximization.
        None => matrix
            .iter()
            .map(|r| r.iter().map(|&c| -(c as i128)).collect())
            .collect(),
    };
    Permutation(hungarian_min(&cost))
}

/// Align raw cluster ids with previous labels; returns the permutation and the
/// aligned labels `π(a_i)`.
pub fn align_assignments(assignments: &[usize], prev_labels: &[usize], k: usize) -> Result<(Permutation, Vec<usize>)> {
    let m = agreement_matrix(assignments, prev_labels, k)?;
    let perm = optimal_permutation(&m);
    let labels = assignments.iter().map(|&a| perm.apply(a)).collect();
    Ok((perm, labels))
}
