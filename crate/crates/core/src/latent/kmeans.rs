use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::style::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    /// Independent seedings; the run with the lowest final inertia is kept.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 100,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// `k × d`.
    pub centroids: FeatureMatrix,
    pub inertia: f64,
    /// Inertia after every assignment step, in order.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first centre uniform, the rest drawn with probability
/// proportional to the squared distance to the nearest chosen centre.
fn seed_centroids(x: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centroids = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest-centroid assignment; ties go to the lower centroid index.
fn assign(x: &FeatureMatrix, centroids: &[Vec<f64>], out: &mut [usize], dist: &mut [f64]) {
    for i in 0..x.rows() {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(x.row(i), c);
            if d < best.1 {
                best = (j, d);
            }
        }
        out[i] = best.0;
        dist[i] = best.1;
    }
}

/// Move every empty cluster's centroid onto the point farthest from its own
/// centroid, taking that point from a cluster that keeps at least one member.
fn repair_empty(
    x: &FeatureMatrix,
    centroids: &mut [Vec<f64>],
    labels: &mut [usize],
    dist: &mut [f64],
) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&a| sizes[a] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let mut far = None;
        for i in 0..x.rows() {
            if sizes[labels[i]] > 1 && far.is_none_or(|(_, d)| dist[i] > d) {
                far = Some((i, dist[i]));
            }
        }
        let Some((i, _)) = far else { return };
        centroids[empty] = x.row(i).to_vec();
        labels[i] = empty;
        dist[i] = 0.0;
    }
}

fn update(x: &FeatureMatrix, labels: &[usize], centroids: &mut [Vec<f64>]) -> f64 {
    let (k, d) = (centroids.len(), x.cols());
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in labels.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    let mut shift = 0.0f64;
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let next: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
        centroids[j] = next;
    }
    shift
}

fn lloyd(x: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng, opts: &KMeansOptions) -> Result<KMeansResult> {
    let n = x.rows();
    let mut centroids = seed_centroids(x, k, rng);
    let mut labels = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        assign(x, &centroids, &mut labels, &mut dist);
        repair_empty(x, &mut centroids, &mut labels, &mut dist);
        history.push(dist.iter().sum());
        if update(x, &labels, &mut centroids) < opts.tol {
            break;
        }
    }
    assign(x, &centroids, &mut labels, &mut dist);
    repair_empty(x, &mut centroids, &mut labels, &mut dist);
    let inertia = dist.iter().sum();
    history.push(inertia);
    let flat = centroids.concat();
    Ok(KMeansResult {
        assignments: labels,
        centroids: FeatureMatrix::new(k, x.cols(), flat)?,
        inertia,
        history,
        iterations,
    })
}

/// Lloyd's algorithm from k-means++ seeding, restarted `n_init` times from
/// one seeded stream. The lowest final inertia wins, the earliest run on a
/// tie. Every returned cluster is non-empty.
pub fn kmeans(x: &FeatureMatrix, k: usize, seed: u64, opts: KMeansOptions) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if opts.n_init == 0 {
        return Err(Error::config("n_init", "must be >= 1"));
    }
    if n < k {
        return Err(Error::TooFewSamples { need: k, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = lloyd(x, k, &mut rng, &opts)?;
    for _ in 1..opts.n_init {
        let r = lloyd(x, k, &mut rng, &opts)?;
        if r.inertia < best.inertia {
            best = r;
        }
    }
    Ok(best)
}
