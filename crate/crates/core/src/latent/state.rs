use super::align::{agreement_matrix, optimal_permutation, Permutation};
use super::kmeans::{kmeans, KMeansOptions};
use crate::error::{Error, Result};
use crate::style::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReassignOptions {
    pub kmeans: KMeansOptions,
    /// Align the very first clustering against the all-zero initial labels.
    /// When false, the first permutation is the identity.
    pub align_first: bool,
}

impl Default for ReassignOptions {
    fn default() -> Self {
        ReassignOptions {
            kmeans: KMeansOptions::default(),
            align_first: true,
        }
    }
}

/// Pseudo domain labels for every training sample.
///
/// `labels[i] == permutation.apply(assignments[i])` holds after every
/// [`reassign`](Self::reassign).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDomainState {
    k: usize,
    assignments: Vec<usize>,
    labels: Vec<usize>,
    prev_labels: Vec<usize>,
    centroids: Option<FeatureMatrix>,
    permutation: Permutation,
    cluster_sizes: Vec<usize>,
    inertia: f64,
    reassignments: usize,
}

fn sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut s = vec![0; k];
    labels.iter().for_each(|&l| s[l] += 1);
    s
}

impl PseudoDomainState {
    /// Every sample starts with label 0, both current and previous.
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k_hat", "must be >= 1"));
        }
        Ok(PseudoDomainState {
            k,
            assignments: vec![0; n],
            labels: vec![0; n],
            prev_labels: vec![0; n],
            centroids: None,
            permutation: Permutation::identity(k),
            cluster_sizes: sizes(&vec![0; n], k),
            inertia: 0.0,
            reassignments: 0,
        })
    }

    /// Fixed labels supplied from outside (e.g. known domains).
    pub fn from_labels(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, bound: k });
        }
        Ok(PseudoDomainState {
            k,
            assignments: labels.clone(),
            prev_labels: labels.clone(),
            cluster_sizes: sizes(&labels, k),
            labels,
            centroids: None,
            permutation: Permutation::identity(k),
            inertia: 0.0,
            reassignments: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn prev_labels(&self) -> &[usize] {
        &self.prev_labels
    }

    pub fn centroids(&self) -> Option<&FeatureMatrix> {
        self.centroids.as_ref()
    }

    pub fn permutation(&self) -> &Permutation {
        &self.permutation
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn reassignments(&self) -> usize {
        self.reassignments
    }

    /// Fraction of samples whose current label equals the previous one.
    pub fn agreement_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let same = self.labels.iter().zip(&self.prev_labels).filter(|(a, b)| a == b).count();
        same as f64 / self.labels.len() as f64
    }

    /// Cluster `features` into `k` groups and relabel them to agree as much
    /// as possible with the previous labels. Returns a new state; `self` is
    /// untouched.
    pub fn reassign(&self, features: &FeatureMatrix, seed: u64, opts: &ReassignOptions) -> Result<Self> {
        if features.rows() != self.labels.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: self.labels.len(),
            });
        }
        let result = kmeans(features, self.k, seed, opts.kmeans)?;
        let permutation = if self.reassignments == 0 && !opts.align_first {
            Permutation::identity(self.k)
        } else {
            let m = agreement_matrix(&result.assignments, &self.prev_labels, self.k)?;
            optimal_permutation(&m)
        };
        let labels: Vec<usize> = result.assignments.iter().map(|&a| permutation.apply(a)).collect();
        Ok(PseudoDomainState {
            k: self.k,
            cluster_sizes: sizes(&labels, self.k),
            assignments: result.assignments,
            labels,
            prev_labels: self.prev_labels.clone(),
            centroids: Some(result.centroids),
            permutation,
            inertia: result.inertia,
            reassignments: self.reassignments + 1,
        })
    }

    /// End-of-epoch bookkeeping: the current labels become the previous ones.
    pub fn finish_epoch(&mut self) {
        self.prev_labels.clone_from(&self.labels);
    }
}
