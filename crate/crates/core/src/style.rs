//! Channel-wise feature statistics as domain-discriminative features.
//!
//! For an activation `φ(x)` of shape `C × H × W` the per-channel mean and
//! standard deviation are taken over the spatial grid with population variance
//! and a stabilizer `ε`:
//!
//! ```text
//! μ_c = (1/HW) Σ_hw x_chw
//! σ_c = sqrt((1/HW) Σ_hw (x_chw − μ_c)² + ε)
//! ```
//!
//! Stacking `[μ(φ_1), σ(φ_1), …, μ(φ_M), σ(φ_M)]` over the tap layers gives one
//! feature vector per image.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Dense row-major `rows × cols` matrix of per-sample feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "feature matrix",
                format!("{rows}×{cols} vs {} values", data.len()),
            ));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("feature matrix", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Append the rows of `other`.
    pub fn extend(&mut self, other: &FeatureMatrix) -> Result<()> {
        if self.rows > 0 && other.cols != self.cols {
            return Err(Error::shape("feature matrix", "column mismatch"));
        }
        self.cols = other.cols;
        self.rows += other.rows;
        self.data.extend_from_slice(&other.data);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Std,
}

/// Channel statistics of one tap layer for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    pub layer_index: usize,
    pub epsilon: f64,
    pub channels: usize,
    /// `batch × channels`, row-major.
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn channel_stats(activation: &Tensor, layer_index: usize, epsilon: f64) -> Result<StyleStats> {
    let s = activation.shape();
    if s.len() != 4 || s[2] * s[3] == 0 {
        return Err(Error::shape("channel_stats", format!("activation {s:?} must be N×C×H×W with H·W ≥ 1")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::config("epsilon", "must be > 0"));
    }
    let hw = (s[2] * s[3]) as f64;
    let mut mu = Vec::with_capacity(s[0] * s[1]);
    let mut sigma = Vec::with_capacity(s[0] * s[1]);
    for plane in activation.data().chunks(s[2] * s[3]) {
        let m = plane.iter().sum::<f64>() / hw;
        let var = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / hw;
        mu.push(m);
        sigma.push((var + epsilon).sqrt());
    }
    Ok(StyleStats {
        layer_index,
        epsilon,
        channels: s[1],
        mu,
        sigma,
    })
}

/// One contiguous block of columns in a [`DdfMatrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub layer: usize,
    pub statistic: Statistic,
    pub channels: usize,
}

/// Stacked style statistics, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DdfMatrix {
    pub features: FeatureMatrix,
    pub manifest: Vec<ManifestEntry>,
}

impl DdfMatrix {
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// One label per column, e.g. `layer1.mu.3`.
    pub fn column_labels(&self) -> Vec<String> {
        self.manifest
            .iter()
            .flat_map(|e| {
                let stat = match e.statistic {
                    Statistic::Mean => "mu",
                    Statistic::Std => "sigma",
                };
                (0..e.channels).map(move |c| format!("layer{}.{stat}.{c}", e.layer))
            })
            .collect()
    }

    /// Write the matrix as CSV with the column labels as header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.column_labels())?;
        for i in 0..self.features.rows() {
            w.write_record(self.features.row(i).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Stack `[μ, σ]` per tap layer into one row per sample.
pub fn ddf(taps: &[Tensor], layer_indices: &[usize], epsilon: f64) -> Result<DdfMatrix> {
    if taps.len() != layer_indices.len() {
        return Err(Error::LengthMismatch {
            left: taps.len(),
            right: layer_indices.len(),
        });
    }
    let batch = taps.first().ok_or(Error::EmptySet)?.shape()[0];
    let mut stats = Vec::with_capacity(taps.len());
    for (t, &layer) in taps.iter().zip(layer_indices) {
        if t.shape().first() != Some(&batch) {
            return Err(Error::shape(
                "ddf",
                format!("tap {layer} has batch {:?}, expected {batch}", t.shape().first()),
            ));
        }
        stats.push(channel_stats(t, layer, epsilon)?);
    }
    let dim: usize = stats.iter().map(|s| 2 * s.channels).sum();
    let mut data = Vec::with_capacity(batch * dim);
    for n in 0..batch {
        for s in &stats {
            let c = s.channels;
            data.extend_from_slice(&s.mu[n * c..(n + 1) * c]);
            data.extend_from_slice(&s.sigma[n * c..(n + 1) * c]);
        }
    }
    let manifest = stats
        .iter()
        .flat_map(|s| {
            [Statistic::Mean, Statistic::Std].map(|statistic| ManifestEntry {
                layer: s.layer_index,
                statistic,
                channels: s.channels,
            })
        })
        .collect();
    Ok(DdfMatrix {
        features: FeatureMatrix::new(batch, dim, data)?,
        manifest,
    })
}

/// Principal-component projection fitted on a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    /// `k × d`, orthonormal rows sorted by decreasing explained variance.
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
}

impl Pca {
    /// Fit the top `k` components. Each component's largest-magnitude entry is
    /// made positive so the result never depends on solver sign conventions.
    pub fn fit(x: &FeatureMatrix, k: usize) -> Result<Pca> {
        Self::fit_route(x, k, x.cols() > x.rows())
    }

    fn fit_route(x: &FeatureMatrix, k: usize, gram: bool) -> Result<Pca> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(Error::TooFewSamples { need: 2, got: n });
        }
        if k == 0 {
            return Err(Error::config("target_dim", "must be >= 1"));
        }
        let k = k.min(d);
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);

        // Eigen-decompose whichever of XᵀX (d×d) and XXᵀ (n×n) is smaller.
        let mut pairs = if gram {
            eigen_pairs(&centered * centered.transpose())
        } else {
            eigen_pairs(centered.transpose() * &centered)
        };
        pairs.truncate(k);
        let mut components = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        for (value, vector) in pairs {
            let mut v: Vec<f64> = if gram {
                // Xᵀu spans the same direction as the covariance eigenvector.
                let u = nalgebra::DVector::from_vec(vector);
                (centered.transpose() * u).iter().copied().collect()
            } else {
                vector
            };
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-300 {
                v = vec![0.0; d];
            } else {
                v.iter_mut().for_each(|a| *a /= norm);
                fix_sign(&mut v);
            }
            explained_variance.push(value.max(0.0) / (n - 1) as f64);
            components.push(v);
        }
        Ok(Pca {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(
                "pca transform",
                format!("{} columns, fitted on {}", x.cols(), self.mean.len()),
            ));
        }
        let k = self.components.len();
        let mut data = Vec::with_capacity(x.rows() * k);
        let mut centered = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&self.mean) {
                *c = v - m;
            }
            for comp in &self.components {
                data.push(comp.iter().zip(&centered).map(|(a, b)| a * b).sum());
            }
        }
        FeatureMatrix::new(x.rows(), k, data)
    }
}

fn eigen_pairs(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &val)| (val, eig.eigenvectors.column(j).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if a.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

/// Project onto the top `target_dim` principal components, or pass the
/// matrix through unchanged when it is already narrow enough.
pub fn reduce_dim(features: &FeatureMatrix, target_dim: usize) -> Result<FeatureMatrix> {
    if target_dim == 0 {
        return Err(Error::config("target_dim", "must be >= 1"));
    }
    if features.rows() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: features.rows(),
        });
    }
    if features.cols() <= target_dim {
        return Ok(features.clone());
    }
    Pca::fit(features, target_dim)?.transform(features)
}

/// Flatten each sample of an activation and average consecutive runs of
/// values down to `dim` entries (no-op when already no longer than `dim`).
pub fn pooled_raw_features(activation: &Tensor, dim: usize) -> Result<FeatureMatrix> {
    let s = activation.shape();
    if s.is_empty() || dim == 0 {
        return Err(Error::shape("pooled_raw_features", format!("activation {s:?}, dim {dim}")));
    }
    let n = s[0];
    let len = activation.numel() / n.max(1);
    let out = len.min(dim);
    let mut data = Vec::with_capacity(n * out);
    for sample in activation.data().chunks(len.max(1)) {
        for j in 0..out {
            let (a, b) = (j * len / out, (j + 1) * len / out);
            data.push(sample[a..b].iter().sum::<f64>() / (b - a) as f64);
        }
    }
    FeatureMatrix::new(n, out, data)
}
