//! The training loop: per-epoch pseudo domain reassignment followed by
//! minibatch updates of the joint objective, with best-validation model
//! selection.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, batch_of, standardize, AugmentConfig, Dataset, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::latent::{KMeansOptions, PseudoDomainState, ReassignOptions};
use crate::losses::{
    adversarial_loss, classification_loss, compose_total, entropy_loss, lambda_schedule, EntropySign, LossConfig,
    LossReport,
};
use crate::metrics::{accuracy, nmi};
use crate::model::{Model, ModelConfig};
use crate::nn::{ParamGroup, ParamStore, Sgd, Tape, Tensor};
use crate::style::{ddf, pooled_raw_features, reduce_dim, FeatureMatrix, Pca};

/// Training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Clustering on style statistics, adversarial and entropy terms.
    #[default]
    Full,
    /// Classification loss only.
    DeepAll,
    NoAdv,
    NoEnt,
    /// Cluster pooled raw activations instead of style statistics.
    NoStat,
    /// Cluster once, before the first epoch, and keep those labels.
    NoIter,
    /// Use the true domain labels instead of clusters.
    NoClus,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Full,
        Mode::DeepAll,
        Mode::NoAdv,
        Mode::NoEnt,
        Mode::NoStat,
        Mode::NoIter,
        Mode::NoClus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::DeepAll => "deep_all",
            Mode::NoAdv => "no_adv",
            Mode::NoEnt => "no_ent",
            Mode::NoStat => "no_stat",
            Mode::NoIter => "no_iter",
            Mode::NoClus => "no_clus",
        }
    }

    pub fn uses_adv(self) -> bool {
        !matches!(self, Mode::DeepAll | Mode::NoAdv)
    }

    pub fn uses_ent(self) -> bool {
        !matches!(self, Mode::DeepAll | Mode::NoEnt)
    }

    /// Whether pseudo domains come from clustering.
    pub fn clusters(self) -> bool {
        !matches!(self, Mode::DeepAll | Mode::NoClus)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::config("mode", format!("unknown mode {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    /// Fraction of `epochs` after which the decay applies.
    pub lr_decay_at: f64,
    /// Learning-rate multiplier of the classifier and discriminator.
    pub head_lr_multiplier: f64,
    /// Rescale the joint gradient to at most this L2 norm before each step.
    pub max_grad_norm: Option<f64>,
    /// Number of pseudo domains. Ignored by `no_clus`, which uses the number
    /// of source domains.
    pub k_hat: usize,
    pub mode: Mode,
    pub model_seed: u64,
    /// Shuffling and augmentation.
    pub data_seed: u64,
    pub cluster_seed: u64,
    pub epsilon: f64,
    pub target_dim: usize,
    /// Refit the principal components at every reassignment; otherwise the
    /// projection fitted at the first reassignment is reused.
    pub refit_reduction: bool,
    /// Width of the pooled raw features clustered by `no_stat`.
    pub raw_feature_dim: usize,
    pub align_first: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kmeans_n_init: usize,
    pub lambda_gamma: f64,
    pub inverse_size_weighting: bool,
    pub entropy_sign: EntropySign,
    pub eval_batch_size: usize,
    pub augment: AugmentConfig,
    /// `num_pseudo_domains` is overwritten from `k_hat` (or the source domain
    /// count under `no_clus`).
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            base_lr: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.1,
            lr_decay_at: 0.8,
            head_lr_multiplier: 1.0,
            max_grad_norm: None,
            k_hat: 3,
            mode: Mode::Full,
            model_seed: 0,
            data_seed: 0,
            cluster_seed: 0,
            epsilon: crate::style::DEFAULT_EPSILON,
            target_dim: 256,
            refit_reduction: true,
            raw_feature_dim: 1024,
            align_first: true,
            kmeans_max_iter: KMeansOptions::default().max_iter,
            kmeans_tol: KMeansOptions::default().tol,
            kmeans_n_init: KMeansOptions::default().n_init,
            lambda_gamma: 10.0,
            inverse_size_weighting: true,
            entropy_sign: EntropySign::Minimize,
            eval_batch_size: 64,
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Set all three seeds from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model_seed = seed;
        self.data_seed = seed;
        self.cluster_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.lr_decay_at > 0.0 && self.lr_decay_at <= 1.0) {
            return Err(Error::config("lr_decay_at", "must be in (0, 1]"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::config("lr_decay_factor", "must be > 0"));
        }
        if !(self.head_lr_multiplier > 0.0) {
            return Err(Error::config("head_lr_multiplier", "must be > 0"));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::config("max_grad_norm", "must be > 0"));
        }
        if self.mode != Mode::NoClus && self.k_hat < 2 {
            return Err(Error::config("k_hat", "must be >= 2"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        if self.kmeans_n_init == 0 {
            return Err(Error::config("kmeans_n_init", "must be >= 1"));
        }
        if self.target_dim == 0 || self.raw_feature_dim == 0 {
            return Err(Error::config("target_dim", "must be >= 1"));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            use_adv: self.mode.uses_adv(),
            use_ent: self.mode.uses_ent(),
            lambda_gamma: self.lambda_gamma,
            inverse_size_weighting: self.inverse_size_weighting,
            entropy_sign: self.entropy_sign,
        }
    }

    /// Learning rate for a 0-based epoch; the decay starts at epoch
    /// `ceil(lr_decay_at · epochs)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let start = (self.lr_decay_at * self.epochs as f64 - 1e-9).ceil() as usize;
        if epoch >= start {
            self.base_lr * self.lr_decay_factor
        } else {
            self.base_lr
        }
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            n_init: self.kmeans_n_init,
        }
    }

    fn reassign_options(&self) -> ReassignOptions {
        ReassignOptions {
            kmeans: self.kmeans_options(),
            align_first: self.align_first,
        }
    }
}

/// Scale all gradients so their joint L2 norm is at most `max`; returns the
/// norm before scaling.
pub fn clip_grad_norm(store: &mut ParamStore, max: f64) -> f64 {
    let norm = store
        .iter()
        .map(|(_, p)| p.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let f = max / norm;
        store.iter_mut().for_each(|p| p.grad.data_mut().iter_mut().for_each(|g| *g *= f));
    }
    norm
}

/// Training progress `p = step / total_steps` for every step of every epoch.
pub fn progress_schedule(epochs: usize, batches_per_epoch: usize) -> Vec<f64> {
    let total = (epochs * batches_per_epoch) as f64;
    (0..epochs * batches_per_epoch).map(|s| s as f64 / total).collect()
}

/// Which representation is clustered into pseudo domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Stacked channel means and standard deviations of the tap layers.
    StyleStats,
    /// Flattened tap activations, mean-pooled to the given width.
    RawPooled(usize),
}

/// Per-sample clustering features from un-augmented images.
pub fn clustering_features(
    model: &Model,
    samples: &[&Sample],
    kind: FeatureKind,
    epsilon: f64,
    augment_cfg: &AugmentConfig,
    batch_size: usize,
) -> Result<FeatureMatrix> {
    let mut out: Option<FeatureMatrix> = None;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = batch_of(chunk, |s| standardize(&s.image, augment_cfg))?;
        let taps = model.extract_tap_activations(batch)?;
        let fm = match kind {
            FeatureKind::StyleStats => ddf(&taps, &model.config().tap_layers, epsilon)?.features,
            FeatureKind::RawPooled(dim) => {
                let n = chunk.len();
                let per: Vec<usize> = taps.iter().map(|t| t.numel() / n).collect();
                let width: usize = per.iter().sum();
                let mut flat = Vec::with_capacity(n * width);
                for i in 0..n {
                    for (t, &p) in taps.iter().zip(&per) {
                        flat.extend_from_slice(&t.data()[i * p..(i + 1) * p]);
                    }
                }
                pooled_raw_features(&Tensor::new(vec![n, width], flat)?, dim)?
            }
        };
        match &mut out {
            None => out = Some(fm),
            Some(acc) => acc.extend(&fm)?,
        }
    }
    out.ok_or(Error::EmptySet)
}

/// Argmax class predictions on standardized, un-augmented images.
pub fn predict(model: &Model, samples: &[&Sample], augment_cfg: &AugmentConfig, batch_size: usize) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = batch_of(chunk, |s| standardize(&s.image, augment_cfg))?;
        preds.extend(model.predict_logits(batch)?.argmax_rows());
    }
    Ok(preds)
}

/// Classification accuracy on un-augmented images.
pub fn evaluate(model: &Model, samples: &[&Sample], augment_cfg: &AugmentConfig, batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let preds = predict(model, samples, augment_cfg, batch_size)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.category).collect();
    accuracy(&preds, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    /// False when the labels were carried over without clustering.
    pub reassigned: bool,
    pub inertia: f64,
    /// Fraction of samples keeping their previous label.
    pub agreement: f64,
    pub nmi_domain: f64,
    pub nmi_category: f64,
    pub sizes: Vec<usize>,
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// λ at every step of the epoch.
    pub lambdas: Vec<f64>,
    /// Step-averaged losses.
    pub loss: LossReport,
    /// On augmented training batches.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub target_accuracy: f64,
    pub cluster: Option<ClusterDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub k_hat: usize,
    pub selected_epoch: usize,
    pub best_val_accuracy: f64,
    /// Target accuracy of the selected model.
    pub target_accuracy: f64,
    pub final_nmi_domain: Option<f64>,
    pub final_nmi_category: Option<f64>,
    pub reassign_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum JsonlLine<'a> {
    Epoch(&'a EpochRecord),
    Summary(&'a RunSummary),
}

impl RunRecord {
    /// One JSON object per epoch followed by the summary object.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let lines = self.epochs.iter().map(JsonlLine::Epoch).chain([JsonlLine::Summary(&self.summary)]);
        for line in lines {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub model: Model,
    pub record: RunRecord,
    /// Pseudo domain state after the last epoch, if the mode has one.
    pub pseudo_domains: Option<PseudoDomainState>,
}

fn check_split(dataset: &Dataset, split: &DatasetSplit) -> Result<()> {
    let n = dataset.len();
    let mut seen = vec![false; n];
    for &i in split.train.iter().chain(&split.val).chain(&split.target) {
        if i >= n {
            return Err(Error::LabelOutOfRange { label: i, bound: n });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::config("split", format!("sample {i} appears twice")));
        }
    }
    if split.train.is_empty() || split.val.is_empty() || split.target.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

fn diagnostics(state: &PseudoDomainState, reassigned: bool, domains: &[usize], categories: &[usize]) -> Result<ClusterDiagnostics> {
    Ok(ClusterDiagnostics {
        reassigned,
        inertia: state.inertia(),
        agreement: state.agreement_rate(),
        nmi_domain: nmi(state.labels(), domains)?,
        nmi_category: nmi(state.labels(), categories)?,
        sizes: state.cluster_sizes().to_vec(),
        permutation: state.permutation().as_slice().to_vec(),
    })
}

/// Run one training job. Deterministic in the config's seeds.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, split: &DatasetSplit) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_split(dataset, split)?;
    let train_set = dataset.select(&split.train)?;
    let val_set = dataset.select(&split.val)?;
    let target_set = dataset.select(&split.target)?;

    // Source domains renumbered densely; only diagnostics and `no_clus` read them.
    let mut source_domains: Vec<usize> = train_set.iter().map(|s| s.true_domain).collect();
    source_domains.sort_unstable();
    source_domains.dedup();
    let domains: Vec<usize> = train_set
        .iter()
        .map(|s| source_domains.binary_search(&s.true_domain).expect("present"))
        .collect();
    let categories: Vec<usize> = train_set.iter().map(|s| s.category).collect();

    let k = if cfg.mode == Mode::NoClus {
        source_domains.len().max(2)
    } else {
        cfg.k_hat
    };
    let model_cfg = ModelConfig {
        num_pseudo_domains: k,
        ..cfg.model.clone()
    };
    if model_cfg.num_classes != dataset.num_classes() {
        return Err(Error::config(
            "model.num_classes",
            format!("{} but the dataset has {} classes", model_cfg.num_classes, dataset.num_classes()),
        ));
    }
    if model_cfg.image_size != dataset.image_size {
        return Err(Error::config(
            "model.image_size",
            format!("{} but the dataset images are {}", model_cfg.image_size, dataset.image_size),
        ));
    }
    let mut model = Model::build(model_cfg, cfg.model_seed)?;
    for p in model.params_mut().iter_mut() {
        if p.group != ParamGroup::FeatureExtractor {
            p.lr_multiplier = cfg.head_lr_multiplier;
        }
    }
    let mut sgd = Sgd::new(model.params(), cfg.base_lr, cfg.momentum, cfg.weight_decay)?;
    let loss_cfg = cfg.loss_config();
    let feature_kind = match cfg.mode {
        Mode::NoStat => FeatureKind::RawPooled(cfg.raw_feature_dim),
        _ => FeatureKind::StyleStats,
    };

    let mut state = match cfg.mode {
        Mode::DeepAll => None,
        Mode::NoClus => Some(PseudoDomainState::from_labels(domains.clone(), k)?),
        _ => Some(PseudoDomainState::new(train_set.len(), k)?),
    };
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let schedule = progress_schedule(cfg.epochs, batches_per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    let mut reassign_calls = 0;
    let mut projection: Option<Pca> = None;

    for epoch in 0..cfg.epochs {
        let cluster = match state.as_mut() {
            None => None,
            Some(st) => {
                let recluster = cfg.mode.clusters() && (cfg.mode != Mode::NoIter || epoch == 0);
                if recluster {
                    let feats = clustering_features(
                        &model,
                        &train_set,
                        feature_kind,
                        cfg.epsilon,
                        &cfg.augment,
                        cfg.eval_batch_size,
                    )?;
                    let reduced = match &projection {
                        Some(pca) if !cfg.refit_reduction => pca.transform(&feats)?,
                        _ if feats.cols() <= cfg.target_dim => reduce_dim(&feats, cfg.target_dim)?,
                        _ => {
                            let pca = Pca::fit(&feats, cfg.target_dim)?;
                            let out = pca.transform(&feats)?;
                            projection = Some(pca);
                            out
                        }
                    };
                    let seed = cfg.cluster_seed.wrapping_add(epoch as u64);
                    *st = st.reassign(&reduced, seed, &cfg.reassign_options())?;
                    reassign_calls += 1;
                }
                Some(diagnostics(st, recluster, &domains, &categories)?)
            }
        };

        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sums = LossReport::default();
        let mut lambdas = Vec::with_capacity(batches_per_epoch);
        let mut hits = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * batches_per_epoch + b;
            let lambda = lambda_schedule(schedule[step], cfg.lambda_gamma);
            lambdas.push(lambda);
            let batch_samples: Vec<&Sample> = idx.iter().map(|&i| train_set[i]).collect();
            // One augmentation stream per (epoch, sample).
            let batch = batch_of(&batch_samples, |s| {
                let stream = (epoch * dataset.len() + s.id) as u64;
                augment(&s.image, cfg.data_seed, stream, &cfg.augment)
            })?;
            let labels: Vec<usize> = batch_samples.iter().map(|s| s.category).collect();

            let mut tape = Tape::new();
            let (features, _) = model.extract(&mut tape, batch)?;
            let logits = model.classify(&mut tape, features)?;
            let l_cls = classification_loss(&mut tape, logits, &labels)?;
            let l_ent = if loss_cfg.use_ent {
                Some(entropy_loss(&mut tape, logits)?)
            } else {
                None
            };
            let l_adv = match (&state, loss_cfg.use_adv) {
                (Some(st), true) => {
                    let d_logits = model.discriminate(&mut tape, features, lambda)?;
                    let pseudo: Vec<usize> = idx.iter().map(|&i| st.labels()[i]).collect();
                    Some(adversarial_loss(
                        &mut tape,
                        d_logits,
                        &pseudo,
                        st.cluster_sizes(),
                        loss_cfg.inverse_size_weighting,
                    )?)
                }
                _ => None,
            };
            let (total, report) = compose_total(&mut tape, l_cls, l_ent, l_adv, lambda, &loss_cfg)?;
            if !report.total.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            hits += tape
                .value(logits)
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            tape.backward_into(total, model.params_mut())?;
            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(model.params_mut(), max);
            }
            sgd.step(model.params_mut(), lr).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Diverged { epoch, step },
                other => other,
            })?;
            sums.l_cls += report.l_cls;
            sums.l_adv += report.l_adv;
            sums.l_ent += report.l_ent;
            sums.lambda += report.lambda;
            sums.total += report.total;
        }
        if let Some(st) = state.as_mut() {
            st.finish_epoch();
        }

        let nb = batches_per_epoch as f64;
        let loss = LossReport {
            l_cls: sums.l_cls / nb,
            l_adv: sums.l_adv / nb,
            l_ent: sums.l_ent / nb,
            lambda: sums.lambda / nb,
            total: sums.total / nb,
        };
        let val_accuracy = evaluate(&model, &val_set, &cfg.augment, cfg.eval_batch_size)?;
        let target_accuracy = evaluate(&model, &target_set, &cfg.augment, cfg.eval_batch_size)?;
        log::info!(
            "[{} k={}] epoch {epoch}: loss {:.4} val {:.3} target {:.3}{}",
            cfg.mode,
            k,
            loss.total,
            val_accuracy,
            target_accuracy,
            cluster
                .as_ref()
                .map(|c| format!(" nmi_d {:.3} nmi_y {:.3}", c.nmi_domain, c.nmi_category))
                .unwrap_or_default()
        );
        if best.as_ref().is_none_or(|(_, v, _)| val_accuracy > *v) {
            best = Some((epoch, val_accuracy, model.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            lambdas,
            loss,
            train_accuracy: hits as f64 / train_set.len() as f64,
            val_accuracy,
            target_accuracy,
            cluster,
        });
    }

    let (selected_epoch, best_val_accuracy, best_model) = best.expect("epochs >= 1");
    let last_cluster = epochs.last().and_then(|e| e.cluster.as_ref());
    let summary = RunSummary {
        mode: cfg.mode,
        k_hat: k,
        selected_epoch,
        best_val_accuracy,
        target_accuracy: epochs[selected_epoch].target_accuracy,
        final_nmi_domain: last_cluster.map(|c| c.nmi_domain),
        final_nmi_category: last_cluster.map(|c| c.nmi_category),
        reassign_calls,
    };
    Ok(TrainOutcome {
        model: best_model,
        record: RunRecord { epochs, summary },
        pseudo_domains: state,
    })
}
