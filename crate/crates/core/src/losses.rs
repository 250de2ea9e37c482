//! Training objective.
//!
//! ```text
//! total = L_cls + λ·L_ent + L_adv(GRL_λ)
//! ```
//!
//! The adversarial branch already passed through a gradient reversal layer of
//! strength λ, so one backward pass gives the discriminator `∂L_adv` and the
//! feature extractor `∂L_cls + λ∂L_ent − λ∂L_adv`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

/// How the entropy term enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// Minimize mean prediction entropy (sharpen class decisions).
    #[default]
    Minimize,
    /// Add the negated mean entropy, i.e. maximize entropy.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub use_adv: bool,
    pub use_ent: bool,
    /// Steepness of the λ ramp.
    pub lambda_gamma: f64,
    pub inverse_size_weighting: bool,
    pub entropy_sign: EntropySign,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            use_adv: true,
            use_ent: true,
            lambda_gamma: 10.0,
            inverse_size_weighting: true,
            entropy_sign: EntropySign::Minimize,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gamma > 0.0) {
            return Err(Error::config("lambda_gamma", "must be > 0"));
        }
        Ok(())
    }
}

/// Scalar values of one step's losses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_cls: f64,
    pub l_adv: f64,
    pub l_ent: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Mean cross-entropy `−(1/N) Σ log softmax(logits)[yᵢ]`.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    tape.nll(lp, labels, None)
}

/// Per-sample weights `N / (K · size[d̂ᵢ])`, where `N = Σ sizes` and `K` is
/// the number of pseudo domains.
pub fn inverse_size_weights(pseudo_labels: &[usize], cluster_sizes: &[usize]) -> Result<Vec<f64>> {
    let k = cluster_sizes.len();
    let n: usize = cluster_sizes.iter().sum();
    pseudo_labels
        .iter()
        .map(|&d| match cluster_sizes.get(d) {
            None => Err(Error::LabelOutOfRange { label: d, bound: k }),
            Some(0) => Err(Error::EmptyPseudoDomain(d)),
            Some(&s) => Ok(n as f64 / (k as f64 * s as f64)),
        })
        .collect()
}

/// Domain cross-entropy against pseudo labels, weighted by inverse pseudo
/// domain size and normalized by the batch's weight total.
pub fn adversarial_loss(
    tape: &mut Tape,
    domain_logits: Var,
    pseudo_labels: &[usize],
    cluster_sizes: &[usize],
    weighting: bool,
) -> Result<Var> {
    let weights = inverse_size_weights(pseudo_labels, cluster_sizes)?;
    let lp = tape.log_softmax(domain_logits)?;
    tape.nll(lp, pseudo_labels, weighting.then_some(&weights[..]))
}

/// Mean Shannon entropy of the softmax distribution, `(1/N) Σᵢ −Σ_c pᵢc log pᵢc`.
pub fn entropy_loss(tape: &mut Tape, logits: Var) -> Result<Var> {
    let n = tape.value(logits).shape()[0].max(1);
    let lp = tape.log_softmax(logits)?;
    let p = tape.exp(lp);
    let plogp = tape.mul(p, lp)?;
    let s = tape.sum(plogp);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// `λ(p) = 2 / (1 + exp(−γp)) − 1`; `p` outside `[0, 1]` is clamped.
pub fn lambda_schedule(progress: f64, gamma: f64) -> f64 {
    let p = if (0.0..=1.0).contains(&progress) {
        progress
    } else {
        log::warn!("training progress {progress} outside [0, 1]; clamping");
        progress.clamp(0.0, 1.0)
    };
    2.0 / (1.0 + (-gamma * p).exp()) - 1.0
}

/// Combine the per-term losses into the scalar that gets differentiated.
/// `l_adv` must come from domain logits computed behind `GRL(lambda)`.
pub fn compose_total(
    tape: &mut Tape,
    l_cls: Var,
    l_ent: Option<Var>,
    l_adv: Option<Var>,
    lambda: f64,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    let mut report = LossReport {
        l_cls: tape.value(l_cls).item(),
        lambda,
        ..LossReport::default()
    };
    let mut total = l_cls;
    if let (true, Some(ent)) = (cfg.use_ent, l_ent) {
        report.l_ent = tape.value(ent).item();
        let sign = match cfg.entropy_sign {
            EntropySign::Minimize => 1.0,
            EntropySign::Literal => -1.0,
        };
        let term = tape.scale(ent, sign * lambda);
        total = tape.add(total, term)?;
    }
    if let (true, Some(adv)) = (cfg.use_adv, l_adv) {
        report.l_adv = tape.value(adv).item();
        total = tape.add(total, adv)?;
    }
    report.total = tape.value(total).item();
    Ok((total, report))
}
