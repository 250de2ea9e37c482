use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Disjoint sample-id lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub target: Vec<usize>,
    pub val_fraction: f64,
    pub held_out_domain: usize,
}

/// Hold out one domain as the target and split the rest into train and
/// validation, stratified by `(domain, class)`. Each stratum contributes
/// `floor(n · val_fraction)` samples to validation.
pub fn make_splits(dataset: &Dataset, held_out_domain: usize, val_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config("val_fraction", format!("{val_fraction} must be in (0, 1)")));
    }
    if !dataset.samples.iter().any(|s| s.true_domain == held_out_domain) {
        return Err(Error::config(
            "held_out_domain",
            format!("no samples belong to domain {held_out_domain}"),
        ));
    }
    let mut strata: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut target = Vec::new();
    for s in &dataset.samples {
        if s.true_domain == held_out_domain {
            target.push(s.id);
        } else {
            strata.entry((s.true_domain, s.category)).or_default().push(s.id);
        }
    }
    if strata.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for ids in strata.values_mut() {
        ids.shuffle(&mut rng);
        let n_val = (ids.len() as f64 * val_fraction).floor() as usize;
        val.extend_from_slice(&ids[..n_val]);
        train.extend_from_slice(&ids[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(DatasetSplit {
        train,
        val,
        target,
        val_fraction,
        held_out_domain,
    })
}
