//! Run configuration and the `key = value` file format.
//!
//! Keys are dotted paths into [`RunConfig`] (`train.epochs`,
//! `train.model.discriminator_hidden`, `data.held_out_domain`). A bare key is
//! looked up under `train` first, then `data`. Values are JSON literals; text
//! that does not parse as JSON is taken as a string, so `mode = no_adv` works.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{generate_dataset, load_image_folder, make_splits, Dataset, DatasetSplit, DomainStyleSpec, SHAPE_NAMES};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub styles: Vec<DomainStyleSpec>,
    pub num_classes: usize,
    pub n_per_domain: usize,
    pub image_size: usize,
    pub seed: u64,
    pub held_out_domain: usize,
    pub val_fraction: f64,
    pub split_seed: u64,
    /// Load images from this manifest instead of generating them.
    pub manifest: Option<PathBuf>,
    /// Category names for a loaded manifest; defaults to the first
    /// `num_classes` shape names.
    pub class_names: Option<Vec<String>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            styles: DomainStyleSpec::defaults(),
            num_classes: 4,
            n_per_domain: 200,
            image_size: 32,
            seed: 0,
            held_out_domain: 3,
            val_fraction: 0.1,
            split_seed: 0,
            manifest: None,
            class_names: None,
        }
    }
}

impl DataConfig {
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.manifest {
            Some(m) => {
                let names = match &self.class_names {
                    Some(n) => n.clone(),
                    None => SHAPE_NAMES
                        .get(..self.num_classes)
                        .ok_or_else(|| Error::config("data.num_classes", "more classes than shape names"))?
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                };
                let root = m.parent().unwrap_or(Path::new("."));
                load_image_folder(root, m, &names, self.image_size)
            }
            None => generate_dataset(&self.styles, self.num_classes, self.n_per_domain, self.image_size, self.seed),
        }
    }

    pub fn split(&self, dataset: &Dataset) -> Result<DatasetSplit> {
        make_splits(dataset, self.held_out_domain, self.val_fraction, self.split_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Copy dataset-derived sizes into the model config.
    pub fn synced(mut self, dataset: &Dataset) -> Self {
        self.train.model.num_classes = dataset.num_classes();
        self.train.model.image_size = dataset.image_size;
        self
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::default().with_overrides(&parse_pairs(&text)?)
    }

    /// Apply `key = value` overrides in order.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for (key, raw) in pairs {
            let path = resolve(&root, key)?;
            let (last, parents) = path.split_last().expect("non-empty path");
            let mut node = &mut root;
            for p in parents {
                node = node.get_mut(p.as_str()).expect("resolved path");
            }
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            node.as_object_mut().expect("resolved parent is an object").insert(last.clone(), value);
        }
        serde_json::from_value(root).map_err(|e| Error::Config {
            field: "config",
            reason: e.to_string(),
        })
    }

    /// Every leaf as a `key = value` line; parsing the result reproduces
    /// this config.
    pub fn echo(&self) -> Result<String> {
        let mut out = String::new();
        flatten("", &serde_json::to_value(self)?, &mut out);
        Ok(out)
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => {
            writeln!(out, "{prefix} = {leaf}").expect("write to String");
        }
    }
}

fn resolve(root: &Value, key: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    let exists = |path: &[String]| {
        let mut node = root;
        for p in path {
            match node.as_object().and_then(|m: &Map<String, Value>| m.get(p)) {
                Some(n) => node = n,
                None => return false,
            }
        }
        true
    };
    let candidates = [
        parts.clone(),
        [vec!["train".to_string()], parts.clone()].concat(),
        [vec!["data".to_string()], parts.clone()].concat(),
    ];
    candidates
        .into_iter()
        .find(|c| exists(c))
        .ok_or_else(|| Error::Config {
            field: "config",
            reason: format!("unknown key {key:?}"),
        })
}

/// Parse `key = value` lines. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            field: "config",
            reason: format!("line {}: expected `key = value`, got {line:?}", n + 1),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config {
                field: "config",
                reason: format!("line {}: empty key", n + 1),
            });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
