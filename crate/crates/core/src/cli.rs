//! Command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{export_dataset, Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::latent::kmeans;
use crate::metrics::{aggregate, nmi, CellRecord, SummaryTable};
use crate::model::Model;
use crate::style::reduce_dim;
use crate::train::{clustering_features, evaluate, train, FeatureKind, Mode, RunRecord};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "LATENT_DG_OUT";

#[derive(Debug, Parser)]
#[command(name = "latent-dg", version, about = "Domain generalization with latent pseudo domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default: $LATENT_DG_OUT or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and export it as PNG files plus a manifest.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a single run.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        k_hat: Option<usize>,
        /// Sets the model, data and clustering seeds together.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every (mode, K̂, held-out domain) cell over several seeds and
    /// aggregate the results.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "full")]
        modes: Vec<Mode>,
        /// `a..b` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "3")]
        k_hat: String,
        /// Number of seeds; seeds run from `--seed-base`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        seed_base: u64,
        /// Held-out domains; `all` rotates through every domain.
        #[arg(long)]
        held_out: Option<String>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Accuracy of a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Target)]
        split: SplitName,
    },
    /// Cluster style features of the training images without training and
    /// report agreement with domains and categories.
    ClusterReport {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        k_hat: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use a trained model instead of a freshly initialized one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Cluster pooled raw activations instead of style statistics.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Target,
}

impl clap::ValueEnum for Mode {
    fn value_variants<'a>() -> &'a [Self] {
        &Mode::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

fn output_root(common: &CommonArgs) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let pairs = common
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config {
                    field: "set",
                    reason: format!("expected KEY=VALUE, got {kv:?}"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    base.with_overrides(&pairs)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn run_metrics(record: &RunRecord) -> BTreeMap<String, f64> {
    let s = &record.summary;
    let mut m = BTreeMap::new();
    m.insert("target_accuracy".to_string(), s.target_accuracy);
    m.insert("val_accuracy".to_string(), s.best_val_accuracy);
    m.insert("nmi_domain".to_string(), s.final_nmi_domain.unwrap_or(f64::NAN));
    m.insert("nmi_category".to_string(), s.final_nmi_category.unwrap_or(f64::NAN));
    m
}

/// Train one configuration into `dir`: `metrics.jsonl`, `checkpoint.bin`,
/// `config.echo` and a one-row `summary.csv`.
pub fn train_into(cfg: &RunConfig, dataset: &Dataset, split: &DatasetSplit, dir: &Path) -> Result<RunRecord> {
    create_dir(dir)?;
    write_file(&dir.join("config.echo"), &cfg.echo()?)?;
    let outcome = train(&cfg.train, dataset, split)?;
    outcome.record.write_jsonl(&dir.join("metrics.jsonl"))?;
    save_checkpoint(&outcome.model, &dir.join("checkpoint.bin"))?;
    let cell = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let rec = CellRecord {
        cell: cell.clone(),
        metrics: run_metrics(&outcome.record),
    };
    aggregate(&[cell], &[rec])?.write_csv(&dir.join("summary.csv"))?;
    Ok(outcome.record)
}

fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config {
        field: "k_hat",
        reason: format!("expected `a..b` or a list, got {s:?}"),
    };
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if ks.is_empty() {
        return Err(bad());
    }
    Ok(ks)
}

struct Job {
    cell: String,
    seed: u64,
    config: RunConfig,
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    common: &CommonArgs,
    modes: &[Mode],
    k_hat: &str,
    seeds: u64,
    seed_base: u64,
    held_out: Option<&str>,
    jobs: usize,
) -> Result<SummaryTable> {
    let base = load_config(common)?;
    let dataset = base.data.dataset()?;
    let base = base.synced(&dataset);
    let ks = parse_k_range(k_hat)?;
    let helds: Vec<usize> = match held_out {
        None => vec![base.data.held_out_domain],
        Some("all") => (0..dataset.num_domains()).collect(),
        Some(list) => list
            .split(',')
            .map(|x| {
                x.trim().parse().map_err(|_| Error::Config {
                    field: "held_out",
                    reason: format!("bad domain index {x:?}"),
                })
            })
            .collect::<Result<_>>()?,
    };
    if modes.is_empty() || seeds == 0 {
        return Err(Error::config("sweep", "modes and seeds must be non-empty"));
    }
    let root = output_root(common);
    create_dir(&root)?;
    let mut cells = Vec::new();
    let mut plan = Vec::new();
    for &mode in modes {
        for &k in &ks {
            for &h in &helds {
                let cell = format!("{mode}_k{k}_held{h}");
                cells.push(cell.clone());
                for seed in seed_base..seed_base + seeds {
                    let mut config = base.clone();
                    config.train.mode = mode;
                    config.train.k_hat = k;
                    config.train = config.train.with_seed(seed);
                    config.data.held_out_domain = h;
                    plan.push(Job {
                        cell: cell.clone(),
                        seed,
                        config,
                    });
                }
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<CellRecord>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, plan.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = plan.get(i) else { break };
                let dir = root.join(&job.cell).join(format!("seed_{}", job.seed));
                let res = job
                    .config
                    .data
                    .split(&dataset)
                    .and_then(|split| train_into(&job.config, &dataset, &split, &dir))
                    .map(|record| CellRecord {
                        cell: job.cell.clone(),
                        metrics: run_metrics(&record),
                    });
                results.lock().expect("no panics while holding the lock").push((i, res));
            });
        }
    });
    let mut results = results.into_inner().expect("threads joined");
    results.sort_by_key(|(i, _)| *i);
    let records = results.into_iter().map(|(_, r)| r).collect::<Result<Vec<_>>>()?;
    let table = aggregate(&cells, &records)?;
    table.write_csv(&root.join("summary.csv"))?;
    write_file(&root.join("config.echo"), &base.echo()?)?;
    Ok(table)
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let dataset = cfg.data.dataset()?;
            let root = output_root(&common);
            create_dir(&root)?;
            export_dataset(&dataset, &root)?;
            write_file(&root.join("config.echo"), &cfg.echo()?)?;
            println!("wrote {} images to {}", dataset.len(), root.display());
        }
        Command::Train {
            common,
            mode,
            k_hat,
            seed,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = mode {
                cfg.train.mode = m;
            }
            if let Some(k) = k_hat {
                cfg.train.k_hat = k;
            }
            if let Some(s) = seed {
                cfg.train = cfg.train.with_seed(s);
            }
            let dataset = cfg.data.dataset()?;
            let cfg = cfg.synced(&dataset);
            let split = cfg.data.split(&dataset)?;
            let dir = output_root(&common);
            let record = train_into(&cfg, &dataset, &split, &dir)?;
            let s = &record.summary;
            println!(
                "mode {} k_hat {} selected epoch {}: val {:.4} target {:.4}",
                s.mode, s.k_hat, s.selected_epoch, s.best_val_accuracy, s.target_accuracy
            );
            println!("outputs in {}", dir.display());
        }
        Command::Sweep {
            common,
            modes,
            k_hat,
            seeds,
            seed_base,
            held_out,
            jobs,
        } => {
            let table = sweep(&common, &modes, &k_hat, seeds, seed_base, held_out.as_deref(), jobs)?;
            for c in &table.cells {
                let t = &c.metrics["target_accuracy"];
                println!("{:<28} runs {}  target {:.4} ± {:.4}", c.cell, c.runs, t.mean, t.std);
            }
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let cfg = load_config(&common)?;
            let dataset = cfg.data.dataset()?;
            let cfg = cfg.synced(&dataset);
            let model: Model = load_checkpoint(&checkpoint, None)?;
            let sp = cfg.data.split(&dataset)?;
            let ids = match split {
                SplitName::Train => &sp.train,
                SplitName::Val => &sp.val,
                SplitName::Target => &sp.target,
            };
            let samples = dataset.select(ids)?;
            let acc = evaluate(&model, &samples, &cfg.train.augment, cfg.train.eval_batch_size)?;
            println!("{split:?} accuracy {acc:.6} on {} samples", samples.len());
        }
        Command::ClusterReport {
            common,
            k_hat,
            seed,
            checkpoint,
            raw,
        } => {
            let cfg = load_config(&common)?;
            let dataset = cfg.data.dataset()?;
            let mut cfg = cfg.synced(&dataset);
            if let Some(k) = k_hat {
                cfg.train.k_hat = k;
            }
            if let Some(s) = seed {
                cfg.train = cfg.train.with_seed(s);
            }
            let t = &cfg.train;
            let model = match &checkpoint {
                Some(p) => load_checkpoint(p, None)?,
                None => Model::build(
                    crate::model::ModelConfig {
                        num_pseudo_domains: t.k_hat,
                        ..t.model.clone()
                    },
                    t.model_seed,
                )?,
            };
            let split = cfg.data.split(&dataset)?;
            let samples = dataset.select(&split.train)?;
            let kind = if raw {
                FeatureKind::RawPooled(t.raw_feature_dim)
            } else {
                FeatureKind::StyleStats
            };
            let feats = clustering_features(&model, &samples, kind, t.epsilon, &t.augment, t.eval_batch_size)?;
            let reduced = reduce_dim(&feats, t.target_dim)?;
            let km = kmeans(&reduced, t.k_hat, t.cluster_seed, t.kmeans_options())?;
            let domains: Vec<usize> = samples.iter().map(|s| s.true_domain).collect();
            let categories: Vec<usize> = samples.iter().map(|s| s.category).collect();
            println!("samples {}  features {}  k_hat {}", samples.len(), feats.cols(), t.k_hat);
            println!("NMI(pseudo, domain)   {:.4}", nmi(&km.assignments, &domains)?);
            println!("NMI(pseudo, category) {:.4}", nmi(&km.assignments, &categories)?);
        }
    }
    Ok(())
}

/// Parse `argv` and run. Returns the process exit status: 0 on success, 2 on
/// usage errors, 1 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
