//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails.
//!
//! Criteria 6 to 8 train on the default synthetic set with the painting style
//! held out. `LATENT_DG_ACCEPTANCE_HELD_OUT` takes a comma-separated list of
//! domain indices to rotate over instead.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::{Duration, Instant};

use latent_dg::checkpoint::{load_checkpoint, save_checkpoint};
use latent_dg::config::RunConfig;
use latent_dg::data::{batch_of, standardize, Dataset, DatasetSplit};
use latent_dg::latent::{kmeans, optimal_permutation, KMeansOptions, Permutation};
use latent_dg::losses::{classification_loss, entropy_loss, lambda_schedule};
use latent_dg::metrics::nmi;
use latent_dg::nn::{Tape, Tensor};
use latent_dg::style::FeatureMatrix;
use latent_dg::train::{evaluate, predict, train, Mode, RunRecord, TrainOutcome};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=5;
const K_HATS: std::ops::RangeInclusive<usize> = 2..=6;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

/// Bypasses the test harness capture so the lines show up in plain
/// `cargo test` output.
fn report(id: usize, name: &str, v: &Verdict) {
    let tag = if v.passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr();
    writeln!(err, "{tag} criterion {id} ({name}): {}", v.detail).unwrap();
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut worst_layer = ("", 0.0f64);
    for case in common::LAYERS {
        for seed in 0..common::INSTANCES {
            let e = common::layer_error(case, seed);
            if e > worst_layer.1 {
                worst_layer = (case.name, e);
            }
        }
    }
    let worst_composed = (0..common::INSTANCES).map(common::composed_error).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        worst_layer.1 < common::TOL && worst_composed < common::TOL && elapsed < Duration::from_secs(60),
        format!(
            "{} layer kinds x {} instances, worst {:.2e} ({}); composed objective worst {:.2e}; {}",
            common::LAYERS.len(),
            common::INSTANCES,
            worst_layer.1,
            worst_layer.0,
            worst_composed,
            secs(elapsed)
        ),
    )
}

fn grl_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut forward_exact = true;
    let mut backward_exact = true;
    for _ in 0..common::INSTANCES {
        let lambda: f64 = rng.random_range(0.0..2.0);
        let x = common::random(&[4, 5], 0.0, &mut rng);
        let up = common::random(&[4, 5], 0.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = tape.grl(xv, lambda).unwrap();
        forward_exact &= tape.value(y).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        let g = tape.backward_from(y, up.clone()).unwrap();
        backward_exact &= g.wrt(xv).unwrap().data().iter().zip(up.data()).all(|(a, u)| *a == -lambda * u);
    }
    let gap = (0..common::INSTANCES).map(common::decomposition_gap).fold(0.0, f64::max);
    verdict(
        forward_exact && backward_exact && gap < 1e-9,
        format!(
            "forward bit-exact {forward_exact}, backward = -lambda*upstream {backward_exact}, term-wise extractor gradient gap {gap:.2e}"
        ),
    )
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn hungarian_optimality() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tally = Vec::new();
    for k in 2..=6 {
        let perms = permutations(k);
        let mut hits = 0;
        for _ in 0..100 {
            let m: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..50)).collect()).collect();
            let best = perms
                .iter()
                .map(|p| Permutation::from_vec(p.clone()).unwrap().agreement(&m))
                .max()
                .unwrap();
            if optimal_permutation(&m).agreement(&m) == best {
                hits += 1;
            }
        }
        tally.push((k, hits));
    }
    let elapsed = start.elapsed();
    let all = tally.iter().all(|&(_, h)| h == 100);
    let detail = tally.iter().map(|(k, h)| format!("K={k}: {h}/100")).collect::<Vec<_>>().join(", ");
    verdict(all && elapsed < Duration::from_secs(10), format!("{detail}; {}", secs(elapsed)))
}

fn kmeans_behaviour() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut monotone = 0;
    for i in 0..50 {
        let n = rng.random_range(20..80);
        let d = rng.random_range(1..6);
        let k = rng.random_range(2..6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let r = kmeans(&FeatureMatrix::from_rows(&rows).unwrap(), k, i, KMeansOptions::default()).unwrap();
        if r.history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)) {
            monotone += 1;
        }
    }
    let sigma = 1.0;
    let centers = [[0.0, 0.0], [10.0 * sigma, 0.0], [5.0 * sigma, 10.0 * sigma]];
    let mut recovered = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let (mut rows, mut truth) = (Vec::new(), Vec::new());
        for (b, c) in centers.iter().enumerate() {
            for _ in 0..40 {
                rows.push(c.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<f64>>());
                truth.push(b);
            }
        }
        let r = kmeans(&FeatureMatrix::from_rows(&rows).unwrap(), 3, seed, KMeansOptions::default()).unwrap();
        if nmi(&r.assignments, &truth).unwrap() == 1.0 {
            recovered += 1;
        }
    }
    verdict(
        monotone == 50 && recovered == 10,
        format!("inertia non-increasing on {monotone}/50 instances; blob NMI = 1 on {recovered}/10 seeds"),
    )
}

fn closed_forms() -> Verdict {
    let mut worst = 0.0f64;
    for c in 2..=10 {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::full(&[3, c], 0.37));
        let ce = classification_loss(&mut tape, logits, &[0, c - 1, c / 2]).unwrap();
        let ent = entropy_loss(&mut tape, logits).unwrap();
        let ln_c = (c as f64).ln();
        worst = worst.max((tape.value(ce).item() - ln_c).abs()).max((tape.value(ent).item() - ln_c).abs());
    }
    let l0 = lambda_schedule(0.0, 10.0);
    let l1 = lambda_schedule(1.0, 10.0);
    verdict(
        worst < 1e-9 && l0 == 0.0 && (l1 - 0.9999092).abs() < 1e-6,
        format!("uniform CE/entropy vs ln C worst {worst:.1e}; lambda(0) = {l0}; lambda(1) = {l1:.7}"),
    )
}

struct Bench {
    held_out: Vec<usize>,
    data: BTreeMap<usize, (RunConfig, Dataset, DatasetSplit)>,
    runs: HashMap<(Mode, usize, usize, u64), (RunRecord, Duration)>,
}

impl Bench {
    fn new() -> Bench {
        let held_out = match std::env::var("LATENT_DG_ACCEPTANCE_HELD_OUT") {
            Ok(s) => s.split(',').map(|d| d.trim().parse().expect("domain index")).collect(),
            Err(_) => vec![RunConfig::default().data.held_out_domain],
        };
        let mut data = BTreeMap::new();
        for &h in &held_out {
            let mut cfg = RunConfig::default();
            cfg.data.held_out_domain = h;
            let ds = cfg.data.dataset().unwrap();
            let split = cfg.data.split(&ds).unwrap();
            data.insert(h, (cfg.synced(&ds), ds, split));
        }
        Bench {
            held_out,
            data,
            runs: HashMap::new(),
        }
    }

    fn outcome(&self, mode: Mode, k_hat: usize, held: usize, seed: u64) -> TrainOutcome {
        let (cfg, ds, split) = &self.data[&held];
        let mut t = cfg.train.clone().with_seed(seed);
        t.mode = mode;
        t.k_hat = k_hat;
        train(&t, ds, split).unwrap()
    }

    fn run(&mut self, mode: Mode, k_hat: usize, held: usize, seed: u64) -> &RunRecord {
        let key = (mode, k_hat, held, seed);
        if !self.runs.contains_key(&key) {
            let start = Instant::now();
            let out = self.outcome(mode, k_hat, held, seed);
            let took = start.elapsed();
            let s = &out.record.summary;
            let mut err = std::io::stderr();
            writeln!(
                err,
                "  run {mode} k={k_hat} held={held} seed={seed}: target {:.3}, val {:.3}, nmi domain {:.3}, nmi category {:.3}, {}",
                s.target_accuracy,
                s.best_val_accuracy,
                s.final_nmi_domain.unwrap_or(f64::NAN),
                s.final_nmi_category.unwrap_or(f64::NAN),
                secs(took)
            )
            .unwrap();
            self.runs.insert(key, (out.record, took));
        }
        &self.runs[&key].0
    }

    /// Mean target accuracy over seeds and held-out domains.
    fn mean_accuracy(&mut self, mode: Mode, k_hat: usize) -> f64 {
        let mut acc = Vec::new();
        for h in self.held_out.clone() {
            for seed in SEEDS {
                acc.push(self.run(mode, k_hat, h, seed).summary.target_accuracy);
            }
        }
        acc.iter().sum::<f64>() / acc.len() as f64
    }
}

fn latent_domain_recovery(bench: &mut Bench) -> Verdict {
    let mut domain = Vec::new();
    let mut ahead = 0;
    let mut slowest = Duration::ZERO;
    for h in bench.held_out.clone() {
        for seed in SEEDS {
            let s = bench.run(Mode::Full, 3, h, seed).summary.clone();
            slowest = slowest.max(bench.runs[&(Mode::Full, 3, h, seed)].1);
            let (d, c) = (s.final_nmi_domain.unwrap(), s.final_nmi_category.unwrap());
            domain.push(d);
            if d > c {
                ahead += 1;
            }
        }
    }
    let mean = domain.iter().sum::<f64>() / domain.len() as f64;
    verdict(
        mean >= 0.8 && ahead == domain.len() && slowest < Duration::from_secs(15 * 60),
        format!(
            "mean NMI(pseudo, domain) {mean:.3} (per seed {}); NMI domain > category in {ahead}/{}; slowest run {}",
            domain.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>().join(" "),
            domain.len(),
            secs(slowest)
        ),
    )
}

fn method_vs_baseline(bench: &mut Bench) -> Verdict {
    let full = bench.mean_accuracy(Mode::Full, 3);
    let deep_all = bench.mean_accuracy(Mode::DeepAll, 3);
    let no_adv = bench.mean_accuracy(Mode::NoAdv, 3);
    verdict(
        full > deep_all && full >= no_adv,
        format!("mean target accuracy full {full:.3}, deep_all {deep_all:.3}, no_adv {no_adv:.3}"),
    )
}

fn k_hat_robustness(bench: &mut Bench) -> Verdict {
    let means: Vec<(usize, f64)> = K_HATS.map(|k| (k, bench.mean_accuracy(Mode::Full, k))).collect();
    let best = means.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let widest = means.iter().map(|m| best - m.1).fold(0.0, f64::max);
    verdict(
        widest <= 0.03,
        format!(
            "mean target accuracy {}; largest gap to best {:.1} pp",
            means.iter().map(|(k, m)| format!("K={k}: {m:.3}")).collect::<Vec<_>>().join(", "),
            100.0 * widest
        ),
    )
}

fn determinism(bench: &mut Bench) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let h = bench.held_out[0];
    let seed = *SEEDS.start();
    let first = bench.run(Mode::Full, 3, h, seed).clone();
    let again = bench.outcome(Mode::Full, 3, h, seed);
    first.write_jsonl(&dir.path().join("a.jsonl")).unwrap();
    again.record.write_jsonl(&dir.path().join("b.jsonl")).unwrap();
    let same_jsonl = std::fs::read(dir.path().join("a.jsonl")).unwrap() == std::fs::read(dir.path().join("b.jsonl")).unwrap();

    let (cfg, ds, split) = &bench.data[&h];
    let path = dir.path().join("checkpoint.bin");
    save_checkpoint(&again.model, &path).unwrap();
    let back = load_checkpoint(&path, Some(again.model.config())).unwrap();
    let target = ds.select(&split.target).unwrap();
    let aug = &cfg.train.augment;
    let same_predictions = predict(&again.model, &target, aug, 64).unwrap() == predict(&back, &target, aug, 64).unwrap();
    let same_accuracy = evaluate(&again.model, &target, aug, 64).unwrap().to_bits() == evaluate(&back, &target, aug, 64).unwrap().to_bits();
    let batch = batch_of(&target, |s| standardize(&s.image, aug)).unwrap();
    let (a, b) = (again.model.predict_logits(batch.clone()).unwrap(), back.predict_logits(batch).unwrap());
    let same_logits = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    verdict(
        same_jsonl && same_predictions && same_accuracy && same_logits,
        format!(
            "metrics.jsonl identical {same_jsonl}; checkpoint logits bit-exact {same_logits}, predictions {same_predictions}, accuracy {same_accuracy}"
        ),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();
    let mut record = |id: usize, name: &str, v: Verdict| {
        report(id, name, &v);
        verdicts.push((id, v.passed));
    };
    record(1, "gradient correctness", gradient_correctness());
    record(2, "GRL contract", grl_contract());
    record(3, "Hungarian optimality", hungarian_optimality());
    record(4, "k-means", kmeans_behaviour());
    record(5, "closed-form losses", closed_forms());

    let mut bench = Bench::new();
    record(6, "latent-domain recovery", latent_domain_recovery(&mut bench));
    record(7, "method vs baseline", method_vs_baseline(&mut bench));
    record(8, "K-hat robustness", k_hat_robustness(&mut bench));
    record(9, "determinism and persistence", determinism(&mut bench));

    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.1).map(|v| v.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn permutation_enumeration_is_complete() {
    let mut all = permutations(4);
    assert_eq!(all.len(), 24);
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 24);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = vec![0, 1, 2, 3];
    p.shuffle(&mut rng);
    assert!(all.contains(&p));
}
