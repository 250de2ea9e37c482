use latent_dg::checkpoint::{decode, encode};
use latent_dg::config::RunConfig;
use latent_dg::data::{Dataset, DatasetSplit};
use latent_dg::metrics::accuracy;
use latent_dg::model::{ConvBlock, ModelConfig};
use latent_dg::nn::{Sgd, ParamGroup, ParamStore, Tensor};
use latent_dg::train::{clip_grad_norm, evaluate, predict, progress_schedule, train, Mode, TrainConfig};
use latent_dg::losses::lambda_schedule;
use latent_dg::metrics::nmi;
use latent_dg::Error;

fn tiny() -> (TrainConfig, Dataset, DatasetSplit) {
    let mut cfg = RunConfig::default();
    cfg.data.n_per_domain = 16;
    cfg.data.image_size = 16;
    cfg.data.val_fraction = 0.25;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 8;
    cfg.train.eval_batch_size = 32;
    cfg.train.model = ModelConfig {
        conv_blocks: [4, 8, 8, 8].into_iter().map(ConvBlock::new).collect(),
        feature_dim: 8,
        discriminator_hidden: 16,
        ..ModelConfig::default()
    };
    let ds = cfg.data.dataset().unwrap();
    let split = cfg.data.split(&ds).unwrap();
    let cfg = cfg.synced(&ds);
    (cfg.train, ds, split)
}

fn with_mode(cfg: &TrainConfig, mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        ..cfg.clone()
    }
}

#[test]
fn deep_all_never_clusters() {
    let (cfg, ds, split) = tiny();
    let out = train(&with_mode(&cfg, Mode::DeepAll), &ds, &split).unwrap();
    assert_eq!(out.record.summary.reassign_calls, 0);
    assert!(out.pseudo_domains.is_none());
    assert!(out.record.epochs.iter().all(|e| e.cluster.is_none() && e.loss.l_adv == 0.0 && e.loss.l_ent == 0.0));
}

#[test]
fn reassignment_counts_per_mode() {
    let (cfg, ds, split) = tiny();
    for (mode, calls) in [(Mode::Full, 3), (Mode::NoIter, 1), (Mode::NoStat, 3), (Mode::NoClus, 0), (Mode::NoAdv, 3)] {
        let out = train(&with_mode(&cfg, mode), &ds, &split).unwrap();
        assert_eq!(out.record.summary.reassign_calls, calls, "{mode}");
        let flags: Vec<bool> = out.record.epochs.iter().map(|e| e.cluster.as_ref().unwrap().reassigned).collect();
        assert_eq!(flags.iter().filter(|&&f| f).count(), calls, "{mode}");
    }
}

#[test]
fn no_iter_freezes_labels_after_the_first_epoch() {
    let (cfg, ds, split) = tiny();
    let out = train(&with_mode(&cfg, Mode::NoIter), &ds, &split).unwrap();
    let sizes: Vec<&Vec<usize>> = out.record.epochs.iter().map(|e| &e.cluster.as_ref().unwrap().sizes).collect();
    assert!(sizes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn no_clus_uses_the_true_source_domains() {
    let (cfg, ds, split) = tiny();
    let out = train(&with_mode(&cfg, Mode::NoClus), &ds, &split).unwrap();
    assert_eq!(out.record.summary.k_hat, 3);
    assert_eq!(out.record.summary.final_nmi_domain, Some(1.0));
    let st = out.pseudo_domains.unwrap();
    let train_domains: Vec<usize> = ds.select(&split.train).unwrap().iter().map(|s| s.true_domain).collect();
    assert!((nmi(st.labels(), &train_domains).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn lambda_advances_per_step() {
    let (cfg, ds, split) = tiny();
    let out = train(&cfg, &ds, &split).unwrap();
    let bpe = split.train.len().div_ceil(cfg.batch_size);
    let expect: Vec<f64> = progress_schedule(cfg.epochs, bpe).iter().map(|&p| lambda_schedule(p, 10.0)).collect();
    let got: Vec<f64> = out.record.epochs.iter().flat_map(|e| e.lambdas.clone()).collect();
    assert_eq!(got, expect);
    assert_eq!(got[0], 0.0);
}

#[test]
fn learning_rate_trace_has_one_decay() {
    let (mut cfg, ds, split) = tiny();
    cfg.epochs = 5;
    let out = train(&with_mode(&cfg, Mode::DeepAll), &ds, &split).unwrap();
    let lrs: Vec<f64> = out.record.epochs.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, vec![cfg.base_lr, cfg.base_lr, cfg.base_lr, cfg.base_lr, cfg.base_lr * cfg.lr_decay_factor]);
}

#[test]
fn identical_configs_give_identical_records_and_jsonl() {
    let (cfg, ds, split) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let a = train(&cfg, &ds, &split).unwrap();
    let b = train(&cfg, &ds, &split).unwrap();
    assert_eq!(a.record, b.record);
    a.record.write_jsonl(&dir.path().join("a.jsonl")).unwrap();
    b.record.write_jsonl(&dir.path().join("b.jsonl")).unwrap();
    let (ta, tb) = (
        std::fs::read(dir.path().join("a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b.jsonl")).unwrap(),
    );
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert_eq!(text.lines().count(), cfg.epochs + 1);
    assert!(text.lines().last().unwrap().contains("\"kind\":\"summary\""));

    let other = train(&cfg.clone().with_seed(7), &ds, &split).unwrap();
    assert_ne!(other.record, a.record);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (cfg, ds, split) = tiny();
    let out = train(&cfg, &ds, &split).unwrap();
    let back = decode(&encode(&out.model).unwrap(), Some(out.model.config())).unwrap();
    let target = ds.select(&split.target).unwrap();
    let batch = latent_dg::data::batch_of(&target[..8], |s| latent_dg::data::standardize(&s.image, &cfg.augment)).unwrap();
    let (l1, l2) = (out.model.predict_logits(batch.clone()).unwrap(), back.predict_logits(batch).unwrap());
    assert_eq!(l1.data(), l2.data());
    assert_eq!(
        evaluate(&out.model, &target, &cfg.augment, 16).unwrap(),
        evaluate(&back, &target, &cfg.augment, 16).unwrap()
    );
    // The returned model is the selected epoch's.
    let sel = out.record.summary.selected_epoch;
    assert_eq!(evaluate(&back, &target, &cfg.augment, 16).unwrap(), out.record.epochs[sel].target_accuracy);

    let wrong = ModelConfig {
        num_classes: 5,
        ..out.model.config().clone()
    };
    assert!(matches!(decode(&encode(&out.model).unwrap(), Some(&wrong)), Err(Error::Checkpoint(_))));
}

#[test]
fn best_validation_epoch_is_selected_with_earliest_tie() {
    let (cfg, ds, split) = tiny();
    let out = train(&cfg, &ds, &split).unwrap();
    let vals: Vec<f64> = out.record.epochs.iter().map(|e| e.val_accuracy).collect();
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = vals.iter().position(|&v| v == best).unwrap();
    assert_eq!(out.record.summary.selected_epoch, first);
    assert_eq!(out.record.summary.best_val_accuracy, best);
}

#[test]
fn constant_predictions_score_one_over_c() {
    let (cfg, ds, split) = tiny();
    let mut model = latent_dg::model::Model::build(cfg.model.clone(), 0).unwrap();
    for p in model.params_mut().iter_mut() {
        if p.name.starts_with("classifier") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let target = ds.select(&split.target).unwrap();
    let preds = predict(&model, &target, &cfg.augment, 16).unwrap();
    assert!(preds.iter().all(|&p| p == 0));
    let labels: Vec<usize> = target.iter().map(|s| s.category).collect();
    assert_eq!(accuracy(&preds, &labels).unwrap(), 0.25);
}

#[test]
fn divergence_reports_epoch_and_step() {
    let (mut cfg, ds, split) = tiny();
    cfg.base_lr = 1e6;
    match train(&cfg, &ds, &split) {
        Err(Error::Diverged { epoch, step }) => assert!(step >= epoch),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.record.summary)),
    }
}

#[test]
fn mismatched_model_and_dataset_are_rejected() {
    let (mut cfg, ds, split) = tiny();
    cfg.model.num_classes = 5;
    let err = train(&cfg, &ds, &split).unwrap_err().to_string();
    assert!(err.contains("num_classes"), "{err}");
}

#[test]
fn gradient_clipping_bounds_the_joint_norm() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::from_vec(vec![0.0; 2]), ParamGroup::FeatureExtractor);
    let b = store.add("b", Tensor::from_vec(vec![0.0]), ParamGroup::Classifier);
    store.get_mut(a).grad = Tensor::from_vec(vec![3.0, 0.0]);
    store.get_mut(b).grad = Tensor::from_vec(vec![4.0]);
    assert_eq!(clip_grad_norm(&mut store, 10.0), 5.0);
    assert_eq!(store.get(b).grad.data(), &[4.0]);
    clip_grad_norm(&mut store, 1.0);
    assert!((store.get(a).grad.data()[0] - 0.6).abs() < 1e-15);
    assert!((store.get(b).grad.data()[0] - 0.8).abs() < 1e-15);
}

#[test]
fn heads_step_ten_times_faster() {
    let mut store = ParamStore::new();
    let f = store.add("f", Tensor::from_vec(vec![1.0]), ParamGroup::FeatureExtractor);
    let c = store.add("c", Tensor::from_vec(vec![1.0]), ParamGroup::Classifier);
    let d = store.add("d", Tensor::from_vec(vec![1.0]), ParamGroup::Discriminator);
    let mut sgd = Sgd::new(&store, 0.01, 0.0, 0.0).unwrap();
    for id in [f, c, d] {
        store.get_mut(id).grad = Tensor::from_vec(vec![1.0]);
    }
    sgd.step(&mut store, 0.01).unwrap();
    let moved = |id| 1.0 - store.get(id).value.data()[0];
    assert!((moved(c) / moved(f) - 10.0).abs() < 1e-9);
    assert!((moved(d) / moved(f) - 10.0).abs() < 1e-9);
}

#[test]
fn fixed_reduction_reuses_the_first_projection() {
    let (mut cfg, ds, split) = tiny();
    cfg.mode = Mode::NoStat;
    cfg.target_dim = 4;
    cfg.raw_feature_dim = 32;
    let refit = train(&cfg, &ds, &split).unwrap();
    cfg.refit_reduction = false;
    let fixed = train(&cfg, &ds, &split).unwrap();
    // Epoch 0 fits the same projection either way.
    assert_eq!(refit.record.epochs[0], fixed.record.epochs[0]);
    assert_ne!(
        refit.record.epochs.last().unwrap().cluster.as_ref().unwrap().inertia,
        fixed.record.epochs.last().unwrap().cluster.as_ref().unwrap().inertia
    );
}
