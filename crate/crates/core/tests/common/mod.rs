//! Fixtures shared by the gradient tests and the acceptance suite.
#![allow(dead_code)]

use latent_dg::losses::{adversarial_loss, classification_loss, compose_total, entropy_loss, LossConfig};
use latent_dg::model::{ConvBlock, Model, ModelConfig};
use latent_dg::nn::{check_gradients, relative_error, ParamGroup, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

/// Uniform values in ±1 kept at least `gap` away from zero so ReLU and
/// max-pool stay differentiable under the finite-difference probe.
pub fn random(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduce any tensor to a scalar with fixed random weights so every output
/// element gets a distinct upstream gradient.
pub fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> latent_dg::Result<Var> {
    let shape = t.value(x).shape().to_vec();
    let w = random(&shape, 0.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5));
    let wv = t.input(w);
    let p = t.mul(x, wv)?;
    Ok(t.sum(p))
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 8,
        conv_blocks: vec![ConvBlock::new(3), ConvBlock::new(4), ConvBlock::new(4)],
        tap_layers: vec![0, 1],
        feature_dim: 4,
        num_classes: 3,
        num_pseudo_domains: 2,
        discriminator_hidden: 6,
        ..ModelConfig::default()
    }
}

pub struct Instance {
    pub batch: Tensor,
    pub labels: Vec<usize>,
    pub pseudo: Vec<usize>,
    pub sizes: Vec<usize>,
    pub lambda: f64,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Instance {
        batch: random(&[4, 3, 8, 8], 0.0, &mut rng),
        labels: (0..4).map(|_| rng.random_range(0..3)).collect(),
        pseudo: vec![0, 1, 1, 0],
        sizes: vec![rng.random_range(1..20), rng.random_range(1..20)],
        lambda: rng.random_range(0.05..1.0),
    }
}

pub fn composed(model: &Model, tape: &mut Tape, inst: &Instance) -> Var {
    let cfg = LossConfig::default();
    let out = model.forward_all(tape, inst.batch.clone(), inst.lambda).unwrap();
    let l_cls = classification_loss(tape, out.class_logits, &inst.labels).unwrap();
    let l_ent = entropy_loss(tape, out.class_logits).unwrap();
    let l_adv = adversarial_loss(tape, out.domain_logits, &inst.pseudo, &inst.sizes, true).unwrap();
    compose_total(tape, l_cls, Some(l_ent), Some(l_adv), inst.lambda, &cfg).unwrap().0
}

/// Analytic gradient of every parameter from one backward pass.
pub fn analytic(model: &mut Model, inst: &Instance) -> Vec<Vec<f64>> {
    model.params_mut().zero_grad();
    let mut tape = Tape::new();
    let loss = composed(model, &mut tape, inst);
    tape.backward_into(loss, model.params_mut()).unwrap();
    model.params().iter().map(|(_, p)| p.grad.data().to_vec()).collect()
}

/// The value that the extractor minimizes, `L_cls + λL_ent − λL_adv`, and
/// the value that the discriminator minimizes, `L_adv`, without any GRL.
pub fn objectives(model: &Model, inst: &Instance) -> (f64, f64) {
    let mut tape = Tape::inference();
    let (features, _) = model.extract(&mut tape, inst.batch.clone()).unwrap();
    let logits = model.classify(&mut tape, features).unwrap();
    let l_cls = classification_loss(&mut tape, logits, &inst.labels).unwrap();
    let l_ent = entropy_loss(&mut tape, logits).unwrap();
    let d = plain_discriminator(model, &mut tape, features);
    let l_adv = adversarial_loss(&mut tape, d, &inst.pseudo, &inst.sizes, true).unwrap();
    let (c, e, a) = (tape.value(l_cls).item(), tape.value(l_ent).item(), tape.value(l_adv).item());
    (c + inst.lambda * (e - a), a)
}

/// F_d rebuilt from the named parameters with no reversal layer.
pub fn plain_discriminator(model: &Model, tape: &mut Tape, features: Var) -> Var {
    let store = model.params();
    let mut h = features;
    for i in 0..3 {
        let w = tape.param(store, store.by_name(&format!("discriminator.fc{i}.weight")).unwrap());
        let b = tape.param(store, store.by_name(&format!("discriminator.fc{i}.bias")).unwrap());
        h = tape.linear(h, w, b).unwrap();
        if i < 2 {
            h = tape.relu(h);
        }
    }
    h
}


type LayerFn = fn(&mut Tape, &[Var]) -> latent_dg::Result<Var>;

/// One differentiable operation with its input shapes.
pub struct LayerCase {
    pub name: &'static str,
    pub shapes: &'static [&'static [usize]],
    pub f: LayerFn,
}

fn conv(t: &mut Tape, v: &[Var], stride: usize, pad: usize, seed: u64) -> latent_dg::Result<Var> {
    let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
    weighted_sum(t, y, seed)
}

const CONV_SHAPES: &[&[usize]] = &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]];

pub const LAYERS: &[LayerCase] = &[
    LayerCase { name: "conv2d s1 p1", shapes: CONV_SHAPES, f: |t, v| conv(t, v, 1, 1, 1) },
    LayerCase { name: "conv2d s2 p0", shapes: CONV_SHAPES, f: |t, v| conv(t, v, 2, 0, 1) },
    LayerCase { name: "conv2d s2 p1", shapes: CONV_SHAPES, f: |t, v| conv(t, v, 2, 1, 1) },
    LayerCase {
        name: "relu",
        shapes: &[&[3, 4]],
        f: |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y, 2)
        },
    },
    LayerCase {
        name: "max_pool2d",
        shapes: &[&[2, 3, 4, 4]],
        f: |t, v| {
            let y = t.max_pool2d(v[0], 2)?;
            weighted_sum(t, y, 3)
        },
    },
    LayerCase {
        name: "global_avg_pool",
        shapes: &[&[2, 3, 3, 3]],
        f: |t, v| {
            let y = t.global_avg_pool(v[0])?;
            weighted_sum(t, y, 4)
        },
    },
    LayerCase {
        name: "linear",
        shapes: &[&[4, 5], &[3, 5], &[3]],
        f: |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            weighted_sum(t, y, 5)
        },
    },
    LayerCase {
        name: "log_softmax",
        shapes: &[&[3, 4]],
        f: |t, v| {
            let y = t.log_softmax(v[0])?;
            weighted_sum(t, y, 6)
        },
    },
    LayerCase {
        name: "exp",
        shapes: &[&[3, 4]],
        f: |t, v| {
            let y = t.exp(v[0]);
            weighted_sum(t, y, 7)
        },
    },
    LayerCase {
        name: "add/sub/mul/scale",
        shapes: &[&[2, 3], &[2, 3]],
        f: |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let m = t.mul(s, v[1])?;
            let c = t.scale(m, -0.7);
            weighted_sum(t, c, 8)
        },
    },
    LayerCase {
        name: "mean",
        shapes: &[&[2, 3]],
        f: |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.mean(sq))
        },
    },
    LayerCase {
        name: "weighted nll",
        shapes: &[&[4, 3]],
        f: |t, v| {
            let lp = t.log_softmax(v[0])?;
            t.nll(lp, &[0, 2, 1, 2], Some(&[0.5, 2.0, 1.0, 1.5]))
        },
    },
];

pub fn layer(name: &str) -> &'static LayerCase {
    LAYERS.iter().find(|c| c.name == name).expect("known layer case")
}

/// Worst relative error of one layer case on one random instance.
pub fn layer_error(case: &LayerCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = case.shapes.iter().map(|s| random(s, 0.05, &mut rng)).collect();
    check_gradients(&inputs, STEP, case.f).unwrap().max_rel_error
}

/// Worst relative error between the backward pass of the composed objective
/// and finite differences of the quantity each parameter group minimizes.
pub fn composed_error(seed: u64) -> f64 {
    let mut model = Model::build(tiny_config(), seed).unwrap();
    let inst = instance(seed);
    let grads = analytic(&mut model, &inst);
    let mut worst = 0.0f64;
    for (pi, g) in grads.iter().enumerate() {
        let group = model.params().iter().nth(pi).unwrap().1.group;
        for (j, &a) in g.iter().enumerate() {
            let orig = model.params_mut().iter_mut().nth(pi).unwrap().value.data()[j];
            let mut at = |v: f64| {
                model.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[j] = v;
                let (ext, disc) = objectives(&model, &inst);
                if group == ParamGroup::Discriminator {
                    disc
                } else {
                    ext
                }
            };
            let n = (at(orig + STEP) - at(orig - STEP)) / (2.0 * STEP);
            model.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[j] = orig;
            worst = worst.max(relative_error(a, n));
        }
    }
    worst
}

/// Largest absolute gap between the extractor gradient of the composed
/// objective and `∇L_cls + λ∇L_ent − λ∇L_adv` assembled from separate passes.
pub fn decomposition_gap(seed: u64) -> f64 {
    let mut model = Model::build(tiny_config(), seed).unwrap();
    let inst = instance(seed);
    let total = analytic(&mut model, &inst);
    let term = |model: &mut Model, pick: usize| -> Vec<Vec<f64>> {
        model.params_mut().zero_grad();
        let mut tape = Tape::new();
        let (features, _) = model.extract(&mut tape, inst.batch.clone()).unwrap();
        let logits = model.classify(&mut tape, features).unwrap();
        let loss = match pick {
            0 => classification_loss(&mut tape, logits, &inst.labels).unwrap(),
            1 => entropy_loss(&mut tape, logits).unwrap(),
            _ => {
                let d = plain_discriminator(model, &mut tape, features);
                adversarial_loss(&mut tape, d, &inst.pseudo, &inst.sizes, true).unwrap()
            }
        };
        tape.backward_into(loss, model.params_mut()).unwrap();
        model.params().iter().map(|(_, p)| p.grad.data().to_vec()).collect()
    };
    let (cls, ent, adv) = (term(&mut model, 0), term(&mut model, 1), term(&mut model, 2));
    let mut worst = 0.0f64;
    for (pi, (_, p)) in model.params().iter().enumerate() {
        if p.group != ParamGroup::FeatureExtractor {
            continue;
        }
        for j in 0..total[pi].len() {
            let expect = cls[pi][j] + inst.lambda * ent[pi][j] - inst.lambda * adv[pi][j];
            worst = worst.max((total[pi][j] - expect).abs());
        }
    }
    worst
}
