//! Feature extractor with tap layers, classifier head and domain
//! discriminator.
//!
//! ```text
//! image ─ F_f (conv blocks → global average pool) ─┬─ F_c (linear) ───────── class logits
//!           │ taps: post-ReLU maps of chosen blocks └─ GRL(λ) ─ F_d (MLP) ── domain logits
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{kaiming_uniform, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Follow the ReLU with 2×2 max pooling.
    pub pool: bool,
}

impl ConvBlock {
    pub fn new(out_channels: usize) -> Self {
        ConvBlock {
            out_channels,
            kernel: 3,
            stride: 1,
            pool: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub conv_blocks: Vec<ConvBlock>,
    /// Indices of blocks whose post-ReLU activations feed the style statistics.
    pub tap_layers: Vec<usize>,
    /// Width of the extractor output; equals the last block's channel count.
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_pseudo_domains: usize,
    pub discriminator_hidden: usize,
    /// Multiplies the initial weights of the classifier and discriminator.
    pub head_init_scale: f64,
}

impl Default for ModelConfig {
    /// Four 3×3 conv blocks (16→32→64→64), taps on blocks 1 and 2, four
    /// classes and three pseudo domains on 3×32×32 inputs.
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            image_size: 32,
            conv_blocks: [16, 32, 64, 64].into_iter().map(ConvBlock::new).collect(),
            tap_layers: vec![0, 1],
            feature_dim: 64,
            num_classes: 4,
            num_pseudo_domains: 3,
            discriminator_hidden: 256,
            head_init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let blocks = self.conv_blocks.len();
        if blocks < 2 {
            return Err(Error::config("conv_blocks", "need at least two blocks"));
        }
        if self.tap_layers.is_empty() {
            return Err(Error::config("tap_layers", "need at least one tap"));
        }
        if self.tap_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("tap_layers", "must be strictly ascending"));
        }
        if let Some(&bad) = self.tap_layers.iter().find(|&&t| t >= blocks - 1) {
            return Err(Error::config(
                "tap_layers",
                format!("index {bad} must reference a lower block (< {})", blocks - 1),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be >= 2"));
        }
        if self.num_pseudo_domains < 2 {
            return Err(Error::config("num_pseudo_domains", "must be >= 2"));
        }
        if self.in_channels == 0 || self.discriminator_hidden == 0 {
            return Err(Error::config("in_channels", "widths must be positive"));
        }
        if !(self.head_init_scale > 0.0 && self.head_init_scale.is_finite()) {
            return Err(Error::config("head_init_scale", "must be a positive finite number"));
        }
        let last = self.conv_blocks[blocks - 1].out_channels;
        if self.feature_dim != last {
            return Err(Error::config(
                "feature_dim",
                format!("{} must equal the last block's channels {last}", self.feature_dim),
            ));
        }
        let mut size = self.image_size;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::config("conv_blocks", format!("block {i} has a zero field")));
            }
            let pad = b.kernel / 2;
            if size + 2 * pad < b.kernel {
                return Err(Error::config("image_size", format!("too small at block {i}")));
            }
            size = (size + 2 * pad - b.kernel) / b.stride + 1;
            if b.pool {
                size /= 2;
            }
            if size == 0 {
                return Err(Error::config("image_size", format!("collapses to zero at block {i}")));
            }
        }
        Ok(())
    }

    /// Channel count of every tap, in tap order.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.tap_layers
            .iter()
            .map(|&t| self.conv_blocks[t].out_channels)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

/// Outputs of a joint forward pass through all three sub-networks.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub features: Var,
    pub class_logits: Var,
    pub domain_logits: Var,
    pub taps: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    convs: Vec<Dense>,
    classifier: Dense,
    discriminator: [Dense; 3],
}

impl Model {
    /// Kaiming-uniform weights and zero biases from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut convs = Vec::new();
        let mut in_ch = config.in_channels;
        for (i, b) in config.conv_blocks.iter().enumerate() {
            let fan_in = in_ch * b.kernel * b.kernel;
            let w = kaiming_uniform(&[b.out_channels, in_ch, b.kernel, b.kernel], fan_in, &mut rng);
            convs.push(Dense {
                w: params.add(format!("features.conv{i}.weight"), w, ParamGroup::FeatureExtractor),
                b: params.add(
                    format!("features.conv{i}.bias"),
                    Tensor::zeros(&[b.out_channels]),
                    ParamGroup::FeatureExtractor,
                ),
            });
            in_ch = b.out_channels;
        }
        let scale = config.head_init_scale;
        let mut dense = |name: &str, inp: usize, out: usize, group: ParamGroup, params: &mut ParamStore| Dense {
            w: params.add(
                format!("{name}.weight"),
                kaiming_uniform(&[out, inp], inp, &mut rng).map(|w| w * scale),
                group,
            ),
            b: params.add(format!("{name}.bias"), Tensor::zeros(&[out]), group),
        };
        let f = config.feature_dim;
        let h = config.discriminator_hidden;
        let classifier = dense("classifier", f, config.num_classes, ParamGroup::Classifier, &mut params);
        let discriminator = [
            dense("discriminator.fc0", f, h, ParamGroup::Discriminator, &mut params),
            dense("discriminator.fc1", h, h, ParamGroup::Discriminator, &mut params),
            dense(
                "discriminator.fc2",
                h,
                config.num_pseudo_domains,
                ParamGroup::Discriminator,
                &mut params,
            ),
        ];
        Ok(Model {
            config,
            params,
            convs,
            classifier,
            discriminator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replace every parameter value; shapes and names must match exactly.
    pub fn load_params(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(&values) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match `{name}` {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
        }
        for (p, (_, t)) in self.params.iter_mut().zip(values) {
            p.value = t;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.image_size || s[3] != c.image_size {
            return Err(Error::shape(
                "model input",
                format!(
                    "batch {s:?} must be N×{}×{}×{}",
                    c.in_channels, c.image_size, c.image_size
                ),
            ));
        }
        Ok(())
    }

    fn block(&self, tape: &mut Tape, x: Var, i: usize) -> Result<(Var, Var)> {
        let b = &self.config.conv_blocks[i];
        let w = tape.param(&self.params, self.convs[i].w);
        let bias = tape.param(&self.params, self.convs[i].b);
        let y = tape.conv2d(x, w, bias, b.stride, b.kernel / 2)?;
        let act = tape.relu(y);
        let out = if b.pool { tape.max_pool2d(act, 2)? } else { act };
        Ok((act, out))
    }

    fn dense(&self, tape: &mut Tape, x: Var, d: &Dense) -> Result<Var> {
        let w = tape.param(&self.params, d.w);
        let b = tape.param(&self.params, d.b);
        tape.linear(x, w, b)
    }

    /// F_f: returns the pooled features and the tap activations.
    pub fn extract(&self, tape: &mut Tape, batch: Tensor) -> Result<(Var, Vec<Var>)> {
        self.check_batch(&batch)?;
        let mut x = tape.input(batch);
        let mut taps = Vec::with_capacity(self.config.tap_layers.len());
        for i in 0..self.convs.len() {
            let (act, out) = self.block(tape, x, i)?;
            if self.config.tap_layers.contains(&i) {
                taps.push(act);
            }
            x = out;
        }
        Ok((tape.global_avg_pool(x)?, taps))
    }

    pub fn classify(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.dense(tape, features, &self.classifier)
    }

    /// F_d behind a gradient reversal layer of strength `lambda`.
    pub fn discriminate(&self, tape: &mut Tape, features: Var, lambda: f64) -> Result<Var> {
        let mut h = tape.grl(features, lambda)?;
        for (i, d) in self.discriminator.iter().enumerate() {
            h = self.dense(tape, h, d)?;
            if i + 1 < self.discriminator.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// One pass through the shared extractor feeding both heads.
    pub fn forward_all(&self, tape: &mut Tape, batch: Tensor, lambda: f64) -> Result<ForwardOutput> {
        let (features, taps) = self.extract(tape, batch)?;
        let class_logits = self.classify(tape, features)?;
        let domain_logits = self.discriminate(tape, features, lambda)?;
        Ok(ForwardOutput {
            features,
            class_logits,
            domain_logits,
            taps,
        })
    }

    /// Class logits without gradient tracking.
    pub fn predict_logits(&self, batch: Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let (f, _) = self.extract(&mut tape, batch)?;
        let logits = self.classify(&mut tape, f)?;
        Ok(tape.value(logits).clone())
    }

    /// Tap activations in ascending layer order, computed without a graph and
    /// stopping after the deepest tap.
    pub fn extract_tap_activations(&self, batch: Tensor) -> Result<Vec<Tensor>> {
        self.check_batch(&batch)?;
        let mut tape = Tape::inference();
        let last = *self.config.tap_layers.last().expect("validated non-empty");
        let mut x = tape.input(batch);
        let mut taps = Vec::new();
        for i in 0..=last {
            let (act, out) = self.block(&mut tape, x, i)?;
            if self.config.tap_layers.contains(&i) {
                taps.push(tape.value(act).clone());
            }
            x = out;
        }
        Ok(taps)
    }
}
