use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::sample_rng;
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop: bool,
    /// Area fraction range of the random resized crop.
    pub crop_scale: (f64, f64),
    /// Aspect ratio range of the crop.
    pub crop_ratio: (f64, f64),
    pub flip: bool,
    pub jitter: bool,
    /// Brightness, contrast and saturation factors are drawn from
    /// `[1 − s, 1 + s]`.
    pub jitter_strength: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop: true,
            crop_scale: (0.8, 1.0),
            crop_ratio: (0.75, 4.0 / 3.0),
            flip: true,
            jitter: true,
            jitter_strength: 0.2,
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl AugmentConfig {
    /// Standardization only.
    pub fn none() -> Self {
        AugmentConfig {
            crop: false,
            flip: false,
            jitter: false,
            ..Self::default()
        }
    }
}

/// Extremes of the pixel values seen just before each jitter clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentTrace {
    pub pre_clamp_min: f64,
    pub pre_clamp_max: f64,
}

/// Per-channel `(x − mean) / std`.
pub fn standardize(image: &Tensor, cfg: &AugmentConfig) -> Tensor {
    let plane = image.numel() / 3;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - cfg.mean[i / plane]) / cfg.std[i / plane])
        .collect();
    Tensor::new(image.shape().to_vec(), data).expect("same shape")
}

fn bilinear(src: &[f64], size: usize, y: f64, x: f64) -> f64 {
    let max = (size - 1) as f64;
    let (y, x) = (y.clamp(0.0, max), x.clamp(0.0, max));
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(size - 1), (x0 + 1).min(size - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| src[r * size + c];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

fn gray(px: &[f64], plane: usize, i: usize) -> f64 {
    0.299 * px[i] + 0.587 * px[plane + i] + 0.114 * px[2 * plane + i]
}

struct Clamp<'a>(&'a mut AugmentTrace);

impl Clamp<'_> {
    fn apply(&mut self, v: f64) -> f64 {
        self.0.pre_clamp_min = self.0.pre_clamp_min.min(v);
        self.0.pre_clamp_max = self.0.pre_clamp_max.max(v);
        v.clamp(0.0, 1.0)
    }
}

/// [`augment`] plus the pre-clamp value range of the jitter stage.
pub fn augment_traced(image: &Tensor, seed: u64, id: u64, cfg: &AugmentConfig) -> (Tensor, AugmentTrace) {
    let mut rng = sample_rng(seed, id);
    let size = image.shape()[1];
    let plane = size * size;
    let mut px = image.data().to_vec();
    let mut trace = AugmentTrace {
        pre_clamp_min: f64::INFINITY,
        pre_clamp_max: f64::NEG_INFINITY,
    };

    if cfg.crop {
        let area = plane as f64 * rng.random_range(cfg.crop_scale.0..=cfg.crop_scale.1);
        let (lr0, lr1) = (cfg.crop_ratio.0.ln(), cfg.crop_ratio.1.ln());
        let ratio = rng.random_range(lr0..=lr1).exp();
        let cw = (area * ratio).sqrt().min(size as f64);
        let ch = (area / ratio).sqrt().min(size as f64);
        let ox = rng.random_range(0.0..=size as f64 - cw);
        let oy = rng.random_range(0.0..=size as f64 - ch);
        let mut out = vec![0.0; px.len()];
        for c in 0..3 {
            let src = &px[c * plane..(c + 1) * plane];
            for y in 0..size {
                let sy = oy + (y as f64 + 0.5) * ch / size as f64 - 0.5;
                for x in 0..size {
                    let sx = ox + (x as f64 + 0.5) * cw / size as f64 - 0.5;
                    out[c * plane + y * size + x] = bilinear(src, size, sy, sx);
                }
            }
        }
        px = out;
    }

    if cfg.flip && rng.random_bool(0.5) {
        for row in px.chunks_mut(size) {
            row.reverse();
        }
    }

    if cfg.jitter {
        let s = cfg.jitter_strength;
        let mut clamp = Clamp(&mut trace);
        let b = rng.random_range(1.0 - s..=1.0 + s);
        px.iter_mut().for_each(|v| *v = clamp.apply(*v * b));

        let c = rng.random_range(1.0 - s..=1.0 + s);
        let mean_gray = (0..plane).map(|i| gray(&px, plane, i)).sum::<f64>() / plane as f64;
        px.iter_mut().for_each(|v| *v = clamp.apply(mean_gray + (*v - mean_gray) * c));

        let sat = rng.random_range(1.0 - s..=1.0 + s);
        let grays: Vec<f64> = (0..plane).map(|i| gray(&px, plane, i)).collect();
        for (j, v) in px.iter_mut().enumerate() {
            let g = grays[j % plane];
            *v = clamp.apply(g + (*v - g) * sat);
        }
    }

    let out = Tensor::new(image.shape().to_vec(), px).expect("same shape");
    (standardize(&out, cfg), trace)
}

/// Random resized crop, horizontal flip and colour jitter, then
/// standardization. Deterministic in `(seed, id)`.
pub fn augment(image: &Tensor, seed: u64, id: u64, cfg: &AugmentConfig) -> Tensor {
    augment_traced(image, seed, id, cfg).0
}
