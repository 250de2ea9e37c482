use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Shape classes in category-index order.
pub const SHAPE_NAMES: [&str; 6] = ["circle", "triangle", "square", "cross", "star", "ring"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Triangle,
    Square,
    Cross,
    Star,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Circle,
        Shape::Triangle,
        Shape::Square,
        Shape::Cross,
        Shape::Star,
        Shape::Ring,
    ];

    pub fn name(self) -> &'static str {
        SHAPE_NAMES[self as usize]
    }

    /// Membership test in the shape's local frame, unit circumradius.
    fn contains(self, u: f64, v: f64) -> bool {
        let r2 = u * u + v * v;
        match self {
            Shape::Circle => r2 <= 1.0,
            Shape::Ring => (0.55 * 0.55..=1.0).contains(&r2),
            Shape::Square => u.abs() <= 0.75 && v.abs() <= 0.75,
            Shape::Cross => {
                (u.abs() <= 0.28 && v.abs() <= 0.95) || (v.abs() <= 0.28 && u.abs() <= 0.95)
            }
            Shape::Triangle => in_polygon(&regular_vertices(3, 1.0, None), u, v),
            Shape::Star => in_polygon(&regular_vertices(5, 1.0, Some(0.45)), u, v),
        }
    }
}

/// Vertices of a regular `n`-gon (or `n`-point star with the given inner
/// radius), first vertex pointing up.
fn regular_vertices(n: usize, outer: f64, inner: Option<f64>) -> Vec<(f64, f64)> {
    let steps = if inner.is_some() { 2 * n } else { n };
    (0..steps)
        .map(|i| {
            let a = std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::TAU / steps as f64;
            let r = match inner {
                Some(ir) if i % 2 == 1 => ir,
                _ => outer,
            };
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Even-odd rule point-in-polygon test.
fn in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Ranges for the foreground colour, in HSV with hue measured in turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub hue: (f64, f64),
    pub saturation: (f64, f64),
    pub value: (f64, f64),
}

/// Final affine intensity map `gain · x + bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub gain: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Filled,
    Outline,
    Textured,
}

/// Background colours; `jitter` is the per-image uniform offset half-width
/// applied to each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Solid { color: [f64; 3], jitter: f64 },
    Gradient { top: [f64; 3], bottom: [f64; 3], jitter: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyleSpec {
    pub name: String,
    pub palette: Palette,
    pub contrast: Contrast,
    pub noise_sigma: f64,
    pub render_mode: RenderMode,
    pub background: Background,
}

fn unit_range(field: &'static str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::config(field, format!("range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1")));
    }
    Ok(())
}

fn unit_color(field: &'static str, c: &[f64; 3], jitter: f64) -> Result<()> {
    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config(field, format!("colour {c:?} outside [0, 1]")));
    }
    if !(0.0..=0.5).contains(&jitter) {
        return Err(Error::config(field, format!("jitter {jitter} outside [0, 0.5]")));
    }
    Ok(())
}

impl DomainStyleSpec {
    pub fn validate(&self) -> Result<()> {
        unit_range("palette.hue", self.palette.hue)?;
        unit_range("palette.saturation", self.palette.saturation)?;
        unit_range("palette.value", self.palette.value)?;
        if !(self.contrast.gain > 0.0 && self.contrast.gain <= 2.0) || self.contrast.bias.abs() > 1.0 {
            return Err(Error::config("contrast", "gain must be in (0, 2] and |bias| <= 1"));
        }
        if !(0.0..=0.5).contains(&self.noise_sigma) {
            return Err(Error::config("noise_sigma", "must be in [0, 0.5]"));
        }
        match &self.background {
            Background::Solid { color, jitter } => unit_color("background", color, *jitter),
            Background::Gradient { top, bottom, jitter } => {
                unit_color("background", top, *jitter)?;
                unit_color("background", bottom, *jitter)
            }
        }
    }

    /// Textured mid-tone objects on a gradient with sensor noise.
    pub fn photo() -> Self {
        DomainStyleSpec {
            name: "photo".into(),
            palette: Palette {
                hue: (0.0, 1.0),
                saturation: (0.3, 0.7),
                value: (0.35, 0.8),
            },
            contrast: Contrast { gain: 1.0, bias: 0.0 },
            noise_sigma: 0.05,
            render_mode: RenderMode::Textured,
            background: Background::Gradient {
                top: [0.55, 0.62, 0.7],
                bottom: [0.3, 0.3, 0.25],
                jitter: 0.12,
            },
        }
    }

    /// Flat saturated fills on a plain light background.
    pub fn cartoon() -> Self {
        DomainStyleSpec {
            name: "cartoon".into(),
            palette: Palette {
                hue: (0.0, 1.0),
                saturation: (0.85, 1.0),
                value: (0.85, 1.0),
            },
            contrast: Contrast { gain: 1.1, bias: -0.05 },
            noise_sigma: 0.0,
            render_mode: RenderMode::Filled,
            background: Background::Solid {
                color: [0.95, 0.9, 0.6],
                jitter: 0.05,
            },
        }
    }

    /// Dark outlines on white.
    pub fn sketch() -> Self {
        DomainStyleSpec {
            name: "sketch".into(),
            palette: Palette {
                hue: (0.0, 1.0),
                saturation: (0.0, 0.1),
                value: (0.0, 0.25),
            },
            contrast: Contrast { gain: 1.0, bias: 0.0 },
            noise_sigma: 0.02,
            render_mode: RenderMode::Outline,
            background: Background::Solid {
                color: [1.0, 1.0, 1.0],
                jitter: 0.02,
            },
        }
    }

    /// Warm textured brush colours on a cream canvas gradient, slightly
    /// compressed contrast.
    pub fn painting() -> Self {
        DomainStyleSpec {
            name: "painting".into(),
            palette: Palette {
                hue: (0.0, 0.15),
                saturation: (0.5, 0.85),
                value: (0.35, 0.65),
            },
            contrast: Contrast { gain: 0.9, bias: 0.05 },
            noise_sigma: 0.04,
            render_mode: RenderMode::Textured,
            background: Background::Gradient {
                top: [0.93, 0.88, 0.76],
                bottom: [0.8, 0.72, 0.58],
                jitter: 0.05,
            },
        }
    }

    /// Photo, cartoon, sketch and painting, in that domain order.
    pub fn defaults() -> Vec<Self> {
        vec![Self::photo(), Self::cartoon(), Self::sketch(), Self::painting()]
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn jittered(rng: &mut ChaCha8Rng, c: &[f64; 3], jitter: f64) -> [f64; 3] {
    c.map(|v| (v + draw(rng, (-jitter, jitter))).clamp(0.0, 1.0))
}

/// Render one `3 × size × size` image of `shape` in `style`.
pub fn render(shape: Shape, style: &DomainStyleSpec, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = size as f64;
    let cx = draw(rng, (0.38, 0.62)) * s;
    let cy = draw(rng, (0.38, 0.62)) * s;
    let radius = draw(rng, (0.24, 0.34)) * s;
    let theta = draw(rng, (0.0, std::f64::consts::TAU));
    let (sin_t, cos_t) = theta.sin_cos();

    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / radius;
            let dy = (y as f64 + 0.5 - cy) / radius;
            let u = cos_t * dx + sin_t * dy;
            let v = -sin_t * dx + cos_t * dy;
            mask[y * size + x] = shape.contains(u, v);
        }
    }
    let boundary: Vec<bool> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as isize, (i % size) as isize);
            mask[i]
                && (-1..=1).any(|oy| {
                    (-1..=1).any(|ox| {
                        let (ny, nx) = (y + oy, x + ox);
                        ny < 0
                            || nx < 0
                            || ny >= size as isize
                            || nx >= size as isize
                            || !mask[ny as usize * size + nx as usize]
                    })
                })
        })
        .collect();

    let fg = hsv_to_rgb(
        draw(rng, style.palette.hue),
        draw(rng, style.palette.saturation),
        draw(rng, style.palette.value),
    );
    let (bg_top, bg_bottom) = match &style.background {
        Background::Solid { color, jitter } => {
            let c = jittered(rng, color, *jitter);
            (c, c)
        }
        Background::Gradient { top, bottom, jitter } => (jittered(rng, top, *jitter), jittered(rng, bottom, *jitter)),
    };
    let freq = draw(rng, (3.0, 6.0)) * std::f64::consts::TAU / s;
    let phi = draw(rng, (0.0, std::f64::consts::TAU));
    let phase = draw(rng, (0.0, std::f64::consts::TAU));
    let noise = Normal::new(0.0, style.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let mut data = vec![0.0; 3 * size * size];
    for y in 0..size {
        let t = y as f64 / (s - 1.0).max(1.0);
        for x in 0..size {
            let i = y * size + x;
            let bg = [0, 1, 2].map(|c| bg_top[c] * (1.0 - t) + bg_bottom[c] * t);
            let px = match style.render_mode {
                RenderMode::Filled if mask[i] => fg,
                RenderMode::Outline if boundary[i] => fg,
                RenderMode::Textured if mask[i] => {
                    let w = (x as f64 * phi.cos() + y as f64 * phi.sin()) * freq + phase;
                    let m = 1.0 - 0.35 * (0.5 + 0.5 * w.sin());
                    fg.map(|v| v * m)
                }
                _ => bg,
            };
            for c in 0..3 {
                let mut v = style.contrast.gain * px[c] + style.contrast.bias;
                if style.noise_sigma > 0.0 {
                    v += noise.sample(rng);
                }
                data[c * size * size + i] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("3 × size × size")
}

/// Per-image generator: the base seed selects the ChaCha key and the sample
/// id selects the stream, so samples are independent of generation order.
pub(crate) fn sample_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `n_per_domain` images for every style, split evenly over the first
/// `num_classes` shapes. `n_per_domain` must be a multiple of `num_classes`.
pub fn generate_dataset(
    styles: &[DomainStyleSpec],
    num_classes: usize,
    n_per_domain: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || num_classes > Shape::ALL.len() {
        return Err(Error::config(
            "num_classes",
            format!("{num_classes} requested; available classes are {}", SHAPE_NAMES.join(", ")),
        ));
    }
    if n_per_domain == 0 || n_per_domain % num_classes != 0 {
        return Err(Error::config(
            "n_per_domain",
            format!("{n_per_domain} must be a positive multiple of num_classes ({num_classes})"),
        ));
    }
    if styles.is_empty() {
        return Err(Error::config("styles", "at least one domain style is required"));
    }
    if image_size < 8 {
        return Err(Error::config("image_size", "must be >= 8"));
    }
    for (i, s) in styles.iter().enumerate() {
        s.validate()?;
        if styles[..i].iter().any(|o| o.palette == s.palette
            && o.contrast == s.contrast
            && o.noise_sigma == s.noise_sigma
            && o.render_mode == s.render_mode
            && o.background == s.background)
        {
            return Err(Error::config("styles", format!("domain {i} ({}) duplicates an earlier style", s.name)));
        }
    }
    let per_class = n_per_domain / num_classes;
    let mut samples = Vec::with_capacity(styles.len() * n_per_domain);
    for (d, style) in styles.iter().enumerate() {
        for k in 0..n_per_domain {
            let id = samples.len();
            let category = k / per_class;
            let mut rng = sample_rng(seed, id as u64);
            samples.push(Sample {
                image: render(Shape::ALL[category], style, image_size, &mut rng),
                category,
                true_domain: d,
                id,
            });
        }
    }
    Ok(Dataset {
        samples,
        class_names: SHAPE_NAMES[..num_classes].iter().map(|s| s.to_string()).collect(),
        domain_names: styles.iter().map(|s| s.name.clone()).collect(),
        image_size,
    })
}
