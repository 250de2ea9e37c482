use std::collections::HashMap;
use std::fs;
use std::path::Path;

use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    relative_path: String,
    category: String,
    #[serde(default)]
    domain: Option<String>,
}

fn to_png(image: &Tensor) -> RgbImage {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let d = image.data();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([q(d[i]), q(d[plane + i]), q(d[2 * plane + i])])
    })
}

fn from_png(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("3 × h × w")
}

/// Write `root/<domain>/<category>/<id>.png` plus `root/manifest.csv`.
pub fn export_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(root.join("manifest.csv")).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(root.join("manifest.csv"), io),
        other => Error::Manifest {
            row: 0,
            reason: format!("{other:?}"),
        },
    })?;
    for s in &dataset.samples {
        let domain = &dataset.domain_names[s.true_domain];
        let category = &dataset.class_names[s.category];
        let rel = format!("{domain}/{category}/{:05}.png", s.id);
        let path = root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        to_png(&s.image).save(&path)?;
        writer.serialize(ManifestRow {
            relative_path: rel,
            category: category.clone(),
            domain: Some(domain.clone()),
        })?;
    }
    writer.flush().map_err(|e| Error::io(root.join("manifest.csv"), e))?;
    Ok(())
}

/// Read a manifest of `relative_path, category[, domain]` rows. Images are
/// resized to `image_size` square when needed. Domains are indexed in order
/// of first appearance; without a domain column every sample gets domain 0,
/// named `unknown`.
pub fn load_image_folder(root: &Path, manifest: &Path, class_names: &[String], image_size: usize) -> Result<Dataset> {
    let class_index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(manifest, io),
        other => Error::Manifest {
            row: 0,
            reason: format!("{other:?}"),
        },
    })?;
    let mut domain_names: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    for (row, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row + 1;
        let rec = rec.map_err(|e| Error::Manifest {
            row,
            reason: e.to_string(),
        })?;
        let category = *class_index.get(rec.category.as_str()).ok_or_else(|| Error::Manifest {
            row,
            reason: format!("unknown category {:?}; known: {}", rec.category, class_names.join(", ")),
        })?;
        let domain_name = rec.domain.filter(|d| !d.is_empty()).unwrap_or_else(|| "unknown".into());
        let true_domain = match domain_names.iter().position(|d| *d == domain_name) {
            Some(i) => i,
            None => {
                domain_names.push(domain_name);
                domain_names.len() - 1
            }
        };
        let path = root.join(&rec.relative_path);
        let img = image::open(&path)
            .map_err(|e| Error::Manifest {
                row,
                reason: format!("cannot read {}: {e}", path.display()),
            })?
            .to_rgb8();
        let img = if img.width() as usize != image_size || img.height() as usize != image_size {
            image::imageops::resize(&img, image_size as u32, image_size as u32, FilterType::Triangle)
        } else {
            img
        };
        samples.push(Sample {
            image: from_png(&img),
            category,
            true_domain,
            id: samples.len(),
        });
    }
    Ok(Dataset {
        samples,
        class_names: class_names.to_vec(),
        domain_names,
        image_size,
    })
}
