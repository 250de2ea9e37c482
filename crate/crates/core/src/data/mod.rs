//! Synthetic multi-style shape images, splits, augmentation and image-folder
//! ingestion.
//!
//! Categories are geometric shapes and domains are rendering styles, so the
//! category signal (shape) and the domain signal (style) are independent.

mod augment;
mod io;
mod render;
mod split;

pub use augment::{augment, augment_traced, standardize, AugmentConfig, AugmentTrace};
pub use io::{export_dataset, load_image_folder};
pub use render::{
    generate_dataset, render, Background, Contrast, DomainStyleSpec, Palette, RenderMode, Shape, SHAPE_NAMES,
};
pub use split::{make_splits, DatasetSplit};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `3 × H × W`, values in `[0, 1]`.
    pub image: Tensor,
    pub category: usize,
    /// Ground-truth style domain. Only evaluation and the known-domain
    /// ablation read it.
    pub true_domain: usize,
    /// Index of the sample in its dataset.
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub image_size: usize,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples by id, in the given order.
    pub fn select(&self, ids: &[usize]) -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|&i| {
                self.samples.get(i).ok_or(Error::LabelOutOfRange {
                    label: i,
                    bound: self.samples.len(),
                })
            })
            .collect()
    }
}

/// Stack images into an `N × 3 × H × W` batch after applying `f` to each.
pub fn batch_of(samples: &[&Sample], mut f: impl FnMut(&Sample) -> Tensor) -> Result<Tensor> {
    let images: Vec<Tensor> = samples.iter().map(|s| f(s)).collect();
    Tensor::stack(&images.iter().collect::<Vec<_>>())
}
