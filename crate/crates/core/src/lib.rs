//! Domain generalization from a mixture of latent domains.
//!
//! Training images carry category labels but no domain labels. Each epoch the
//! crate discovers pseudo domains by clustering channel-wise mean/std
//! statistics of lower convolutional layers, aligns the new cluster ids with the
//! previous epoch's labels, and trains a feature extractor that a domain
//! discriminator (behind a gradient reversal layer) cannot tell apart, plus an
//! entropy term that sharpens class predictions.
//!
//! The guide in `book/` walks through every piece; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod style;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/engine.md")]
    pub mod engine {}
    #[doc = include_str!("../../../book/src/style-features.md")]
    pub mod style_features {}
    #[doc = include_str!("../../../book/src/pseudo-domains.md")]
    pub mod pseudo_domains {}
    #[doc = include_str!("../../../book/src/objective.md")]
    pub mod objective {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
