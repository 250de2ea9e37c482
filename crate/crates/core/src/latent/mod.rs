//! Pseudo domain discovery: k-means over style features, then label alignment
//! across epochs.

mod align;
mod kmeans;
mod state;

pub use align::{agreement_matrix, align_assignments, optimal_permutation, Permutation};
pub use kmeans::{kmeans, KMeansOptions, KMeansResult};
pub use state::{PseudoDomainState, ReassignOptions};
