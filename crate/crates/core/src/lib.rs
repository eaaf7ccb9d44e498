//! Clustering-based active learning over self-supervised speech features.

pub mod audio;
pub mod cpc;
pub mod dimred;
pub mod error;
pub mod eval;
pub mod features;
pub mod harness;
pub mod mal;
pub mod selfcheck;
pub mod nn;

pub use error::{Error, Result};
pub use features::FeatureMatrix;
