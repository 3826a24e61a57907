//! Pre-speech facial action-unit pipeline: CNN classifiers over 17x87 AU
//! intensity matrices, DeepSHAP attribution maps, and one-way ANOVA
//! significance analysis, validated end-to-end on a synthetic generator
//! with planted temporal signatures.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod forest;
pub mod gradcheck;
pub mod kernels;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod report;
pub mod seeds;
pub mod split;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
