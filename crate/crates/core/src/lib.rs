//! Two-stream retinal image classifier.
//!
//! One stream contrast-enhances the fundus image (CLAHE or global histogram
//! equalization), the other runs a small encoder-decoder vessel segmenter.
//! Each stream is reduced with eigenface PCA and classified by a one-vs-one
//! kernel SVM; the two vote vectors are blended by a single weight.

pub mod container;
pub mod dataio;
pub mod eigen;
pub mod enhance;
pub mod error;
pub mod rng;
pub mod segment;
pub mod svm;
pub mod synth;
pub mod fusion;
pub mod metrics;

pub use error::{Error, Result};
