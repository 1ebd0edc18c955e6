//! Superpixel-based multi-feature graph learning for semi-supervised
//! hyperspectral image classification.
//!
//! The pipeline reduces a hyperspectral cube spectrally (PCA), segments the
//! first principal component into superpixels (SLIC), extracts per-superpixel
//! features, learns a sparse affinity graph from the feature distances in
//! closed form, and propagates a handful of training labels with the harmonic
//! graph classifier. Two variants are provided: a single fused graph with
//! fixed feature weights and a pseudo-label distance term (`run_mgl`), and a
//! parameter-optimal variant that learns the per-view weights and perturbs
//! edge weights through masked simplex projections (`run_pmgl`).

pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod linalg;
pub mod pipelines;
pub mod preprocess;
pub mod propagation;
pub mod superpixels;

pub use error::{Error, Result};
