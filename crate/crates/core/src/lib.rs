//! Feature-space oversampling for long-tailed classification.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`feature_store`]: labeled feature vectors, CSV I/O, merging;
//! * [`oversampling`]: M2m_f (distance-filtered) and M2m_u (cosine-filtered)
//!   centroid translation, plus the class-balanced resampling baseline;
//! * [`classifier`]: a two-layer MLP head trained with Adam;
//! * [`metrics`]: confusion matrix and macro F1;
//! * [`synthgen`]: seeded Gaussian cluster datasets;
//! * [`experiment`]: split / oversample / train / evaluate runs and reports.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod classifier;
pub mod config;
pub mod error;
pub mod experiment;
pub mod feature_store;
pub mod metrics;
pub mod oversampling;
pub mod scalar;
pub mod synthgen;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureDataset64 = feature_store::FeatureDataset<f64>;
pub type FeatureDataset32 = feature_store::FeatureDataset<f32>;
pub type SyntheticSet64 = oversampling::SyntheticSet<f64>;
pub type SyntheticSet32 = oversampling::SyntheticSet<f32>;
pub type MlpModel64 = classifier::MlpModel<f64>;
pub type MlpModel32 = classifier::MlpModel<f32>;
