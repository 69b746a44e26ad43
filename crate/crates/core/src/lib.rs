//! Contrastive representation learning for 12-lead ECG.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: records, the manifest + binary signal format, splits, and a
//!   parametric synthetic ECG generator.
//! - [`transforms`]: temporal segmentation, lead sampling and the stochastic
//!   augmentation family used to build views of a single recording.
//! - [`attributes`]: 11-dimensional wave-attribute vectors, their
//!   standardisation and distance, and an R-peak based extractor.
//! - [`pairing`]: turns a dataset and a positive-pair strategy into batches
//!   with an explicit positive mask.
//! - [`nn`]: dense tensors, a tape-based reverse-mode autodiff graph, the
//!   residual 1-D convolutional encoder, the linear probe and optimizers.
//! - [`objective`]: contrastive and cross-entropy losses, AUROC, and the
//!   pretraining / probing / supervised training loops.

pub mod attributes;
pub mod data;
pub mod error;
pub mod nn;
pub mod objective;
pub mod pairing;
pub mod rng;
pub mod transforms;

pub use error::{Error, Result};
