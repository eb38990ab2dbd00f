//! Encode multichannel time series as Gramian angular fields and Markov
//! transition fields, and train the small convolutional models that consume
//! them.
//!
//! The crate is organised bottom-up:
//!
//! * [`ingest`] reads WISDM accelerometer logs and physiological CSV files and
//!   generates deterministic synthetic stand-ins for private datasets.
//! * [`series`] holds the signal containers, min-max rescaling and sliding
//!   window segmentation.
//! * [`encode`] turns rescaled windows into GASF, GADF and MTF matrices and
//!   composes per-axis image stacks.
//! * [`imageio`] writes those matrices as PNG previews and as `TSIM` binary
//!   tensors.
//! * [`nn`] is a compact neural-network core (dense, convolution, pooling,
//!   batch norm, dropout, softmax) with explicit backward passes.
//! * [`transfer`] builds the 1D CNN, the 2D image trunk and the two-branch
//!   fusion model, and runs head-replacement transfer.
//! * [`eval`] provides hold-out and leave-one-participant-out protocols and
//!   classification scores.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise. Every
//! reduction has a fixed order, so results do not depend on the thread count.

pub mod encode;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod ingest;
pub mod nn;
pub mod par;
pub mod series;
pub mod transfer;

pub use error::{Error, Result};

/// Build identifier recorded in checkpoint provenance.
pub fn build_version() -> &'static str {
    option_env!("TS2IMG_GIT_DESCRIBE").unwrap_or(env!("CARGO_PKG_VERSION"))
}
