//! Weighted multi-level feature factorization for tabular click and install
//! prediction.
//!
//! The crate covers the whole path from raw delimited files to evaluated
//! models:
//!
//! * [`features`]: schema inference, ordinal and target encoding, numeric
//!   standardization with a piecewise log transform.
//! * [`numerics`]: seeded RNG, matrix kernels, and a reverse-mode tape.
//! * [`model`]: embedded inputs, noisy feed-forward towers, and weighted
//!   per-level factorization heads.
//! * [`training`]: joint binary cross-entropy or MSE training with Adam,
//!   AdamW, or RAdam, early stopping, and k-fold ensembles.
//! * [`eval`]: log loss, normalized cross entropy, AUC, and RMSE.
//! * [`datagen`]: synthetic datasets with a planted teacher model.
//! * [`container`]: a single-file format for fitted pipelines and weights.
//!
//! Every random decision flows through [`numerics::Rng`], so a fixed seed
//! reproduces runs bit for bit.

pub mod container;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
