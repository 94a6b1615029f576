//! Linear-probe benchmarking for fixed audio embeddings.
//!
//! The pipeline runs from raw audio to interpretable weight analyses:
//!
//! * [`dsp`] computes logmel spectrograms and applies time/frequency masking.
//! * [`embedding`] stores clip-level vectors and fits the two-stage
//!   normalizer (per-dimension z-score, then unit l2 norm).
//! * [`pooling`] aggregates frame-level values into clip-level vectors.
//! * [`probe`] trains softmax / sigmoid linear classifiers.
//! * [`metrics`] scores predictions (accuracy, top-k, MAP, MAUC, lwlrap).
//! * [`harness`] runs cross-validation and split experiments from manifests.
//! * [`analysis`] clusters and projects the learned weight rows.
//! * [`cli`] wires everything into the `probekit` binary.

pub mod analysis;
pub mod cli;
pub mod dsp;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod matrix_io;
pub mod metrics;
pub mod pooling;
pub mod probe;

pub use error::{Error, Result};

/// Tool version recorded in provenance files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
