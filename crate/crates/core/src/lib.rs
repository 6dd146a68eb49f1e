//! Cross-system classification of optical-fiber polarization events.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`tracesim`] — synthetic dual-polarization intensity traces for three
//!   event classes under two system profiles with a controllable domain shift.
//! - [`featurizer`] — ΔS / NPSV extraction, 500-sample segmentation and
//!   Hamming-windowed 512-point power spectra.
//! - [`dataprep`] — activity filtering, stratified (event, domain) splitting
//!   and train-fitted z-score normalization.
//! - [`nn`] — a minimal f64 dense-network core with reverse-mode gradients,
//!   the losses, optimizers and learning-rate schedules the models need.
//! - [`models`] — the residual DNN baseline, single-system VAEs and the
//!   combined-system VAE with two-phase (freeze + per-scenario head) training.
//! - [`hpo`] — random-search studies with median pruning.
//! - [`harness`] — the four-scenario evaluation protocol, PCA shift
//!   diagnostic and deterministic report emission.

pub mod container;
pub mod dataprep;
pub mod error;
pub mod featurizer;
pub mod harness;
pub mod hpo;
pub mod models;
pub mod nn;
pub mod tracesim;
pub mod util;

pub use error::{Error, Result};
