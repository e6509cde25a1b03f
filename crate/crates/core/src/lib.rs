//! Band-specific hybrid quantum-classical image classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`] - dense statevector simulator with parameter-shift gradients.
//! * [`features`] - six-channel feature engineering (RGB, EVI, NDVI, local
//!   entropy) and patch extraction.
//! * [`metrics`] - per-band complexity metrics (entropy, variance, flatness,
//!   edge density).
//! * [`design`] - metric-driven circuit rubric, circuit templates and presets.
//! * [`nn`] - small dense layer kit with analytic backward passes and Adam.
//! * [`model`] - the hybrid network (patch encoder, band circuits, spatial
//!   attention head) and its checkpoint format.
//! * [`data`], [`train`], [`eval`], [`ablate`] - dataset container, training
//!   loop, evaluation reports and ablation suites.
//! * [`qasm`] - OpenQASM 2.0 export and re-import of compiled circuits.
//!
//! Data-parallel loops (patches, samples, images) go through [`par`], which
//! uses rayon when the `parallel` feature is enabled and falls back to plain
//! iteration otherwise.

pub mod ablate;
pub mod data;
pub mod design;
pub mod error;
pub mod eval;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod qasm;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
