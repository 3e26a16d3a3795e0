//! Invariant graph classification with learned stable-feature masks.
//!
//! A GIN encoder with node and edge mask heads splits each graph into a soft
//! stable part and its environmental complement. Training combines the
//! stable-part classification loss, a mask-ratio regularizer, a structural
//! term that aligns per-environment graphons of the stable parts, and a
//! semantic term that classifies stable representations mixed with other
//! graphs' environmental ones. Environments are inferred by K-means.
//!
//! Modules: [`graph`] data types and JSONL I/O, [`synth`] SYN-b and SYN5
//! style generators, [`graphon`] step functions and cut distances,
//! [`autodiff`] and [`model`] the network, [`objective`] the loss terms,
//! [`envinfer`] clustering, [`harness`] training, metrics and reports.

pub mod autodiff;
pub mod envinfer;
pub mod error;
pub mod graph;
pub mod graphon;
pub mod harness;
pub mod model;
pub mod objective;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
