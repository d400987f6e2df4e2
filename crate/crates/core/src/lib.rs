//! Depth-disentangled pseudo-label refinement for unsupervised RGB-D
//! salient-object detection.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of
//! the pipeline: scalar fields and their pointwise operations, a small
//! hand-differentiated convolutional substrate, the holistic-attention mask
//! construction and depth objective, the depth-disentangled label update
//! with a dense CRF, the attentive training strategy, the evaluation metrics
//! and a synthetic scene generator. File formats, configuration and the
//! command line live in the `dsu-cli` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod ats;
pub mod disentangle;
pub mod error;
pub mod field;
pub mod label_update;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use field::{RgbImage, ScalarField};
