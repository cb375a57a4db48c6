//! Source-free adaptation of oriented-box detectors.
//!
//! A mean-teacher loop adapts a source-trained detector to an unlabeled
//! target domain. Teacher pseudo-labels are refined by aggregating the
//! teacher's class scores with a zero-shot classifier's scores before
//! confidence filtering. Around that loop the crate provides rotated-box
//! geometry, weak/strong augmentation, a corruption-dataset generator,
//! VOC-style evaluation and a desk-scale synthetic harness with pluggable
//! model backends.

pub mod augment;
pub mod backends;
pub mod corrupt;
pub mod ema;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod pipeline;
pub mod pseudo_label;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
