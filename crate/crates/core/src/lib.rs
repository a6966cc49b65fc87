//! Deterministic laboratory for class-dependent effects of mixed sample
//! data augmentation (Mixup, CutMix, saliency-grid mixing) and for the
//! DropMix schedule that mitigates them.

pub mod datagen;
pub mod dropmix;
pub mod error;
pub mod metrics;
pub mod msda;
pub mod rng;
pub mod runner;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::{beta_sample, RngStream};
pub use tensor::{tensor_lerp, LabeledBatch, Tensor};
