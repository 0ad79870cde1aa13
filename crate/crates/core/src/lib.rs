//! Fast pretraining distillation for the TinyViT family.
//!
//! A teacher pass stores each sample's augmentation seed and sparse top-K
//! soft label in per-epoch cache files; student passes replay the
//! augmentation from the seed and train against the cached labels without
//! ever running the teacher again.

pub mod aug;
pub mod cache;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod image;
pub mod label_codec;
pub mod model;
pub mod search;

pub use error::{Error, Result};
