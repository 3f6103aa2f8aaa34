//! Two-stream manipulation localisation.
//!
//! The RGB stream and a block-DCT frequency stream are encoded in parallel,
//! fused level by level with pixel-wise attention, and decoded into a tamper
//! mask. A shallow full-resolution boundary stream predicts the seams of the
//! tampered region and feeds the decoder.

pub mod acf;
pub mod afs;
pub mod attacks;
pub mod backbone;
pub mod bal;
pub mod blocks;
pub mod checkpoint;
pub mod corpus;
pub mod decoder;
mod error;
pub mod evaluate;
pub mod frequency;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod morphology;
pub mod network;
pub mod synth;

pub use error::{Error, Result};
pub use image::{BinaryMask, ImageTensor, ValueRange};
pub use network::{Ablation, FrequencyNorm, NetInput, NetworkConfig, PredictionPair, TbNet};
