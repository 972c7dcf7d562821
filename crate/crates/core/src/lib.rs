//! Lossy compression of sparse TPC voxel frames with a bicephalous
//! convolutional autoencoder.
//!
//! The crate is organised bottom-up:
//!
//! * [`frames`] - the ADC voxel data model, sectioning, zero suppression,
//!   a synthetic track generator and the `TPCF` frame file format.
//! * [`transform`] - the log value transform, soft labels, focal and
//!   regression losses, gated output combination and loss balancing.
//! * [`tensor`] / [`layers`] - a small CPU substrate with 3D (transposed)
//!   convolutions, instance normalisation and hand-written backward passes.
//! * [`network`] - layer tables, shape oracles, the encoder and the two
//!   decoders, weight export.
//! * [`codec`] - half precision code blocks and the `BCAE` container.
//! * [`training`] - AdamW, the balanced two-loss training loop, ablation
//!   variants and checkpoints.
//! * [`evaluation`] - metrics, threshold sweeps, baseline codecs and the
//!   benchmark harness.

pub mod codec;
pub mod error;
pub mod evaluation;
pub mod frames;
pub mod layers;
pub mod network;
pub mod seed;
pub mod tensor;
pub mod training;
pub mod transform;
mod wire;

pub use error::{Error, ErrorClass, Result};
