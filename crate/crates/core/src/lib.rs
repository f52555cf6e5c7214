//! Efficiently scalable transformer (EST) for click-through-rate prediction.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a tape-based autodiff engine.
//! * [`data`]: synthetic CTR logs with planted candidate–behaviour structure,
//!   GSU retrieval and the binary dataset format.
//! * [`model`]: tokenizers, lightweight cross-attention, content sparse
//!   attention, the full-attention baseline and decoupled request scoring.
//! * [`metrics`]: AUC/GAUC, effective rank, analytic FLOPs and power-law fits.
//! * [`train`]: AdamW, the sparse-reset multi-epoch schedule and checkpoints.
//! * [`experiment`]: featurize, train and evaluate in one call.

pub mod baseline;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod par;
pub mod seed;
pub mod tensor;
pub mod train;

pub use tensor::{Float, Graph, Precision, Tensor};
