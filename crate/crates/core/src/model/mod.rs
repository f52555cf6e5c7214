//! The EST network: tokenizers, lightweight cross-attention (LCA), content
//! sparse attention (CSA), per-token and shared FFNs, the prediction head,
//! the full self-attention baseline and decoupled request scoring.

pub mod checkpoint;
mod config;
mod est;
mod features;
mod layout;
mod params;

use thiserror::Error;

pub use config::{Arch, Block, BlockMask, FieldSpec, FieldTable, ModelConfig, MODEL_CONFIG_KEYS};
pub use est::{AttentionMap, Model, UserSide, UserStep, MASK_LOGIT};
pub use features::{
    build_similarity_cache, content_matrix, featurize, simtier_bin, simtier_histogram, CandidateInputs, RequestInputs,
    SeqInputs, SimilarityCache, UserInputs,
};
pub use layout::{BehaviorTokenizer, Ffn, Layer, Layout, Mlp};
pub use params::{truncated_normal, Param, ParamKind, ParamStore};

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
