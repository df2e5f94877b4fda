//! Tensor arithmetic with reverse-mode autodiff, the tiny decoder-only
//! language model, the Adam optimizer, sampling, and sequence scoring.

mod adam;
mod checkpoint;
mod gradcheck;
mod infer;
mod model;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_global_norm, OptimizerState};
pub use checkpoint::{checkpoint_content_id, load_checkpoint, save_checkpoint, CheckpointHeader};
pub use gradcheck::finite_diff_check;
pub use infer::{
    argmax_lowest, continue_sample, logprobs_from_state, prefill, sample, DecodeConfig,
    DecodeMode, Generator,
};
pub use model::{
    encode_prefix, forward, logits_node, nll_loss, nll_node, nll_node_shared, score_node,
    score_node_shared, sequence_score, sequence_score_from_logprobs, suffix_logits, BoundParams,
    ModelConfig, ParamId, ParameterSet, PrefixState,
};
pub use tape::{GradientSet, NodeId, Op, Tape};
pub use tensor::{matmul as matmul_pub, Scalar, Tensor};

use thiserror::Error;

/// Errors from the neural core.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("sequence of {len} tokens exceeds context length {ctx}")]
    SequenceTooLong { len: usize, ctx: usize },
    #[error("token id {id} out of vocabulary (size {vocab})")]
    OutOfVocab { id: u32, vocab: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint corrupt: {0}")]
    CorruptCheckpoint(String),
}
