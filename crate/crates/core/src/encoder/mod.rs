//! A small transformer encoder over packed question/paragraph pairs.
//!
//! Post-layer-norm blocks with learned absolute positions, multi-head
//! self-attention and a GELU feed-forward layer, all in `f64`. The backward
//! pass is hand-written and checked against finite differences in tests.

mod checkpoint;
mod dropout;
mod forward;
mod pack;
mod params;
mod vocab;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, vocab_path_for, write_checkpoint,
    CHECKPOINT_MAGIC,
};
pub use dropout::DropoutKey;
pub use forward::{encode, encode_backward, encode_batch, EncodeMode, Encoding, ForwardCache};
pub(crate) use forward::backward_into as forward_backward_into;
pub use pack::{pack, PackedInput};
pub use params::{LayerParams, ModelParameters, MultitaskHeads};
pub use vocab::{Vocab, CLS_ID, PAD_ID, SEP_ID, UNK_ID};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("question of {question_len} tokens does not fit max_seq_len {max_seq_len}")]
    QuestionTooLong {
        question_len: usize,
        max_seq_len: usize,
    },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("non-finite values after {stage}")]
    NonFinite { stage: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint tensor {name}: {reason}")]
    BadTensor { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    /// Default desk-scale model: 64 wide, 2 layers, 4 heads.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 256,
            dropout_rate: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.vocab_size < vocab::N_SPECIAL {
            return bad("vocab_size smaller than the special-token block");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return bad("dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.max_seq_len < 4 {
            return bad("max_seq_len too small");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        Ok(())
    }

    /// Checks room for a `granularity`-token paragraph, a question of
    /// `max_question_len` tokens and the three special tokens.
    pub fn validate_for(&self, granularity: usize, max_question_len: usize) -> Result<(), ModelError> {
        self.validate()?;
        if self.max_seq_len < granularity + max_question_len + 3 {
            return Err(ModelError::InvalidConfig(format!(
                "max_seq_len {} < granularity {} + question {} + 3",
                self.max_seq_len, granularity, max_question_len
            )));
        }
        Ok(())
    }
}
