//! A small conditioned autoregressive model with exact gradients.
//!
//! An affine-tanh encoder maps a feature vector to the initial hidden state of
//! a single GRU layer, which emits SMILES characters. Every forward pass has a
//! hand-written reverse pass, checked against central differences in tests.

mod checkpoint;
mod decode;
mod gru;
mod params;
mod vocab;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, NamedTensor, MAGIC, VERSION};
pub use decode::DecodeResult;
pub use gru::{Decoder, InputGrads, TeacherForced, Trace};
pub use params::{Gradients, ModelConfig, ModelParams, ParamBuffer, Tensor};
pub use vocab::{Vocab, BOS, EOS, PAD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqModelError {
    #[error("unknown token {token:?} at position {pos}")]
    UnknownToken { token: char, pos: usize },
    #[error("invalid token id {0}")]
    InvalidTokenId(usize),
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("target sequence is empty")]
    EmptySequence,
    #[error("non-finite gradient in {tensor}[{index}] = {value}")]
    NonFiniteGradient {
        tensor: &'static str,
        index: usize,
        value: f64,
    },
}

impl ParamBuffer {
    /// `Err(NonFiniteGradient)` naming the first NaN or infinity.
    pub fn check_finite(&self) -> Result<(), SeqModelError> {
        match self.first_non_finite() {
            None => Ok(()),
            Some((t, index, value)) => Err(SeqModelError::NonFiniteGradient {
                tensor: t.name(),
                index,
                value,
            }),
        }
    }
}

/// Hash of the model shape and vocabulary, stored in checkpoints so a file
/// is never loaded into a mismatched model.
pub fn config_hash(config: &ModelConfig, vocab: &Vocab) -> u64 {
    let mut h = crate::hash::StableHasher::new();
    for d in [config.vocab_size, config.embed_dim, config.hidden_dim, config.feature_dim] {
        h.write_u64(d as u64);
    }
    for &c in vocab.chars() {
        h.write_u64(u64::from(c));
    }
    h.finish()
}

/// Parameters together with the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SmilesModel {
    pub vocab: Vocab,
    pub params: ModelParams,
}

impl SmilesModel {
    /// Checkpoint with the given extra metadata. Parameters are stored as f32.
    pub fn to_checkpoint(&self, metadata: &[(String, String)]) -> Checkpoint {
        let cfg = self.params.config();
        let mut meta = vec![
            ("vocab".to_string(), self.vocab.chars().iter().collect()),
            ("embed_dim".to_string(), cfg.embed_dim.to_string()),
            ("hidden_dim".to_string(), cfg.hidden_dim.to_string()),
            ("feature_dim".to_string(), cfg.feature_dim.to_string()),
        ];
        meta.extend(metadata.iter().cloned());
        let tensors = Tensor::ALL
            .iter()
            .map(|&t| {
                let (r, c) = cfg.shape(t);
                let shape = if c == 1 { vec![r] } else { vec![r, c] };
                NamedTensor::from_f64(t.name(), shape, self.params.tensor(t))
            })
            .collect();
        Checkpoint {
            config_hash: config_hash(cfg, &self.vocab),
            metadata: meta,
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let vocab = Vocab::from_chars(ck.require_meta("vocab")?.chars());
        let dim = |key: &str| -> Result<usize, CheckpointError> {
            ck.require_meta(key)?
                .parse()
                .map_err(|_| CheckpointError::Malformed(format!("metadata '{key}' is not an integer")))
        };
        let cfg = ModelConfig::new(vocab.len(), dim("embed_dim")?, dim("hidden_dim")?, dim("feature_dim")?);
        if ck.config_hash != config_hash(&cfg, &vocab) {
            return Err(CheckpointError::Malformed("config hash mismatch".into()));
        }
        let mut params = ModelParams::zeros(cfg);
        for t in Tensor::ALL {
            let nt = ck.require_tensor(t.name())?;
            let (r, c) = cfg.shape(t);
            if nt.shape.iter().product::<usize>() != r * c {
                return Err(CheckpointError::Malformed(format!(
                    "tensor '{}' has shape {:?}, expected {r}x{c}",
                    t.name(),
                    nt.shape
                )));
            }
            params.tensor_mut(t).copy_from_slice(&nt.to_f64());
        }
        Ok(Self { vocab, params })
    }
}
