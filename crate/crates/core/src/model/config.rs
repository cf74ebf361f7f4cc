use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::TokenId;

/// Shape and seed of a toy decoder-only transformer.
///
/// The two highest token ids are reserved: `vocab_size - 2` is the block sink
/// token and `vocab_size - 1` is the candidate cut token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
        vocab_size: usize,
        max_seq_len: usize,
        seed: u64,
    ) -> Self {
        Self {
            num_layers,
            num_heads,
            head_dim,
            hidden_dim: num_heads * head_dim,
            vocab_size,
            max_seq_len,
            rope_base: 10_000.0,
            seed,
        }
    }

    /// Byte-level vocabulary: 256 byte ids plus the two reserved ids.
    pub fn byte_level(
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
        max_seq_len: usize,
        seed: u64,
    ) -> Self {
        Self::new(num_layers, num_heads, head_dim, 258, max_seq_len, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 {
            return Err(contract("model needs at least one layer, head and head dim"));
        }
        if self.head_dim % 2 != 0 {
            return Err(contract(format!("rotary encoding needs an even head_dim, got {}", self.head_dim)));
        }
        if self.hidden_dim != self.num_heads * self.head_dim {
            return Err(contract(format!(
                "hidden_dim {} != num_heads {} x head_dim {}",
                self.hidden_dim, self.num_heads, self.head_dim
            )));
        }
        if self.vocab_size < 3 {
            return Err(contract("vocab must hold at least one ordinary token and two reserved ids"));
        }
        if self.max_seq_len == 0 {
            return Err(contract("max_seq_len must be positive"));
        }
        if !(self.rope_base > 0.0) {
            return Err(contract("rope_base must be positive"));
        }
        Ok(())
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.hidden_dim
    }

    pub fn sink_token(&self) -> TokenId {
        (self.vocab_size - 2) as TokenId
    }

    pub fn cut_token(&self) -> TokenId {
        (self.vocab_size - 1) as TokenId
    }

    /// Number of ordinary (non-reserved) token ids.
    pub fn content_vocab(&self) -> usize {
        self.vocab_size - 2
    }
}
