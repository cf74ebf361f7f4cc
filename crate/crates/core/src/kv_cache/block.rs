use sha2::{Digest, Sha256};

use crate::model::LayerKv;
use crate::TokenId;

/// Bumped whenever the hashed layout or the on-disk block encoding changes.
pub const BLOCK_FORMAT_VERSION: u32 = 1;

pub type ContentHash = [u8; 32];

/// Per-layer KV states of one independently encoded block.
///
/// Keys carry rotary encoding for LOCAL positions `0..token_len`; use
/// [`crate::model::ToyModel::apply_position_offset`] to place them anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct KvBlock {
    pub(crate) content_hash: ContentHash,
    pub(crate) fingerprint: ContentHash,
    pub(crate) token_ids: Vec<TokenId>,
    pub(crate) sink_count: usize,
    pub(crate) layers: Vec<LayerKv>,
}

/// Digest over (format version, model fingerprint, sink count, token ids
/// including the sink prefix).
pub fn block_hash(token_ids: &[TokenId], fingerprint: &ContentHash, sink_count: usize) -> ContentHash {
    let mut h = Sha256::new();
    h.update(b"BKVB");
    h.update(BLOCK_FORMAT_VERSION.to_le_bytes());
    h.update(fingerprint);
    h.update((sink_count as u64).to_le_bytes());
    h.update((token_ids.len() as u64).to_le_bytes());
    for t in token_ids {
        h.update(t.to_le_bytes());
    }
    h.finalize().into()
}

impl KvBlock {
    pub(crate) fn new(
        fingerprint: ContentHash,
        token_ids: Vec<TokenId>,
        sink_count: usize,
        layers: Vec<LayerKv>,
    ) -> Self {
        let content_hash = block_hash(&token_ids, &fingerprint, sink_count);
        Self {
            content_hash,
            fingerprint,
            token_ids,
            sink_count,
            layers,
        }
    }

    pub fn content_hash(&self) -> &ContentHash {
        &self.content_hash
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.content_hash)
    }

    pub fn fingerprint(&self) -> &ContentHash {
        &self.fingerprint
    }

    /// Token count including the sink prefix.
    pub fn token_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn sink_count(&self) -> usize {
        self.sink_count
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn layers(&self) -> &[LayerKv] {
        &self.layers
    }

    /// Byte-level equality of every tensor and id.
    pub fn same_bytes(&self, other: &KvBlock) -> bool {
        let bits = |l: &[LayerKv]| -> Vec<u64> {
            l.iter()
                .flat_map(|kv| kv.keys.iter().chain(kv.values.iter()).map(|x| x.to_bits()))
                .collect()
        };
        self.content_hash == other.content_hash
            && self.fingerprint == other.fingerprint
            && self.token_ids == other.token_ids
            && self.sink_count == other.sink_count
            && bits(&self.layers) == bits(&other.layers)
    }
}
