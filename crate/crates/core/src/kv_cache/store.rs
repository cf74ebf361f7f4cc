use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::block::{block_hash, ContentHash, KvBlock};
use crate::error::{contract, Error, Result};
use crate::model::ToyModel;
use crate::TokenId;

/// Hit/miss accounting, by request count and by token count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub hit_tokens: u64,
    pub miss_tokens: u64,
}

impl CacheStats {
    pub fn requested_tokens(&self) -> u64 {
        self.hit_tokens + self.miss_tokens
    }

    /// `hit_tokens / (hit_tokens + miss_tokens)`, 0 when nothing was requested.
    pub fn hit_rate(&self) -> f64 {
        match self.requested_tokens() {
            0 => 0.0,
            total => self.hit_tokens as f64 / total as f64,
        }
    }

    pub fn merge(&mut self, other: &CacheStats) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.hit_tokens += other.hit_tokens;
        self.miss_tokens += other.miss_tokens;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub block: Arc<KvBlock>,
    pub last_used: u64,
}

#[derive(Debug, Default)]
pub(crate) struct Inner {
    pub entries: HashMap<ContentHash, Entry>,
    pub stats: CacheStats,
    pub clock: u64,
}

impl Inner {
    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }
}

/// Content-addressed KV block store.
///
/// Readers share a lock; a miss encodes outside any lock and then inserts
/// under the write lock, where the first insert of a hash wins.
#[derive(Debug, Default)]
pub struct KvStore {
    pub(crate) inner: RwLock<Inner>,
}

impl KvStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_inner(inner: Inner) -> Self {
        Self {
            inner: RwLock::new(inner),
        }
    }

    /// Return the cached encoding of `tokens` (with `sink_count` sink tokens
    /// prepended), encoding and inserting it on a miss. The flag is `true` on
    /// a hit.
    pub fn get_or_encode(
        &self,
        model: &ToyModel,
        tokens: &[TokenId],
        sink_count: usize,
    ) -> Result<(Arc<KvBlock>, bool)> {
        if tokens.is_empty() {
            return Err(contract("cannot cache an empty block"));
        }
        let fingerprint = model.fingerprint();
        let mut ids = Vec::with_capacity(sink_count + tokens.len());
        ids.extend(std::iter::repeat_n(model.config().sink_token(), sink_count));
        ids.extend_from_slice(tokens);
        let hash = block_hash(&ids, &fingerprint, sink_count);

        let found = self.inner.read().entries.get(&hash).map(|e| Arc::clone(&e.block));
        if let Some(block) = found {
            if block.fingerprint() != &fingerprint {
                return Err(Error::Stale(format!(
                    "block {} was encoded by model {}, requested by {}",
                    block.hash_hex(),
                    hex::encode(block.fingerprint()),
                    hex::encode(fingerprint)
                )));
            }
            let mut inner = self.inner.write();
            let now = inner.tick();
            if let Some(e) = inner.entries.get_mut(&hash) {
                e.last_used = now;
            }
            inner.stats.hits += 1;
            inner.stats.hit_tokens += block.token_len() as u64;
            return Ok((block, true));
        }

        let encoded = model.encode_block(tokens, sink_count)?;
        let block = self.insert_block(encoded)?;
        let mut inner = self.inner.write();
        inner.stats.misses += 1;
        inner.stats.miss_tokens += block.token_len() as u64;
        Ok((block, false))
    }

    /// Insert a block; if its hash is already present the stored block wins
    /// after a byte comparison.
    pub fn insert_block(&self, block: KvBlock) -> Result<Arc<KvBlock>> {
        let mut inner = self.inner.write();
        let now = inner.tick();
        let hash = *block.content_hash();
        if let Some(existing) = inner.entries.get_mut(&hash) {
            if !existing.block.same_bytes(&block) {
                return Err(Error::HashCollision(block.hash_hex()));
            }
            existing.last_used = now;
            return Ok(Arc::clone(&existing.block));
        }
        let block = Arc::new(block);
        inner.entries.insert(
            hash,
            Entry {
                block: Arc::clone(&block),
                last_used: now,
            },
        );
        Ok(block)
    }

    /// Peek without touching stats or recency.
    pub fn lookup(&self, hash: &ContentHash) -> Option<Arc<KvBlock>> {
        self.inner.read().entries.get(hash).map(|e| Arc::clone(&e.block))
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.inner.read().entries.contains_key(hash)
    }

    pub fn stats(&self) -> CacheStats {
        self.inner.read().stats
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_tokens(&self) -> usize {
        self.inner.read().entries.values().map(|e| e.block.token_len()).sum()
    }

    /// Stored hashes in ascending order.
    pub fn hashes(&self) -> Vec<ContentHash> {
        let mut out: Vec<_> = self.inner.read().entries.keys().copied().collect();
        out.sort();
        out
    }

    /// Drop least-recently-used blocks until at most `capacity_tokens` remain.
    /// Returns the evicted hashes, oldest first.
    pub fn evict_lru(&self, capacity_tokens: usize) -> Vec<ContentHash> {
        let mut inner = self.inner.write();
        let mut total: usize = inner.entries.values().map(|e| e.block.token_len()).sum();
        if total <= capacity_tokens {
            return Vec::new();
        }
        let mut order: Vec<(u64, ContentHash, usize)> = inner
            .entries
            .iter()
            .map(|(h, e)| (e.last_used, *h, e.block.token_len()))
            .collect();
        order.sort();
        let mut evicted = Vec::new();
        for (_, hash, len) in order {
            if total <= capacity_tokens {
                break;
            }
            inner.entries.remove(&hash);
            total -= len;
            evicted.push(hash);
        }
        evicted
    }
}
