//! Prefix-agnostic KV blocks and a content-addressed store for them.

mod block;
mod file;
mod store;

pub use block::{block_hash, ContentHash, KvBlock, BLOCK_FORMAT_VERSION};
pub use file::{CACHE_MAGIC, CACHE_VERSION};
pub use store::{CacheStats, KvStore};
