//! Block attention, end to end.
//!
//! A desk-scale toolkit built around a small f64 decoder-only transformer:
//!
//! - [`mask`]: full, block and block-dropout attention masks.
//! - [`model`]: the toy transformer with rotary positions, per-layer KV export
//!   and hand-written reverse-mode gradients.
//! - [`kv_cache`]: prefix-agnostic KV blocks, re-rotation to any offset and a
//!   content-addressed store with LRU eviction and persistence.
//! - [`segment`]: candidate cut tokens, heuristic/statistical/neural scoring
//!   and recursive granularity control.
//! - [`distill`]: block sink tokens, block-dropout KL, token weighting and the
//!   distillation training step against a frozen teacher.
//! - [`cache_sim`]: analytic prefix-cache vs block-cache hit rates and
//!   attention-pair prefill costs.

mod binio;
pub mod bench;
pub mod cache_sim;
pub mod distill;
pub mod error;
pub mod kv_cache;
pub mod mask;
pub mod model;
pub mod optim;
pub mod rng;
pub mod segment;
pub mod synthetic;

pub use error::{Error, Result};

/// Token ids are plain `u32`s; every model reserves its top two ids for the
/// block sink token and the candidate cut token.
pub type TokenId = u32;
