use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::mask::BlockPartition;
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkLayout {
    pub sink_token: TokenId,
    pub sinks_per_block: usize,
}

/// A sink-prefixed sequence: `{bls×k, B_1, bls×k, B_2, …, bls×k, B_n}`.
/// Each block of `partition` spans its sinks and its content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub tokens: Vec<TokenId>,
    pub partition: BlockPartition,
    pub is_sink: Vec<bool>,
    /// Original index → augmented index.
    pub index_map: Vec<usize>,
}

pub fn insert_sink_tokens(tokens: &[TokenId], partition: &BlockPartition, layout: SinkLayout) -> Result<Augmented> {
    if partition.len() != tokens.len() {
        return Err(contract(format!(
            "partition covers {} tokens, sequence has {}",
            partition.len(),
            tokens.len()
        )));
    }
    if layout.sinks_per_block > 0 && tokens.contains(&layout.sink_token) {
        return Err(contract("sequence already contains the sink token id"));
    }
    let k = layout.sinks_per_block;
    let extra = k * partition.parallel_degree();
    let mut out = Vec::with_capacity(tokens.len() + extra);
    let mut is_sink = Vec::with_capacity(tokens.len() + extra);
    let mut index_map = Vec::with_capacity(tokens.len());
    let mut lengths = Vec::with_capacity(partition.parallel_degree());
    for r in partition.ranges() {
        out.extend(std::iter::repeat_n(layout.sink_token, k));
        is_sink.extend(std::iter::repeat_n(true, k));
        for i in r.clone() {
            index_map.push(out.len());
            out.push(tokens[i]);
            is_sink.push(false);
        }
        lengths.push(k + r.len());
    }
    Ok(Augmented {
        tokens: out,
        partition: BlockPartition::from_lengths(&lengths)?,
        is_sink,
        index_map,
    })
}

/// Inverse of [`insert_sink_tokens`].
pub fn strip_sink_tokens(
    tokens: &[TokenId],
    partition: &BlockPartition,
    layout: SinkLayout,
) -> Result<(Vec<TokenId>, BlockPartition)> {
    let k = layout.sinks_per_block;
    let mut out = Vec::with_capacity(tokens.len());
    let mut lengths = Vec::new();
    for r in partition.ranges() {
        if r.len() <= k || tokens[r.start..r.start + k].iter().any(|&t| t != layout.sink_token) {
            return Err(contract(format!("block {r:?} does not start with {k} sink tokens")));
        }
        out.extend_from_slice(&tokens[r.start + k..r.end]);
        lengths.push(r.len() - k);
    }
    Ok((out, BlockPartition::from_lengths(&lengths)?))
}
