//! Text segmentation into blocks.
//!
//! The pipeline follows four steps: insert candidate cut tokens by a simple
//! rule, score every internal candidate, keep those at or above a threshold,
//! and optionally recurse into each resulting block with a new threshold.
//!
//! Text is byte-level: token id = byte value. Models used here must reserve
//! the two ids above 255 ([`crate::model::ModelConfig::byte_level`]).

mod candidates;
mod corpus;
mod head;
mod heuristic;
mod recursive;
mod scorer;

pub use candidates::{insert_candidates, CandidateSequence, InsertionRule};
pub use corpus::{boundary_counts, load_jsonl, save_jsonl, BoundaryCounts, SegmentationExample};
pub use head::{train_cut_head, CutHead, HeadTrainConfig, HeadTrainReport, NeuralScorer};
pub use heuristic::{
    chunked_argmax, even_indices, heuristic_segment, statistical_scores, statistical_segment, HeuristicMethod,
    StatMethod,
};
pub use recursive::{decide_cuts, recursive_segment, SegmenterConfig};
pub use scorer::{AverageScorer, CutScorer, FixedScorer, HashScorer, RandomCandidateScorer};

use crate::TokenId;

/// Byte-level tokenization.
pub fn encode_text(text: &str) -> Vec<TokenId> {
    text.bytes().map(TokenId::from).collect()
}

/// Inverse of [`encode_text`] for ids below 256; other ids are dropped.
pub fn decode_bytes(tokens: &[TokenId]) -> Vec<u8> {
    tokens.iter().filter_map(|&t| u8::try_from(t).ok()).collect()
}
