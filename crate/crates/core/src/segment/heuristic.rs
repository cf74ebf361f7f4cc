use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{insert_candidates, InsertionRule};
use crate::error::{contract, Result};
use crate::mask::{build_full_causal, BlockPartition};
use crate::model::{ops, ToyModel};
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicMethod {
    /// Uniform draw among space positions.
    Random,
    /// Evenly spaced among space positions.
    Average,
    /// Evenly spaced among sentence-ending punctuation.
    Punctuation,
    /// Uniform draw among rule-inserted candidates.
    RandomCandidate,
    /// Evenly spaced among rule-inserted candidates.
    AverageCandidate,
}

impl HeuristicMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Self::Random),
            "average" => Some(Self::Average),
            "punctuation" => Some(Self::Punctuation),
            "random_candidate" => Some(Self::RandomCandidate),
            "average_candidate" => Some(Self::AverageCandidate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMethod {
    /// Cross-entropy of the actual next token.
    Loss,
    /// Entropy of the next-token distribution.
    Entropy,
}

/// `degree - 1` indices spread evenly over `0..m`: `floor(k·m/degree)`.
pub fn even_indices(m: usize, degree: usize) -> Vec<usize> {
    (1..degree.max(1)).map(|k| k * m / degree).collect()
}

/// Cut a text into `degree` blocks using one of the rule-based baselines.
/// Text without any usable cut point stays one block.
pub fn heuristic_segment(
    text: &[TokenId],
    method: HeuristicMethod,
    degree: usize,
    candidate_rule: InsertionRule,
    seed: u64,
) -> Result<BlockPartition> {
    if text.is_empty() {
        return Err(contract("cannot segment empty text"));
    }
    if degree == 0 {
        return Err(contract("parallel degree must be at least 1"));
    }
    let points = match method {
        HeuristicMethod::Random | HeuristicMethod::Average => InsertionRule::Space.boundaries(text),
        HeuristicMethod::Punctuation => InsertionRule::SentencePunctuation.boundaries(text),
        HeuristicMethod::RandomCandidate | HeuristicMethod::AverageCandidate => {
            insert_candidates(text, candidate_rule, TokenId::MAX)?.internal_offsets().to_vec()
        }
    };
    if points.is_empty() {
        return BlockPartition::single(text.len());
    }
    if degree > points.len() + 1 {
        return Err(contract(format!(
            "parallel degree {degree} needs {} cut points, only {} available",
            degree - 1,
            points.len()
        )));
    }
    let mut picked: Vec<usize> = match method {
        HeuristicMethod::Random | HeuristicMethod::RandomCandidate => {
            let mut rng = crate::rng::stream(seed, "heuristics");
            sample(&mut rng, points.len(), degree - 1).into_iter().map(|i| points[i]).collect()
        }
        _ => even_indices(points.len(), degree).into_iter().map(|i| points[i]).collect(),
    };
    picked.sort_unstable();
    BlockPartition::from_boundaries(text.len(), &picked)
}

/// Index of the maximum in each of `chunks` equal slices of `scores`
/// (leftmost on ties).
pub fn chunked_argmax(scores: &[f64], chunks: usize) -> Result<Vec<usize>> {
    if chunks > scores.len() {
        return Err(contract(format!("{chunks} chunks over {} scores", scores.len())));
    }
    let n = scores.len();
    Ok((0..chunks)
        .map(|k| {
            let (lo, hi) = (k * n / chunks, (k + 1) * n / chunks);
            (lo..hi).fold(lo, |best, i| if scores[i] > scores[best] { i } else { best })
        })
        .collect())
}

/// Score of each position `i < n - 1` for predicting token `i + 1` under full
/// causal attention. Long texts are scored in windows of `chunk_size` tokens
/// overlapping by one token.
pub fn statistical_scores(
    model: &ToyModel,
    text: &[TokenId],
    method: StatMethod,
    chunk_size: usize,
) -> Result<Vec<f64>> {
    if chunk_size < 2 {
        return Err(contract("chunk_size must be at least 2 to score a next token"));
    }
    let n = text.len();
    let mut scores = Vec::with_capacity(n.saturating_sub(1));
    let mut start = 0;
    while start + 1 < n {
        let end = (start + chunk_size).min(n);
        let window = &text[start..end];
        let out = model.forward_seq(window, &build_full_causal(window.len())?)?;
        for i in 0..window.len() - 1 {
            let row = out.logits.row(i);
            scores.push(match method {
                StatMethod::Loss => ops::log_sum_exp(row) - row[window[i + 1] as usize],
                StatMethod::Entropy => ops::entropy(row),
            });
        }
        start = end - 1;
    }
    Ok(scores)
}

/// Chunked top-1 over per-token scores: a cut after the best-scoring position
/// in each of `degree - 1` equal chunks.
pub fn statistical_segment(
    model: &ToyModel,
    text: &[TokenId],
    method: StatMethod,
    degree: usize,
    chunk_size: usize,
) -> Result<BlockPartition> {
    if degree == 0 || text.is_empty() {
        return Err(contract("need non-empty text and a parallel degree of at least 1"));
    }
    let scores = statistical_scores(model, text, method, chunk_size)?;
    let cuts: Vec<usize> = chunked_argmax(&scores, degree - 1)?.into_iter().map(|i| i + 1).collect();
    BlockPartition::from_boundaries(text.len(), &cuts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::segment::encode_text;

    #[test]
    fn even_spacing() {
        assert_eq!(even_indices(100, 5), vec![20, 40, 60, 80]);
        assert_eq!(even_indices(3, 4), vec![0, 1, 2]);
        assert!(even_indices(7, 1).is_empty());
    }

    #[test]
    fn average_over_spaces() {
        let text = encode_text(&vec!["ab"; 101].join(" "));
        let p = heuristic_segment(&text, HeuristicMethod::Average, 5, InsertionRule::Newline, 0).unwrap();
        assert_eq!(p.parallel_degree(), 5);
        // the 21st space sits after the 21st word: offset 21·3
        assert_eq!(p.boundaries(), vec![63, 123, 183, 243]);
    }

    #[test]
    fn punctuation_without_matches() {
        let text = encode_text("no sentence end here");
        let p = heuristic_segment(&text, HeuristicMethod::Punctuation, 4, InsertionRule::Newline, 0).unwrap();
        assert_eq!(p.parallel_degree(), 1);
    }

    #[test]
    fn random_is_reproducible_and_exact() {
        let text = encode_text("a b c d e f g h i j");
        let a = heuristic_segment(&text, HeuristicMethod::Random, 4, InsertionRule::Newline, 3).unwrap();
        let b = heuristic_segment(&text, HeuristicMethod::Random, 4, InsertionRule::Newline, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parallel_degree(), 4);
        assert!(heuristic_segment(&text, HeuristicMethod::Random, 11, InsertionRule::Newline, 3).is_err());
    }

    #[test]
    fn candidate_methods_use_rule() {
        let text = encode_text("one\ntwo\nthree\nfour");
        let p = heuristic_segment(&text, HeuristicMethod::AverageCandidate, 4, InsertionRule::Newline, 0).unwrap();
        assert_eq!(p.boundaries(), vec![4, 8, 14]);
    }

    #[test]
    fn chunked_argmax_examples() {
        assert_eq!(chunked_argmax(&[1.0, 9.0, 2.0, 3.0, 8.0, 4.0], 2).unwrap(), vec![1, 4]);
        assert_eq!(chunked_argmax(&[5.0; 9], 3).unwrap(), vec![0, 3, 6]);
        assert!(chunked_argmax(&[1.0], 2).is_err());
    }

    #[test]
    fn statistical_windows_match_single_pass() {
        let m = ToyModel::new(ModelConfig::byte_level(1, 2, 4, 64, 5)).unwrap();
        let text = encode_text("the cat sat on the mat");
        let whole = statistical_scores(&m, &text, StatMethod::Entropy, 64).unwrap();
        assert_eq!(whole.len(), text.len() - 1);
        let windowed = statistical_scores(&m, &text, StatMethod::Entropy, 8).unwrap();
        assert_eq!(windowed.len(), whole.len());
        // the first window is a prefix of the full pass
        for i in 0..7 {
            assert!((whole[i] - windowed[i]).abs() < 1e-12);
        }
        let p = statistical_segment(&m, &text, StatMethod::Loss, 3, 64).unwrap();
        assert_eq!(p.parallel_degree(), 3);
    }
}
