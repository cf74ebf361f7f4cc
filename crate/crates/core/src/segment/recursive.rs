use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CandidateSequence, CutScorer};
use crate::error::{contract, Result};
use crate::mask::BlockPartition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub recursion_depth: usize,
    /// One threshold per level, non-decreasing.
    pub thresholds: Vec<f64>,
    pub min_blocks: usize,
    pub max_candidates_per_block: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            recursion_depth: 1,
            thresholds: vec![0.5],
            min_blocks: 1,
            max_candidates_per_block: 350,
        }
    }
}

impl SegmenterConfig {
    pub fn with_thresholds(thresholds: Vec<f64>) -> Self {
        Self {
            recursion_depth: thresholds.len(),
            thresholds,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.recursion_depth == 0 {
            return Err(contract("recursion depth must be at least 1"));
        }
        if self.thresholds.len() != self.recursion_depth {
            return Err(contract(format!(
                "{} thresholds given for recursion depth {}",
                self.thresholds.len(),
                self.recursion_depth
            )));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(contract(format!("threshold {t} outside (0, 1)")));
        }
        if self.thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(contract("thresholds must be non-decreasing across levels"));
        }
        if self.max_candidates_per_block == 0 {
            return Err(contract("max_candidates_per_block must be positive"));
        }
        Ok(())
    }
}

fn check_probs(seq: &CandidateSequence, probs: &[f64]) -> Result<()> {
    if probs.len() != seq.num_internal() {
        return Err(contract(format!(
            "{} probabilities for {} internal candidates",
            probs.len(),
            seq.num_internal()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(contract(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Blocks between consecutive accepted candidates (p ≥ threshold), with C_0
/// and C_n always boundaries. The partition covers the candidate-free text.
pub fn decide_cuts(seq: &CandidateSequence, probs: &[f64], threshold: f64) -> Result<BlockPartition> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(contract(format!("threshold {threshold} outside (0, 1)")));
    }
    check_probs(seq, probs)?;
    let cuts: Vec<usize> = seq
        .internal_offsets()
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p >= threshold)
        .map(|(&o, _)| o)
        .collect();
    BlockPartition::from_boundaries(seq.text().len(), &cuts)
}

fn blocks_of(len: usize, bounds: &BTreeSet<usize>) -> Vec<(usize, usize)> {
    let mut edges = vec![0];
    edges.extend(bounds.iter().copied());
    edges.push(len);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Highest-probability candidate strictly inside `s..e`, leftmost on ties.
fn best_inside(probs: &BTreeMap<usize, f64>, s: usize, e: usize, taken: &BTreeSet<usize>) -> Option<usize> {
    probs
        .range(s + 1..e)
        .filter(|(o, _)| !taken.contains(*o))
        .fold(None, |best: Option<(usize, f64)>, (&o, &p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((o, p)),
        })
        .map(|(o, _)| o)
}

/// Score, cut, and re-score every block at each further level. Returns the
/// partition after each level; the last entry is the final segmentation.
///
/// After thresholding, a block with more than `max_candidates_per_block`
/// internal candidates is split at its most probable candidate until none
/// is too large, and while there are fewer than `min_blocks` blocks the most
/// probable remaining candidate is accepted.
pub fn recursive_segment(
    seq: &CandidateSequence,
    scorer: &dyn CutScorer,
    cfg: &SegmenterConfig,
) -> Result<Vec<BlockPartition>> {
    cfg.validate()?;
    let len = seq.text().len();
    let offsets = seq.offsets();
    let internal_in = |s: usize, e: usize| offsets.iter().filter(|&&o| o > s && o < e).count();

    let mut bounds = BTreeSet::new();
    let mut levels = Vec::with_capacity(cfg.recursion_depth);
    for &threshold in &cfg.thresholds {
        let mut probs = BTreeMap::new();
        let mut next = bounds.clone();
        for (s, e) in blocks_of(len, &bounds) {
            let sub = seq.sub(s, e)?;
            let p = scorer.score(&sub)?;
            check_probs(&sub, &p)?;
            for (&o, &pi) in sub.internal_offsets().iter().zip(&p) {
                probs.insert(s + o, pi);
                if pi >= threshold {
                    next.insert(s + o);
                }
            }
        }
        while let Some((s, e)) = blocks_of(len, &next)
            .into_iter()
            .find(|&(s, e)| internal_in(s, e) > cfg.max_candidates_per_block)
        {
            let o = best_inside(&probs, s, e, &next).expect("oversized block has candidates");
            next.insert(o);
        }
        while next.len() + 1 < cfg.min_blocks {
            match best_inside(&probs, 0, len, &next) {
                Some(o) => next.insert(o),
                None => break,
            };
        }
        bounds = next;
        levels.push(BlockPartition::from_boundaries(len, &bounds.iter().copied().collect::<Vec<_>>())?);
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{encode_text, insert_candidates, FixedScorer, HashScorer, InsertionRule};

    fn words(n: usize) -> CandidateSequence {
        let text = (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        insert_candidates(&encode_text(&text), InsertionRule::Space, 257).unwrap()
    }

    #[test]
    fn decide_examples() {
        let s = words(4);
        assert_eq!(s.num_internal(), 3);
        let p = decide_cuts(&s, &[0.9, 0.1, 0.8], 0.5).unwrap();
        assert_eq!(p.parallel_degree(), 3);
        assert_eq!(p.boundaries(), vec![s.offsets()[1], s.offsets()[3]]);
        assert_eq!(decide_cuts(&s, &[0.1, 0.2, 0.3], 0.5).unwrap().parallel_degree(), 1);
        assert!(decide_cuts(&s, &[0.1, 0.2], 0.5).is_err());
        assert!(decide_cuts(&s, &[0.1, 0.2, 0.3], 1.0).is_err());
    }

    #[test]
    fn depth_one_is_single_decision() {
        let s = words(30);
        let scorer = HashScorer { seed: 4 };
        let levels = recursive_segment(&s, &scorer, &SegmenterConfig::default()).unwrap();
        let direct = decide_cuts(&s, &scorer.score(&s).unwrap(), 0.5).unwrap();
        assert_eq!(levels, vec![direct]);
    }

    #[test]
    fn levels_refine() {
        let s = words(60);
        let cfg = SegmenterConfig::with_thresholds(vec![0.8, 0.9]);
        let levels = recursive_segment(&s, &HashScorer { seed: 2 }, &cfg).unwrap();
        let a: BTreeSet<_> = levels[0].boundaries().into_iter().collect();
        let b: BTreeSet<_> = levels[1].boundaries().into_iter().collect();
        assert!(a.is_subset(&b));
    }

    #[test]
    fn candidate_cap_splits_at_max() {
        let s = words(6);
        let mut probs = vec![0.1; 5];
        probs[3] = 0.4;
        let scorer = FixedScorer::for_sequence(&s, &probs);
        let cfg = SegmenterConfig {
            max_candidates_per_block: 3,
            ..SegmenterConfig::default()
        };
        let out = recursive_segment(&s, &scorer, &cfg).unwrap();
        assert_eq!(out[0].boundaries(), vec![s.offsets()[4]]);
    }

    #[test]
    fn min_blocks_takes_most_probable() {
        let s = words(6);
        let scorer = FixedScorer::for_sequence(&s, &[0.1, 0.3, 0.2, 0.3, 0.0]);
        let cfg = SegmenterConfig {
            min_blocks: 3,
            ..SegmenterConfig::default()
        };
        let out = recursive_segment(&s, &scorer, &cfg).unwrap();
        assert_eq!(out[0].boundaries(), vec![s.offsets()[2], s.offsets()[4]]);
    }

    #[test]
    fn config_validation() {
        assert!(SegmenterConfig::with_thresholds(vec![0.5, 0.3]).validate().is_err());
        assert!(SegmenterConfig::with_thresholds(vec![0.0]).validate().is_err());
        let bad = SegmenterConfig {
            recursion_depth: 2,
            ..SegmenterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
