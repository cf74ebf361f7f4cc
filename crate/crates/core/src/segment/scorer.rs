use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

use super::heuristic::even_indices;
use super::CandidateSequence;
use crate::error::Result;

/// Produces a cut probability for every internal candidate C_1..C_{n-1}.
pub trait CutScorer {
    fn score(&self, seq: &CandidateSequence) -> Result<Vec<f64>>;
}

/// p = 1 at `degree - 1` evenly spaced internal candidates.
#[derive(Debug, Clone, Copy)]
pub struct AverageScorer {
    pub degree: usize,
}

impl CutScorer for AverageScorer {
    fn score(&self, seq: &CandidateSequence) -> Result<Vec<f64>> {
        let m = seq.num_internal();
        let mut p = vec![0.0; m];
        for i in even_indices(m, self.degree.min(m + 1)) {
            p[i] = 1.0;
        }
        Ok(p)
    }
}

/// p = 1 at `degree - 1` uniformly drawn internal candidates. The draw depends
/// on the seed and on where the sequence sits in its document.
#[derive(Debug, Clone, Copy)]
pub struct RandomCandidateScorer {
    pub degree: usize,
    pub seed: u64,
}

impl CutScorer for RandomCandidateScorer {
    fn score(&self, seq: &CandidateSequence) -> Result<Vec<f64>> {
        let m = seq.num_internal();
        let k = self.degree.saturating_sub(1).min(m);
        let mut rng = crate::rng::stream(self.seed, &format!("random_candidate/{}", seq.base()));
        let mut p = vec![0.0; m];
        for i in sample(&mut rng, m, k) {
            p[i] = 1.0;
        }
        Ok(p)
    }
}

/// Uniform pseudo-random probabilities keyed by seed and sub-sequence
/// location, so re-scoring a block gives fresh values.
#[derive(Debug, Clone, Copy)]
pub struct HashScorer {
    pub seed: u64,
}

impl CutScorer for HashScorer {
    fn score(&self, seq: &CandidateSequence) -> Result<Vec<f64>> {
        let name = format!("hash/{}/{}", seq.base(), seq.text().len());
        let mut rng = crate::rng::stream(self.seed, &name);
        Ok((0..seq.num_internal()).map(|_| rng.random::<f64>()).collect())
    }
}

/// Fixed probabilities keyed by absolute text offset; unknown offsets get 0.
#[derive(Debug, Clone, Default)]
pub struct FixedScorer {
    pub by_offset: BTreeMap<usize, f64>,
}

impl FixedScorer {
    /// Probabilities in order of the internal candidates of `seq`.
    pub fn for_sequence(seq: &CandidateSequence, probs: &[f64]) -> Self {
        let by_offset = seq
            .internal_offsets()
            .iter()
            .zip(probs)
            .map(|(&o, &p)| (seq.base() + o, p))
            .collect();
        Self { by_offset }
    }
}

impl CutScorer for FixedScorer {
    fn score(&self, seq: &CandidateSequence) -> Result<Vec<f64>> {
        Ok(seq
            .internal_offsets()
            .iter()
            .map(|o| self.by_offset.get(&(seq.base() + o)).copied().unwrap_or(0.0))
            .collect())
    }
}
