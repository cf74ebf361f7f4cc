//! Attention masks for full, block and block-dropout attention.
//!
//! Every mask produced here has the same shape: row `i` may attend to the
//! contiguous key range `row_start(i)..=i`. That covers full causal attention
//! (`row_start = 0`), block attention (`row_start` = start of the row's block,
//! except in the final block) and the mixed dropout mask, and it lets the
//! forward pass skip disallowed pairs entirely.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Ordered, contiguous, non-overlapping, non-empty token ranges covering
/// `[0, n)`. The last range is the query block that attends to everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    ranges: Vec<Range<usize>>,
}

impl BlockPartition {
    pub fn new(ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(contract("partition needs at least one block"));
        }
        let mut expected = 0;
        for (idx, r) in ranges.iter().enumerate() {
            if r.start != expected {
                return Err(contract(format!(
                    "block {idx} starts at {} but previous block ended at {expected}",
                    r.start
                )));
            }
            if r.end <= r.start {
                return Err(contract(format!("block {idx} is empty")));
            }
            expected = r.end;
        }
        Ok(Self { ranges })
    }

    /// One block per length, laid out back to back.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut start = 0;
        let ranges = lengths
            .iter()
            .map(|&len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Self::new(ranges)
    }

    /// Blocks split at the given interior boundaries (sorted, in `1..n`).
    pub fn from_boundaries(n: usize, boundaries: &[usize]) -> Result<Self> {
        let mut ranges = Vec::with_capacity(boundaries.len() + 1);
        let mut start = 0;
        for &b in boundaries {
            ranges.push(start..b);
            start = b;
        }
        ranges.push(start..n);
        Self::new(ranges)
    }

    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![0..n])
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    /// Number of blocks.
    pub fn parallel_degree(&self) -> usize {
        self.ranges.len()
    }

    /// Total token count `n`.
    pub fn len(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn final_index(&self) -> usize {
        self.ranges.len() - 1
    }

    /// Index of the block containing token `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.ranges.partition_point(|r| r.end <= i)
    }

    /// Interior boundaries: the start of every block except the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.ranges.iter().skip(1).map(|r| r.start).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
}

/// Boolean attention pattern over `n × n` (query, key) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    row_start: Vec<usize>,
}

impl AttentionMask {
    pub fn n(&self) -> usize {
        self.row_start.len()
    }

    /// First key row `i` may attend to; keys `row_start(i)..=i` are allowed.
    pub fn row_start(&self, i: usize) -> usize {
        self.row_start[i]
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        j <= i && j >= self.row_start[i]
    }

    pub fn allowed_pairs(&self) -> u64 {
        self.row_start
            .iter()
            .enumerate()
            .map(|(i, &s)| (i + 1 - s) as u64)
            .sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.allowed(i, j)).collect())
            .collect()
    }

    /// Build from a dense matrix. Only causal masks whose rows are a
    /// contiguous range ending on the diagonal are representable.
    pub fn from_dense(dense: &[Vec<bool>]) -> Result<Self> {
        let n = dense.len();
        if n == 0 {
            return Err(contract("mask must have at least one row"));
        }
        let mut row_start = Vec::with_capacity(n);
        for (i, row) in dense.iter().enumerate() {
            if row.len() != n {
                return Err(contract(format!("mask row {i} has length {} != {n}", row.len())));
            }
            if row[i + 1..].iter().any(|&a| a) {
                return Err(contract(format!("mask row {i} allows a future key")));
            }
            if !row[i] {
                return Err(contract(format!("mask row {i} must allow its own position")));
            }
            let start = row[..=i].iter().position(|&a| a).unwrap_or(i);
            if !row[start..=i].iter().all(|&a| a) {
                return Err(contract(format!("mask row {i} is not a contiguous range")));
            }
            row_start.push(start);
        }
        Ok(Self { row_start })
    }

    /// `#` for allowed, `.` for masked, one line per query row.
    pub fn render(&self) -> String {
        let n = self.n();
        let mut out = String::with_capacity(n * (n + 1));
        for i in 0..n {
            for j in 0..n {
                out.push(if self.allowed(i, j) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for AttentionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Set of corrupted (block-locally encoded) block indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutPlan {
    corrupted: BTreeSet<usize>,
    rate: f64,
}

impl DropoutPlan {
    pub fn new(corrupted: impl IntoIterator<Item = usize>, rate: f64) -> Self {
        Self {
            corrupted: corrupted.into_iter().collect(),
            rate,
        }
    }

    pub fn empty() -> Self {
        Self::new([], 0.0)
    }

    /// Every non-final block corrupted.
    pub fn all_context(partition: &BlockPartition) -> Self {
        Self::new(0..partition.final_index(), 1.0)
    }

    pub fn corrupted(&self) -> &BTreeSet<usize> {
        &self.corrupted
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn is_corrupted(&self, block: usize) -> bool {
        self.corrupted.contains(&block)
    }

    pub fn validate(&self, partition: &BlockPartition) -> Result<()> {
        if self.corrupted.contains(&partition.final_index()) {
            return Err(contract("dropout plan must not corrupt the final block"));
        }
        if let Some(&max) = self.corrupted.iter().next_back() {
            if max >= partition.parallel_degree() {
                return Err(contract(format!("corrupted block {max} does not exist")));
            }
        }
        Ok(())
    }

    /// Token positions that fall inside corrupted blocks.
    pub fn corrupted_tokens(&self, partition: &BlockPartition) -> Vec<bool> {
        let mut out = vec![false; partition.len()];
        for &b in &self.corrupted {
            for t in partition.ranges()[b].clone() {
                out[t] = true;
            }
        }
        out
    }
}

pub fn build_full_causal(n: usize) -> Result<AttentionMask> {
    if n == 0 {
        return Err(contract("mask length must be at least 1"));
    }
    Ok(AttentionMask { row_start: vec![0; n] })
}

/// Non-final blocks see only themselves; the final block sees everything
/// before it.
pub fn build_block_mask(partition: &BlockPartition) -> AttentionMask {
    let last = partition.final_index();
    let mut row_start = Vec::with_capacity(partition.len());
    for (b, r) in partition.ranges().iter().enumerate() {
        let start = if b == last { 0 } else { r.start };
        row_start.extend(std::iter::repeat_n(start, r.len()));
    }
    AttentionMask { row_start }
}

/// Corrupted blocks are block-local; every other block, including the
/// final one, attends causally over all preceding tokens.
pub fn build_dropout_mask(partition: &BlockPartition, plan: &DropoutPlan) -> Result<AttentionMask> {
    plan.validate(partition)?;
    let mut row_start = Vec::with_capacity(partition.len());
    for (b, r) in partition.ranges().iter().enumerate() {
        let start = if plan.is_corrupted(b) { r.start } else { 0 };
        row_start.extend(std::iter::repeat_n(start, r.len()));
    }
    Ok(AttentionMask { row_start })
}

/// Corrupt each non-final block independently with probability `rate`.
pub fn sample_dropout_plan<R: Rng + ?Sized>(
    partition: &BlockPartition,
    rate: f64,
    rng: &mut R,
) -> Result<DropoutPlan> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(contract(format!("dropout rate {rate} outside [0, 1]")));
    }
    let corrupted: Vec<usize> = (0..partition.final_index())
        .filter(|_| rng.random::<f64>() < rate)
        .collect();
    Ok(DropoutPlan::new(corrupted, rate))
}

/// Seeded convenience wrapper around [`sample_dropout_plan`].
pub fn sample_dropout_plan_seeded(
    partition: &BlockPartition,
    rate: f64,
    seed: u64,
) -> Result<DropoutPlan> {
    let mut rng = crate::rng::stream(seed, "dropout");
    sample_dropout_plan(partition, rate, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(mask: &AttentionMask) -> Vec<(usize, usize)> {
        let n = mask.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if mask.allowed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn full_causal_counts() {
        assert_eq!(pairs(&build_full_causal(1).unwrap()), vec![(0, 0)]);
        assert_eq!(build_full_causal(3).unwrap().allowed_pairs(), 6);
        assert_eq!(build_full_causal(64).unwrap().allowed_pairs(), 2080);
        assert!(matches!(build_full_causal(0), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn block_mask_small_enumeration() {
        let p = BlockPartition::from_lengths(&[2, 2]).unwrap();
        let m = build_block_mask(&p);
        let expected = vec![
            (0, 0),
            (1, 0),
            (1, 1),
            (2, 0),
            (2, 1),
            (2, 2),
            (3, 0),
            (3, 1),
            (3, 2),
            (3, 3),
        ];
        assert_eq!(pairs(&m), expected);
    }

    #[test]
    fn block_mask_three_blocks_of_four() {
        let p = BlockPartition::from_lengths(&[4, 4, 4]).unwrap();
        assert_eq!(build_block_mask(&p).allowed_pairs(), 62);
        assert_eq!(build_full_causal(12).unwrap().allowed_pairs(), 78);
    }

    #[test]
    fn single_block_is_full_causal() {
        let p = BlockPartition::single(9).unwrap();
        assert_eq!(build_block_mask(&p), build_full_causal(9).unwrap());
    }

    #[test]
    fn dropout_mask_cases() {
        let p = BlockPartition::from_lengths(&[4, 4, 4]).unwrap();
        let empty = build_dropout_mask(&p, &DropoutPlan::empty()).unwrap();
        assert_eq!(empty, build_full_causal(12).unwrap());

        let all = build_dropout_mask(&p, &DropoutPlan::all_context(&p)).unwrap();
        assert_eq!(all, build_block_mask(&p));

        let mid = build_dropout_mask(&p, &DropoutPlan::new([1], 0.6)).unwrap();
        assert_eq!(mid.allowed_pairs(), 62);
        let rows_4_7: usize = (4..8).map(|i| (0..12).filter(|&j| mid.allowed(i, j)).count()).sum();
        assert_eq!(rows_4_7, 10);
        // block 0 is already local, so isolating block 1 alone reproduces the block mask
        assert_eq!(pairs(&mid), pairs(&build_block_mask(&p)));

        let q = BlockPartition::from_lengths(&[4, 4, 4, 4]).unwrap();
        let m2 = build_dropout_mask(&q, &DropoutPlan::new([2], 0.6)).unwrap();
        assert_eq!(m2.allowed_pairs(), 10 + 26 + 10 + 58);
        assert_ne!(pairs(&m2), pairs(&build_block_mask(&q)));
        assert!(m2.allowed(7, 0) && !m2.allowed(8, 7) && m2.allowed(12, 0));

        let bad = DropoutPlan::new([2], 0.6);
        assert!(matches!(build_dropout_mask(&p, &bad), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn dropout_sampling_extremes() {
        let p = BlockPartition::from_lengths(&[3; 6]).unwrap();
        for seed in 0..20 {
            assert!(sample_dropout_plan_seeded(&p, 0.0, seed).unwrap().corrupted().is_empty());
            let all = sample_dropout_plan_seeded(&p, 1.0, seed).unwrap();
            assert_eq!(all.corrupted().len(), 5);
            assert!(!all.is_corrupted(5));
        }
        let a = sample_dropout_plan_seeded(&p, 0.5, 3).unwrap();
        let b = sample_dropout_plan_seeded(&p, 0.5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_rate_monte_carlo() {
        // 10 non-final blocks at rate 0.6: Bernoulli sum has mean 6.
        let p = BlockPartition::from_lengths(&[1; 11]).unwrap();
        let total: usize = (0..10_000u64)
            .map(|seed| sample_dropout_plan_seeded(&p, 0.6, seed).unwrap().corrupted().len())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((5.8..=6.2).contains(&mean), "mean {mean}");
    }

    #[test]
    fn partition_validation() {
        assert!(BlockPartition::new(vec![]).is_err());
        assert!(BlockPartition::new(vec![0..2, 3..4]).is_err());
        assert!(BlockPartition::new(vec![0..2, 2..2]).is_err());
        let p = BlockPartition::from_boundaries(10, &[3, 7]).unwrap();
        assert_eq!(p.lengths(), vec![3, 4, 3]);
        assert_eq!(p.block_of(0), 0);
        assert_eq!(p.block_of(3), 1);
        assert_eq!(p.block_of(9), 2);
        assert_eq!(p.boundaries(), vec![3, 7]);
    }

    #[test]
    fn render_golden() {
        let p = BlockPartition::from_lengths(&[2, 2]).unwrap();
        let grid = build_block_mask(&p).render();
        assert_eq!(grid, "#...\n##..\n###.\n####\n");
        let round = AttentionMask::from_dense(&build_block_mask(&p).to_dense()).unwrap();
        assert_eq!(round, build_block_mask(&p));
    }

    #[test]
    fn from_dense_rejects_non_causal() {
        let dense = vec![vec![true, true], vec![true, true]];
        assert!(AttentionMask::from_dense(&dense).is_err());
        let gap = vec![
            vec![true, false, false],
            vec![true, true, false],
            vec![true, false, true],
        ];
        assert!(AttentionMask::from_dense(&gap).is_err());
    }
}
