//! Wall-clock prefill of the toy model: full causal attention over the whole
//! prompt versus independently encoded context blocks plus a query decode.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::Serialize;

use crate::cache_sim::{even_blocks, prefill_cost, CostModel};
use crate::error::{contract, Result};
use crate::mask::build_full_causal;
use crate::model::{ModelConfig, ToyModel};
use crate::TokenId;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub context_len: usize,
    pub blocks: usize,
    pub query_len: usize,
    pub cost: CostModel,
    /// Fastest run of each mode.
    pub full_secs: f64,
    pub block_secs: f64,
    /// Median over interleaved runs of block time / full time.
    pub measured_ratio: f64,
    /// Pair-count ratio from [`prefill_cost`].
    pub predicted_ratio: f64,
}

/// One layer, several very narrow heads and a tiny vocabulary, so attention pairs
/// dominate the runtime the way they do at long context in real models.
pub fn bench_model(max_seq_len: usize, seed: u64) -> Result<ToyModel> {
    ToyModel::new(ModelConfig::new(1, 4, 2, 16, max_seq_len, seed))
}

const MIN_BUDGET: Duration = Duration::from_secs(2);
const MAX_REPEATS: usize = 64;

/// Time both prefill modes on random tokens over at least `repeats`
/// interleaved runs. The context is split into `blocks` even blocks.
pub fn measure_prefill(
    model: &ToyModel,
    context_len: usize,
    blocks: usize,
    query_len: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchRow> {
    if context_len == 0 || blocks == 0 || query_len == 0 {
        return Err(contract("context, block count and query must be positive"));
    }
    let lengths: Vec<usize> = even_blocks(context_len as u64, blocks as u64).into_iter().map(|b| b as usize).collect();
    let cost = prefill_cost(&lengths.iter().map(|&b| b as u64).collect::<Vec<_>>(), query_len as u64)?;
    let vocab = model.config().content_vocab() as TokenId;
    let mut rng = crate::rng::stream(seed, &format!("bench/{context_len}"));
    let tokens: Vec<TokenId> = (0..context_len + query_len).map(|_| rng.random_range(0..vocab)).collect();
    let (context, query) = tokens.split_at(context_len);

    let full_mask = build_full_causal(tokens.len())?;
    let run_block = || -> Result<()> {
        let mut encoded = Vec::with_capacity(lengths.len());
        let mut start = 0;
        for &len in &lengths {
            encoded.push(model.encode_block(&context[start..start + len], 0)?);
            start += len;
        }
        let refs: Vec<_> = encoded.iter().collect();
        model.assemble_and_decode(&refs, query).map(drop)
    };
    // Interleave the two modes so a slow stretch on a shared machine hits
    // both halves of a pair; short contexts repeat until a small time
    // budget is spent.
    let (mut full, mut block) = (Duration::MAX, Duration::MAX);
    let mut ratios = Vec::new();
    let started = Instant::now();
    while ratios.len() < repeats.max(1) || (started.elapsed() < MIN_BUDGET && ratios.len() < MAX_REPEATS) {
        let t = Instant::now();
        model.forward_seq(&tokens, &full_mask)?;
        let f = t.elapsed();
        let t = Instant::now();
        run_block()?;
        let b = t.elapsed();
        full = full.min(f);
        block = block.min(b);
        ratios.push(b.as_secs_f64() / f.as_secs_f64());
    }
    ratios.sort_by(f64::total_cmp);
    let (full_secs, block_secs) = (full.as_secs_f64(), block.as_secs_f64());
    Ok(BenchRow {
        context_len,
        blocks: lengths.len(),
        query_len,
        cost,
        full_secs,
        block_secs,
        measured_ratio: ratios[ratios.len() / 2],
        predicted_ratio: cost.ratio(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_reports_consistent_costs() {
        let m = bench_model(128, 1).unwrap();
        let row = measure_prefill(&m, 96, 4, 8, 1, 0).unwrap();
        assert_eq!(row.cost.total_len, 104);
        assert_eq!(row.cost.full_pairs, 104 * 105 / 2);
        assert!(row.full_secs > 0.0 && row.block_secs > 0.0);
        assert!(row.predicted_ratio < 1.0);
    }

    #[test]
    fn rejects_empty_query() {
        let m = bench_model(64, 1).unwrap();
        assert!(measure_prefill(&m, 32, 2, 0, 1, 0).is_err());
    }
}
