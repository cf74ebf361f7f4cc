//! Analytic cache-hit and prefill-cost models.
//!
//! A prompt is `[system prompt, retrieved docs..., query]`. Two serving
//! strategies are compared:
//!
//! - **prefix cache**: a request reuses the longest common token prefix with
//!   the most recently cached monolithic prompt.
//! - **block cache**: the system prompt and every document are independent
//!   blocks; a block hits iff it was encoded before, wherever it appears.
//!
//! The query is never served from cache in either mode.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::kv_cache::CacheStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub docs: Vec<String>,
    pub query_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheScenario {
    pub system_prompt_len: u64,
    pub docs: BTreeMap<String, u64>,
    pub requests: Vec<Request>,
}

/// Whether the cache starts empty or with every pool element already seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warmth {
    Cold,
    /// Block cache: system prompt and every document pre-encoded. Prefix
    /// cache: the previous prompt shares only the system prompt.
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    Prefix,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub mode: CacheMode,
    pub warmth: Warmth,
    pub per_request: Vec<CacheStats>,
    pub total: CacheStats,
    pub hit_rate: f64,
}

impl CacheScenario {
    pub fn validate(&self) -> Result<()> {
        if self.system_prompt_len == 0 {
            return Err(contract("system prompt length must be positive"));
        }
        for (id, &len) in &self.docs {
            if len == 0 {
                return Err(contract(format!("document {id:?} has zero length")));
            }
        }
        for (r, req) in self.requests.iter().enumerate() {
            if req.query_len == 0 {
                return Err(contract(format!("request {r} has zero-length query")));
            }
            if let Some(bad) = req.docs.iter().find(|d| !self.docs.contains_key(*d)) {
                return Err(contract(format!("request {r} retrieves unknown document {bad:?}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn prompt_len(&self, req: &Request) -> u64 {
        self.system_prompt_len + req.docs.iter().map(|d| self.docs[d]).sum::<u64>() + req.query_len
    }

    /// Coding-agent setting: 15k system prompt, `files` files of 10k tokens,
    /// `per_request` files retrieved per query of 200 tokens. Request `r`
    /// retrieves a rotating window so consecutive prompts never share their
    /// first file.
    pub fn coding_agent(files: usize, per_request: usize, requests: usize) -> Self {
        let docs = (0..files).map(|i| (format!("file{i:02}"), 10_000)).collect();
        let requests = (0..requests)
            .map(|r| Request {
                docs: (0..per_request)
                    .map(|k| format!("file{:02}", (r * per_request + k) % files))
                    .collect(),
                query_len: 200,
            })
            .collect();
        Self {
            system_prompt_len: 15_000,
            docs,
            requests,
        }
    }

    /// Research-agent trace: papers A, B, C of 20k tokens each. Turn 1 only
    /// searches; turns 2-4 browse one paper each; turns 5-7 revisit them;
    /// turn 8 composes the report from the conversation alone.
    pub fn research_agent(system_prompt_len: u64, query_len: u64) -> Self {
        let docs = ["A", "B", "C"].iter().map(|d| (d.to_string(), 20_000)).collect();
        let turns: [&[&str]; 8] = [&[], &["A"], &["B"], &["C"], &["A"], &["B", "C"], &["A", "B", "C"], &[]];
        let requests = turns
            .iter()
            .map(|t| Request {
                docs: t.iter().map(|d| d.to_string()).collect(),
                query_len,
            })
            .collect();
        Self {
            system_prompt_len,
            docs,
            requests,
        }
    }
}

fn finish(mode: CacheMode, warmth: Warmth, per_request: Vec<CacheStats>) -> SimReport {
    let mut total = CacheStats::default();
    for s in &per_request {
        total.merge(s);
    }
    SimReport {
        mode,
        warmth,
        hit_rate: total.hit_rate(),
        per_request,
        total,
    }
}

fn stats(hit_tokens: u64, miss_tokens: u64, hits: u64, misses: u64) -> CacheStats {
    CacheStats {
        hits,
        misses,
        hit_tokens,
        miss_tokens,
    }
}

pub fn simulate_prefix_cache(s: &CacheScenario, warmth: Warmth) -> Result<SimReport> {
    s.validate()?;
    // `None` marks an unknown document that matches nothing.
    let mut previous: Option<Vec<Option<&str>>> = match warmth {
        Warmth::Cold => None,
        Warmth::Steady => Some(vec![None]),
    };
    let mut out = Vec::with_capacity(s.requests.len());
    for req in &s.requests {
        let total = s.prompt_len(req);
        let mut hit = 0;
        if let Some(prev) = &previous {
            hit = s.system_prompt_len;
            for (i, d) in req.docs.iter().enumerate() {
                if prev.get(i).copied().flatten() != Some(d.as_str()) {
                    break;
                }
                hit += s.docs[d];
            }
        }
        out.push(stats(hit, total - hit, u64::from(hit > 0), 1));
        previous = Some(req.docs.iter().map(|d| Some(d.as_str())).collect());
    }
    Ok(finish(CacheMode::Prefix, warmth, out))
}

pub fn simulate_block_cache(s: &CacheScenario, warmth: Warmth) -> Result<SimReport> {
    s.validate()?;
    let mut seen: HashSet<&str> = HashSet::new();
    let mut system_seen = warmth == Warmth::Steady;
    if warmth == Warmth::Steady {
        seen.extend(s.docs.keys().map(String::as_str));
    }
    let mut out = Vec::with_capacity(s.requests.len());
    for req in &s.requests {
        let mut st = CacheStats::default();
        let mut account = |len: u64, hit: bool| {
            if hit {
                st.hits += 1;
                st.hit_tokens += len;
            } else {
                st.misses += 1;
                st.miss_tokens += len;
            }
        };
        account(s.system_prompt_len, system_seen);
        system_seen = true;
        for d in &req.docs {
            account(s.docs[d], !seen.insert(d.as_str()));
        }
        account(req.query_len, false);
        out.push(st);
    }
    Ok(finish(CacheMode::Block, warmth, out))
}

pub fn simulate(s: &CacheScenario, mode: CacheMode, warmth: Warmth) -> Result<SimReport> {
    match mode {
        CacheMode::Prefix => simulate_prefix_cache(s, warmth),
        CacheMode::Block => simulate_block_cache(s, warmth),
    }
}

/// Attention-pair counts for one prefill. The TTFT proxy is the pair count
/// times a per-pair constant; MLP work is identical in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostModel {
    pub total_len: u64,
    pub full_pairs: u64,
    pub block_pairs: u64,
    pub reduction: u64,
    pub relative_reduction: f64,
}

impl CostModel {
    pub fn ttft_proxy(&self, per_pair: f64) -> (f64, f64) {
        (self.full_pairs as f64 * per_pair, self.block_pairs as f64 * per_pair)
    }

    pub fn ratio(&self) -> f64 {
        self.block_pairs as f64 / self.full_pairs as f64
    }
}

fn tri(n: u64) -> u64 {
    n * (n + 1) / 2
}

/// `context_blocks` are the non-final block lengths; the query is the final
/// block and attends to the whole context.
pub fn prefill_cost(context_blocks: &[u64], query_len: u64) -> Result<CostModel> {
    if query_len == 0 {
        return Err(contract("query block must be non-empty"));
    }
    if context_blocks.contains(&0) {
        return Err(contract("context blocks must be non-empty"));
    }
    let c: u64 = context_blocks.iter().sum();
    let total_len = c + query_len;
    let full_pairs = tri(total_len);
    let block_pairs = context_blocks.iter().map(|&b| tri(b)).sum::<u64>() + query_len * c + tri(query_len);
    let reduction = full_pairs - block_pairs;
    Ok(CostModel {
        total_len,
        full_pairs,
        block_pairs,
        reduction,
        relative_reduction: reduction as f64 / full_pairs as f64,
    })
}

/// `blocks` equal context blocks; the remainder goes to the last one.
pub fn even_blocks(context_len: u64, blocks: u64) -> Vec<u64> {
    if blocks == 0 || context_len == 0 {
        return Vec::new();
    }
    let base = context_len / blocks;
    let mut v = vec![base; blocks as usize];
    *v.last_mut().expect("non-empty") += context_len - base * blocks;
    v.retain(|&b| b > 0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{build_block_mask, build_full_causal, BlockPartition};

    #[test]
    fn coding_agent_rates() {
        let s = CacheScenario::coding_agent(30, 10, 3);
        let p = simulate_prefix_cache(&s, Warmth::Steady).unwrap();
        let b = simulate_block_cache(&s, Warmth::Steady).unwrap();
        assert!((p.hit_rate - 15_000.0 / 115_200.0).abs() < 1e-12);
        assert!((b.hit_rate - 115_000.0 / 115_200.0).abs() < 1e-12);
    }

    #[test]
    fn cold_first_request_misses() {
        let s = CacheScenario::coding_agent(30, 10, 1);
        assert_eq!(simulate_prefix_cache(&s, Warmth::Cold).unwrap().hit_rate, 0.0);
        assert_eq!(simulate_block_cache(&s, Warmth::Cold).unwrap().hit_rate, 0.0);
    }

    #[test]
    fn identical_requests_prefix_hits_all_but_query() {
        let mut s = CacheScenario::coding_agent(30, 10, 1);
        s.requests.push(s.requests[0].clone());
        let p = simulate_prefix_cache(&s, Warmth::Cold).unwrap();
        assert_eq!(p.per_request[1].hit_tokens, 115_000);
        assert_eq!(p.per_request[1].miss_tokens, 200);
    }

    #[test]
    fn research_trace_extra_hits() {
        let s = CacheScenario::research_agent(2_000, 300);
        let p = simulate_prefix_cache(&s, Warmth::Cold).unwrap();
        let b = simulate_block_cache(&s, Warmth::Cold).unwrap();
        assert_eq!(b.total.hit_tokens - p.total.hit_tokens, 120_000);
        let extra: Vec<u64> = (0..8).map(|t| b.per_request[t].hit_tokens - p.per_request[t].hit_tokens).collect();
        assert_eq!(extra, vec![0, 0, 0, 0, 20_000, 40_000, 60_000, 0]);
    }

    #[test]
    fn permuted_order_same_block_hits() {
        let mut s = CacheScenario::coding_agent(5, 3, 1);
        let mut perm = s.requests[0].clone();
        perm.docs.reverse();
        s.requests.push(perm);
        let b = simulate_block_cache(&s, Warmth::Cold).unwrap();
        assert_eq!(b.per_request[1].hit_tokens, 15_000 + 30_000);
        let p = simulate_prefix_cache(&s, Warmth::Cold).unwrap();
        assert_eq!(p.per_request[1].hit_tokens, 15_000);
    }

    #[test]
    fn unknown_doc_rejected() {
        let mut s = CacheScenario::coding_agent(3, 1, 1);
        s.requests[0].docs.push("nope".into());
        assert!(simulate_block_cache(&s, Warmth::Cold).is_err());
    }

    #[test]
    fn pair_counts_match_masks() {
        let c = prefill_cost(&[4, 4], 4).unwrap();
        assert_eq!((c.full_pairs, c.block_pairs), (78, 62));
        let part = BlockPartition::from_lengths(&[4, 4, 4]).unwrap();
        assert_eq!(build_block_mask(&part).allowed_pairs(), c.block_pairs);
        assert_eq!(build_full_causal(12).unwrap().allowed_pairs(), c.full_pairs);
        assert_eq!(prefill_cost(&[7], 3).unwrap().reduction, 0);
        assert_eq!(prefill_cost(&[], 3).unwrap().reduction, 0);
    }

    #[test]
    fn reduction_grows_with_context() {
        let r: Vec<u64> = [8_192u64, 16_384, 32_768, 65_536]
            .iter()
            .map(|&l| prefill_cost(&even_blocks(l, 8), 200).unwrap().reduction)
            .collect();
        assert!(r.windows(2).all(|w| w[1] > 2 * w[0]));
        let rel8 = prefill_cost(&even_blocks(8_192, 8), 200).unwrap().relative_reduction;
        let rel64 = prefill_cost(&even_blocks(65_536, 8), 200).unwrap().relative_reduction;
        assert!(rel64 > rel8);
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = CacheScenario::research_agent(10, 5);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(CacheScenario::from_json(&text).unwrap(), s);
        assert!(CacheScenario::from_json("{\"system_prompt_len\": 0, \"docs\": {}, \"requests\": []}").is_err());
    }
}
