use blockattn::bench::{bench_model, measure_prefill};
use blockattn::cache_sim::{simulate, CacheMode, CacheScenario, Warmth};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::run::{finish, Classify, CmdResult, Failure, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Prefix,
    Block,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmthArg {
    Cold,
    Steady,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `coding-agent`, `research-agent` or a scenario JSON file.
    #[arg(long, default_value = "coding-agent")]
    scenario: String,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "both")]
    warmth: WarmthArg,
}

fn load_scenario(name: &str) -> CmdResult<CacheScenario> {
    match name {
        "coding-agent" => Ok(CacheScenario::coding_agent(30, 10, 3)),
        "research-agent" => Ok(CacheScenario::research_agent(2000, 300)),
        path => {
            let text = std::fs::read_to_string(path).usage(&format!("cannot read scenario {path}"))?;
            CacheScenario::from_json(&text).data("bad scenario")
        }
    }
}

pub fn simulate_cache(run: &Run, args: &SimulateArgs) -> CmdResult<()> {
    let scenario = load_scenario(&args.scenario)?;
    let modes = match args.mode {
        ModeArg::Prefix => vec![CacheMode::Prefix],
        ModeArg::Block => vec![CacheMode::Block],
        ModeArg::Both => vec![CacheMode::Prefix, CacheMode::Block],
    };
    let warmths = match args.warmth {
        WarmthArg::Cold => vec![Warmth::Cold],
        WarmthArg::Steady => vec![Warmth::Steady],
        WarmthArg::Both => vec![Warmth::Cold, Warmth::Steady],
    };
    let mut reports = Vec::new();
    for &warmth in &warmths {
        for &mode in &modes {
            let r = simulate(&scenario, mode, warmth).data("simulation failed")?;
            log::info!("{mode:?}/{warmth:?}: hit rate {:.4}", r.hit_rate);
            reports.push(r);
        }
    }
    let manifest = run.manifest("simulate-cache", run.seed_or(0)).resolved(json!({
        "scenario": args.scenario,
        "mode": args.mode,
        "warmth": args.warmth,
        "resolved_scenario": scenario,
    }));
    finish(run, manifest, json!({ "scenario": args.scenario, "reports": reports }))
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Context lengths in tokens, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
    lengths: Vec<usize>,
    /// Context blocks per prompt.
    #[arg(long, default_value_t = 8)]
    blocks: usize,
    #[arg(long, default_value_t = 64)]
    query_len: usize,
    /// Timed runs per mode; the fastest is kept.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Seconds per attention pair for the TTFT proxy.
    #[arg(long, default_value_t = 1e-9)]
    per_pair: f64,
}

pub fn bench(run: &Run, args: &BenchArgs) -> CmdResult<()> {
    if args.lengths.is_empty() || args.lengths.contains(&0) || args.blocks == 0 || args.query_len == 0 {
        return Err(Failure::Usage("lengths, blocks and query length must be positive".into()));
    }
    let seed = run.seed_or(0);
    let longest = args.lengths.iter().max().expect("non-empty") + args.query_len;
    let model = bench_model(longest, seed).usage("bad bench model")?;
    let mut rows = Vec::new();
    for &len in &args.lengths {
        let row = measure_prefill(&model, len, args.blocks, args.query_len, args.repeats, seed).data("benchmark failed")?;
        let (proxy_full, proxy_block) = row.cost.ttft_proxy(args.per_pair);
        log::info!("context {len}: full {:.4}s, block {:.4}s", row.full_secs, row.block_secs);
        rows.push(json!({
            "row": row,
            "ttft_proxy_full": proxy_full,
            "ttft_proxy_block": proxy_block,
            "measured_reduction_secs": row.full_secs - row.block_secs,
        }));
    }
    let manifest = run.manifest("bench", seed).resolved(json!({
        "lengths": args.lengths,
        "blocks": args.blocks,
        "query_len": args.query_len,
        "repeats": args.repeats,
        "per_pair": args.per_pair,
        "model": model.config(),
    }));
    finish(run, manifest, json!({ "rows": rows }))
}
