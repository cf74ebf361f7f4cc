use std::collections::BTreeMap;

use blockattn::cache_sim::{prefill_cost, simulate, CacheMode, CacheScenario, Request, Warmth};
use blockattn::distill::{insert_sink_tokens, strip_sink_tokens, token_weights, SinkLayout};
use blockattn::mask::{build_block_mask, build_dropout_mask, BlockPartition, DropoutPlan};
use blockattn::model::{ModelConfig, ToyModel};
use blockattn::segment::{decide_cuts, encode_text, insert_candidates, CandidateSequence, InsertionRule};
use proptest::prelude::*;

fn partition() -> impl Strategy<Value = BlockPartition> {
    prop::collection::vec(1usize..6, 1..6).prop_map(|l| BlockPartition::from_lengths(&l).unwrap())
}

fn block_of(p: &BlockPartition, i: usize) -> usize {
    p.ranges().iter().position(|r| r.contains(&i)).unwrap()
}

proptest! {
    #[test]
    fn block_mask_matches_definition(p in partition()) {
        let m = build_block_mask(&p);
        let last = p.final_index();
        let mut pairs = 0;
        for i in 0..p.len() {
            for j in 0..p.len() {
                let (bi, bj) = (block_of(&p, i), block_of(&p, j));
                let want = j <= i && (bi == bj || bi == last);
                prop_assert_eq!(m.allowed(i, j), want);
                pairs += u64::from(want);
            }
        }
        prop_assert_eq!(m.allowed_pairs(), pairs);
    }

    #[test]
    fn dropout_mask_sits_between_block_and_full(p in partition(), bits in prop::collection::vec(any::<bool>(), 6)) {
        let plan = DropoutPlan::new((0..p.final_index()).filter(|&b| bits[b]), 0.5);
        let m = build_dropout_mask(&p, &plan).unwrap();
        let block = build_block_mask(&p);
        for i in 0..p.len() {
            for j in 0..=i {
                if block.allowed(i, j) {
                    prop_assert!(m.allowed(i, j));
                }
                let corrupted = plan.is_corrupted(block_of(&p, i));
                prop_assert_eq!(m.allowed(i, j), !corrupted || block_of(&p, j) == block_of(&p, i));
            }
        }
        let all = build_dropout_mask(&p, &DropoutPlan::all_context(&p)).unwrap();
        prop_assert_eq!(all, block);
    }

    #[test]
    fn sinks_round_trip(p in partition(), k in 0usize..4, seed in any::<u64>()) {
        let tokens: Vec<u32> = (0..p.len() as u64).map(|i| ((i ^ seed) % 50) as u32).collect();
        let layout = SinkLayout { sink_token: 99, sinks_per_block: k };
        let aug = insert_sink_tokens(&tokens, &p, layout).unwrap();
        prop_assert_eq!(aug.tokens.len(), tokens.len() + k * p.parallel_degree());
        for (i, &a) in aug.index_map.iter().enumerate() {
            prop_assert_eq!(aug.tokens[a], tokens[i]);
        }
        if k > 0 {
            let (back, bp) = strip_sink_tokens(&aug.tokens, &aug.partition, layout).unwrap();
            prop_assert_eq!(back, tokens);
            prop_assert_eq!(bp, p);
        }
    }

    #[test]
    fn token_weights_floor_at_beta(
        pairs in prop::collection::vec((0.0f64..8.0, 0.0f64..8.0), 1..20),
        alpha in 0.0f64..2.0,
        beta in 0.0f64..1.0,
    ) {
        let (cb, cf): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let w = token_weights(&cb, &cf, alpha, beta).unwrap();
        for (i, wi) in w.iter().enumerate() {
            prop_assert!(*wi >= beta - 1e-12);
            if cb[i] <= cf[i] {
                prop_assert!((wi - beta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_prefill_never_costs_more(blocks in prop::collection::vec(1u64..500, 1..10), q in 1u64..200) {
        let c = prefill_cost(&blocks, q).unwrap();
        prop_assert_eq!(c.full_pairs, c.block_pairs + c.reduction);
        prop_assert_eq!(c.reduction == 0, blocks.len() == 1);
        let doubled: Vec<u64> = blocks.iter().chain(&blocks).copied().collect();
        prop_assert!(prefill_cost(&doubled, q).unwrap().reduction >= 2 * c.reduction);
    }

    #[test]
    fn block_cache_hits_at_least_prefix(
        sizes in prop::collection::vec(1u64..1000, 1..6),
        reqs in prop::collection::vec((prop::collection::vec(0usize..6, 0..5), 1u64..100), 1..8),
        system in 1u64..500,
        steady in any::<bool>(),
    ) {
        let docs: BTreeMap<String, u64> = sizes.iter().enumerate().map(|(i, &s)| (format!("d{i}"), s)).collect();
        let requests = reqs
            .iter()
            .map(|(ids, q)| Request { docs: ids.iter().map(|i| format!("d{}", i % sizes.len())).collect(), query_len: *q })
            .collect();
        let s = CacheScenario { system_prompt_len: system, docs, requests };
        let warmth = if steady { Warmth::Steady } else { Warmth::Cold };
        let prefix = simulate(&s, CacheMode::Prefix, warmth).unwrap();
        let block = simulate(&s, CacheMode::Block, warmth).unwrap();
        prop_assert_eq!(prefix.total.requested_tokens(), block.total.requested_tokens());
        for (p, b) in prefix.per_request.iter().zip(&block.per_request) {
            prop_assert!(b.hit_tokens >= p.hit_tokens);
        }
    }

    #[test]
    fn candidates_strip_back_to_text(text in "[a-c .\n]{1,40}", rule in 0usize..3) {
        let rule = [InsertionRule::Newline, InsertionRule::Space, InsertionRule::SentencePunctuation][rule];
        let tokens = encode_text(&text);
        let seq = insert_candidates(&tokens, rule, 257).unwrap();
        prop_assert_eq!(CandidateSequence::strip(&seq.tokens(), 257), tokens);
        prop_assert_eq!(seq.num_candidates(), rule.boundaries(&encode_text(&text)).len() + 2);
    }

    #[test]
    fn higher_threshold_keeps_a_subset_of_cuts(
        probs in prop::collection::vec(0.0f64..1.0, 12),
        t in (0.01f64..0.98, 0.0f64..1.0),
    ) {
        let text = (0..13).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let seq = insert_candidates(&encode_text(&text), InsertionRule::Space, 257).unwrap();
        let lo = t.0;
        let hi = lo + (0.99 - lo) * t.1;
        let a = decide_cuts(&seq, &probs, lo).unwrap().boundaries();
        let b = decide_cuts(&seq, &probs, hi).unwrap().boundaries();
        prop_assert!(b.iter().all(|x| a.contains(x)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rebasing_matches_direct_placement(len in 1usize..8, a in 0usize..40, b in 0usize..40, seed in 0u64..4) {
        let model = ToyModel::new(ModelConfig::new(2, 2, 4, 20, 64, seed)).unwrap();
        let tokens: Vec<u32> = (0..len as u32).map(|i| (i * 7 + seed as u32) % 18).collect();
        let block = model.encode_block(&tokens, 0).unwrap();
        let via = model.rebase(&model.apply_position_offset(&block, a).unwrap(), b).unwrap();
        let direct = model.apply_position_offset(&block, b).unwrap();
        prop_assert_eq!(via.offset, direct.offset);
        for (x, y) in via.layers.iter().zip(&direct.layers) {
            let err = (&x.keys - &y.keys).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            prop_assert!(err < 1e-9, "key drift {}", err);
            prop_assert_eq!(&x.values, &y.values);
        }
    }
}
