//! Seeded synthetic corpora with known structure.
//!
//! - [`RecallTask`]: key/value facts spread over context blocks, queried from
//!   the final block.
//! - [`ParagraphTask`]: numbered paragraphs whose number lives in the block's
//!   first token; the query asks for the number of a topic.
//! - [`planted_segmentation`]: newline-separated lines where a block should
//!   start exactly at each `#header#` line.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distill::DistillSample;
use crate::model::ModelConfig;
use crate::segment::{encode_text, insert_candidates, InsertionRule, SegmentationExample};
use crate::TokenId;

/// Context blocks hold single-token facts `(key, value)`; the final block
/// asks `[Q_k, v]` for keys that appear in the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallTask {
    pub keys: usize,
    pub values: usize,
    pub context_blocks: usize,
    pub facts_per_block: usize,
    pub queries: usize,
}

impl Default for RecallTask {
    fn default() -> Self {
        Self {
            keys: 8,
            values: 8,
            context_blocks: 3,
            facts_per_block: 2,
            queries: 3,
        }
    }
}

impl RecallTask {
    pub fn fact_token(&self, key: usize, value: usize) -> TokenId {
        (key * self.values + value) as TokenId
    }

    pub fn query_token(&self, key: usize) -> TokenId {
        (self.keys * self.values + key) as TokenId
    }

    pub fn value_token(&self, value: usize) -> TokenId {
        (self.keys * self.values + self.keys + value) as TokenId
    }

    /// Ordinary ids plus the sink and cut ids.
    pub fn vocab_size(&self) -> usize {
        self.keys * self.values + self.keys + self.values + 2
    }

    pub fn model_config(&self, num_layers: usize, num_heads: usize, head_dim: usize, seed: u64) -> ModelConfig {
        ModelConfig::new(num_layers, num_heads, head_dim, self.vocab_size(), 256, seed)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DistillSample {
        let facts = self.context_blocks * self.facts_per_block;
        assert!(facts <= self.keys, "need at least one distinct key per fact");
        let mut keys: Vec<usize> = (0..self.keys).collect();
        keys.shuffle(rng);
        let values: Vec<usize> = (0..facts).map(|_| rng.random_range(0..self.values)).collect();
        let mut tokens: Vec<TokenId> = (0..facts).map(|f| self.fact_token(keys[f], values[f])).collect();
        let mut block_lengths = vec![self.facts_per_block; self.context_blocks];
        let mut answers = Vec::new();
        for _ in 0..self.queries {
            let f = rng.random_range(0..facts);
            tokens.push(self.query_token(keys[f]));
            answers.push(tokens.len() - 1);
            tokens.push(self.value_token(values[f]));
        }
        block_lengths.push(2 * self.queries);
        DistillSample {
            tokens,
            block_lengths,
            answers,
        }
    }

    pub fn corpus(&self, n: usize, seed: u64, name: &str) -> Vec<DistillSample> {
        let mut rng = crate::rng::stream(seed, name);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

/// Numbered paragraphs. The sequence starts with a BOS token; each block
/// opens with a header token carrying the paragraph number and its topic,
/// followed by filler words; the final block asks
/// `[QUERY, topic, number, topic', number', …]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphTask {
    pub topics: usize,
    pub paragraphs: usize,
    pub filler_words: usize,
    pub words_per_paragraph: usize,
    /// Distinct paragraphs asked about, at most `paragraphs`.
    pub queries: usize,
}

impl Default for ParagraphTask {
    fn default() -> Self {
        Self {
            topics: 8,
            paragraphs: 4,
            filler_words: 8,
            words_per_paragraph: 3,
            queries: 3,
        }
    }
}

impl ParagraphTask {
    pub fn header_token(&self, number: usize, topic: usize) -> TokenId {
        (number * self.topics + topic) as TokenId
    }

    pub fn topic_token(&self, topic: usize) -> TokenId {
        (self.paragraphs * self.topics + topic) as TokenId
    }

    pub fn number_token(&self, number: usize) -> TokenId {
        (self.paragraphs * self.topics + self.topics + number) as TokenId
    }

    fn filler_token(&self, f: usize) -> TokenId {
        (self.paragraphs * self.topics + self.topics + self.paragraphs + f) as TokenId
    }

    pub fn query_token(&self) -> TokenId {
        self.filler_token(self.filler_words)
    }

    pub fn bos_token(&self) -> TokenId {
        self.query_token() + 1
    }

    pub fn vocab_size(&self) -> usize {
        self.bos_token() as usize + 3
    }

    pub fn model_config(&self, num_layers: usize, num_heads: usize, head_dim: usize, seed: u64) -> ModelConfig {
        ModelConfig::new(num_layers, num_heads, head_dim, self.vocab_size(), 256, seed)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DistillSample {
        assert!(self.paragraphs <= self.topics, "topics must be distinct per sample");
        assert!(self.queries <= self.paragraphs, "queries ask about distinct paragraphs");
        let mut numbers: Vec<usize> = (0..self.paragraphs).collect();
        numbers.shuffle(rng);
        let mut topics: Vec<usize> = (0..self.topics).collect();
        topics.shuffle(rng);
        let mut tokens = vec![self.bos_token()];
        let mut block_lengths = Vec::new();
        for k in 0..self.paragraphs {
            tokens.push(self.header_token(numbers[k], topics[k]));
            for _ in 0..self.words_per_paragraph {
                tokens.push(self.filler_token(rng.random_range(0..self.filler_words)));
            }
            block_lengths.push(1 + self.words_per_paragraph);
        }
        block_lengths[0] += 1;
        let mut asked: Vec<usize> = (0..self.paragraphs).collect();
        asked.shuffle(rng);
        tokens.push(self.query_token());
        let mut answers = Vec::new();
        for &j in &asked[..self.queries] {
            tokens.push(self.topic_token(topics[j]));
            answers.push(tokens.len() - 1);
            tokens.push(self.number_token(numbers[j]));
        }
        block_lengths.push(1 + 2 * self.queries);
        DistillSample {
            tokens,
            block_lengths,
            answers,
        }
    }

    pub fn corpus(&self, n: usize, seed: u64, name: &str) -> Vec<DistillSample> {
        let mut rng = crate::rng::stream(seed, name);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

/// Lines of 2-6 lowercase letters; with probability `header_rate` a line is a
/// `#word#` header instead. The gold cut at C_i is set iff line `i + 1` is a
/// header, so every header starts a new block.
pub fn planted_segmentation(n: usize, lines: std::ops::RangeInclusive<usize>, header_rate: f64, seed: u64) -> Vec<SegmentationExample> {
    let mut rng = crate::rng::stream(seed, "planted_segmentation");
    let word = |rng: &mut crate::rng::StreamRng| -> String {
        let len = rng.random_range(2..=6);
        (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect()
    };
    (0..n)
        .map(|_| {
            let count = rng.random_range(lines.clone());
            let parts: Vec<(String, bool)> = (0..count)
                .map(|i| {
                    let header = i > 0 && rng.random::<f64>() < header_rate;
                    let w = word(&mut rng);
                    (if header { format!("#{w}#") } else { w }, header)
                })
                .collect();
            let text = parts.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>().join("\n");
            let seq = insert_candidates(&encode_text(&text), InsertionRule::Newline, TokenId::MAX)
                .expect("non-empty text");
            // internal candidate i (0-based) sits right before line i + 1
            let gold_cuts = seq
                .internal_offsets()
                .iter()
                .enumerate()
                .filter(|(i, _)| parts[i + 1].1)
                .map(|(_, &o)| o)
                .collect();
            SegmentationExample {
                text,
                candidate_offsets: seq.offsets().to_vec(),
                gold_cuts,
                category: "planted".into(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_layout() {
        let t = RecallTask::default();
        let s = t.corpus(1, 3, "t").remove(0);
        assert_eq!(s.tokens.len(), 6 + 6);
        assert_eq!(s.block_lengths, vec![2, 2, 2, 6]);
        for &a in &s.answers {
            let key = s.tokens[a] as usize - t.keys * t.values;
            let value = s.tokens[a + 1] as usize - t.keys * t.values - t.keys;
            assert!(s.tokens[..6].contains(&t.fact_token(key, value)));
        }
        assert!(s.tokens.iter().all(|&x| (x as usize) < t.vocab_size() - 2));
    }

    #[test]
    fn paragraph_answer_is_head_number() {
        let t = ParagraphTask::default();
        let block = 1 + t.words_per_paragraph;
        for s in t.corpus(20, 1, "p") {
            assert_eq!(s.tokens[0], t.bos_token());
            assert_eq!(s.answers.len(), t.queries);
            for &a in &s.answers {
                let topic = s.tokens[a] as usize - t.paragraphs * t.topics;
                let number = s.tokens[a + 1] as usize - t.paragraphs * t.topics - t.topics;
                let at = s.tokens.iter().position(|&x| x == t.header_token(number, topic)).unwrap();
                assert_eq!((at - 1) % block, 0);
                assert!(at < t.paragraphs * block);
            }
        }
    }

    #[test]
    fn planted_gold_matches_headers() {
        for ex in planted_segmentation(20, 4..=8, 0.3, 2) {
            for &g in &ex.gold_cuts {
                assert_eq!(ex.text.as_bytes()[g], b'#');
            }
            let headers = ex.text.lines().skip(1).filter(|l| l.starts_with('#')).count();
            assert_eq!(headers, ex.gold_cuts.len());
            ex.labels().unwrap();
        }
    }
}
