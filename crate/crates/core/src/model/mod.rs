//! The toy decoder-only transformer.
//!
//! Pre-norm blocks (RMSNorm → multi-head attention with rotary positions →
//! residual, RMSNorm → SiLU MLP → residual), a final RMSNorm and an untied
//! unembedding. Everything is f64 and single-threaded so results are
//! bit-reproducible.

mod backward;
pub mod checkpoint;
pub mod config;
mod kv;
pub mod ops;
pub mod params;
pub mod rope;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

pub use config::ModelConfig;
pub use kv::PositionedKv;
pub use params::{LayerParams, ModelParams};

use crate::error::{contract, range, Result};
use crate::mask::AttentionMask;
use crate::TokenId;
use rope::Rope;

const RMS_EPS: f64 = 1e-5;

/// Keys (rotated by their positions) and values of one layer, `n × hidden`
/// with heads laid out contiguously along the hidden axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

impl LayerKv {
    pub fn len(&self) -> usize {
        self.keys.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// n × vocab
    pub logits: Array2<f64>,
    pub kv_states: Vec<LayerKv>,
    /// n × hidden, after the final norm and before the unembedding.
    pub hidden_states: Array2<f64>,
}

/// Activations recorded by [`ToyModel::forward_traced`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    tokens: Vec<TokenId>,
    positions: Vec<usize>,
    row_start: Vec<usize>,
    /// Offset of each row's weights inside a per-head weight buffer.
    row_offset: Vec<usize>,
    layers: Vec<LayerTrace>,
    x_final: Array2<f64>,
    rms_final: Array1<f64>,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    x_in: Array2<f64>,
    rms1: Array1<f64>,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One buffer per head, rows concatenated per `Trace::row_offset`.
    weights: Vec<Vec<f64>>,
    o: Array2<f64>,
    x_mid: Array2<f64>,
    rms2: Array1<f64>,
    b: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    params: ModelParams,
    rope: RopeHandle,
}

// Rope is derived from the config; equality ignores it.
#[derive(Debug, Clone)]
struct RopeHandle(Rope);

impl PartialEq for RopeHandle {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

fn silu(x: f64) -> f64 {
    x * ops::sigmoid(x)
}

fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>) -> (Array2<f64>, Array1<f64>) {
    let h = x.ncols() as f64;
    let rms = x.map_axis(Axis(1), |row| (row.dot(&row) / h + RMS_EPS).sqrt());
    let mut y = x.clone();
    for (mut row, r) in y.rows_mut().into_iter().zip(rms.iter()) {
        row.zip_mut_with(gain, |v, g| *v = *v / r * g);
    }
    (y, rms)
}

struct AttentionOut {
    o: Array2<f64>,
    weights: Option<Vec<Vec<f64>>>,
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config);
        Ok(Self::assemble(config, params))
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::zeros(&config);
        let shapes_match = expected
            .tensors()
            .iter()
            .zip(params.tensors())
            .all(|(a, b)| a.len() == b.len())
            && expected.layers.len() == params.layers.len();
        if !shapes_match {
            return Err(contract("parameter shapes do not match the config"));
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: ModelParams) -> Self {
        let rope = RopeHandle(Rope::new(config.head_dim, config.rope_base));
        Self { config, params, rope }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub(crate) fn rope(&self) -> &Rope {
        &self.rope.0
    }

    /// SHA-256 over the config and every parameter byte.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let c = &self.config;
        for v in [c.num_layers, c.num_heads, c.head_dim, c.hidden_dim, c.vocab_size, c.max_seq_len] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(c.rope_base.to_le_bytes());
        for t in self.params.tensors() {
            for x in t {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    fn check_inputs(&self, tokens: &[TokenId], positions: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(contract("token sequence is empty"));
        }
        if positions.len() != tokens.len() {
            return Err(contract(format!(
                "{} positions for {} tokens",
                positions.len(),
                tokens.len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(range(format!("token id {t} >= vocab size {}", self.config.vocab_size)));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= self.config.max_seq_len) {
            return Err(range(format!("position {p} >= max_seq_len {}", self.config.max_seq_len)));
        }
        Ok(())
    }

    fn check_mask(&self, tokens: &[TokenId], mask: &AttentionMask) -> Result<()> {
        if mask.n() != tokens.len() {
            return Err(contract(format!(
                "mask is {0}x{0} but sequence has {1} tokens",
                mask.n(),
                tokens.len()
            )));
        }
        Ok(())
    }

    /// Forward pass with positions `0..n`.
    pub fn forward_seq(&self, tokens: &[TokenId], mask: &AttentionMask) -> Result<ForwardOutput> {
        let positions: Vec<usize> = (0..tokens.len()).collect();
        self.forward(tokens, mask, &positions)
    }

    pub fn forward(
        &self,
        tokens: &[TokenId],
        mask: &AttentionMask,
        positions: &[usize],
    ) -> Result<ForwardOutput> {
        self.check_inputs(tokens, positions)?;
        self.check_mask(tokens, mask)?;
        let row_start: Vec<usize> = (0..tokens.len()).map(|i| mask.row_start(i)).collect();
        Ok(self.run(tokens, positions, None, &row_start, false).0)
    }

    /// Forward pass that also records what [`Self::backward`] needs.
    pub fn forward_traced(
        &self,
        tokens: &[TokenId],
        mask: &AttentionMask,
        positions: &[usize],
    ) -> Result<(ForwardOutput, Trace)> {
        self.check_inputs(tokens, positions)?;
        self.check_mask(tokens, mask)?;
        let row_start: Vec<usize> = (0..tokens.len()).map(|i| mask.row_start(i)).collect();
        let (out, trace) = self.run(tokens, positions, None, &row_start, true);
        Ok((out, trace.expect("trace requested")))
    }

    /// Run `tokens` on top of already-positioned past KV states. New row `i`
    /// attends to absolute key columns `row_start[i]..=past_len + i`.
    pub(crate) fn run(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        past: Option<&[LayerKv]>,
        row_start: &[usize],
        keep_trace: bool,
    ) -> (ForwardOutput, Option<Trace>) {
        let cfg = &self.config;
        let n = tokens.len();
        let h = cfg.hidden_dim;
        let past_len = past.map_or(0, |p| p.first().map_or(0, LayerKv::len));

        let mut x = Array2::<f64>::zeros((n, h));
        for (i, &t) in tokens.iter().enumerate() {
            x.row_mut(i).assign(&self.params.embed.row(t as usize));
        }

        let mut kv_states = Vec::with_capacity(cfg.num_layers);
        let mut layer_traces = Vec::new();

        for (l, lp) in self.params.layers.iter().enumerate() {
            let (a, rms1) = rms_norm(&x, &lp.attn_norm);
            let mut q = a.dot(&lp.wq);
            let mut k = a.dot(&lp.wk);
            let v = a.dot(&lp.wv);
            for (i, &p) in positions.iter().enumerate() {
                self.rope().rotate(q.row_mut(i).into_slice().expect("row"), p as f64);
                self.rope().rotate(k.row_mut(i).into_slice().expect("row"), p as f64);
            }

            let att = match past {
                Some(p) if past_len > 0 => {
                    let keys = ndarray::concatenate(Axis(0), &[p[l].keys.view(), k.view()])
                        .expect("matching widths");
                    let values = ndarray::concatenate(Axis(0), &[p[l].values.view(), v.view()])
                        .expect("matching widths");
                    self.attention(&q, keys.view(), values.view(), row_start, past_len, keep_trace)
                }
                _ => self.attention(&q, k.view(), v.view(), row_start, 0, keep_trace),
            };

            let x_mid = &x + &att.o.dot(&lp.wo);
            let (b, rms2) = rms_norm(&x_mid, &lp.mlp_norm);
            let u = b.dot(&lp.w_up);
            let act = u.mapv(silu);
            let x_out = &x_mid + &act.dot(&lp.w_down);

            if keep_trace {
                layer_traces.push(LayerTrace {
                    x_in: x,
                    rms1,
                    a,
                    q: q.clone(),
                    k: k.clone(),
                    v: v.clone(),
                    weights: att.weights.expect("weights kept"),
                    o: att.o,
                    x_mid,
                    rms2,
                    b,
                    u,
                    act,
                });
            }
            kv_states.push(LayerKv { keys: k, values: v });
            x = x_out;
        }

        let (hidden, rms_final) = rms_norm(&x, &self.params.final_norm);
        let logits = hidden.dot(&self.params.unembed);

        let trace = keep_trace.then(|| {
            let mut row_offset = Vec::with_capacity(n + 1);
            let mut acc = 0;
            for i in 0..n {
                row_offset.push(acc);
                acc += i + 1 - row_start[i];
            }
            row_offset.push(acc);
            Trace {
                tokens: tokens.to_vec(),
                positions: positions.to_vec(),
                row_start: row_start.to_vec(),
                row_offset,
                layers: layer_traces,
                x_final: x,
                rms_final,
                hidden: hidden.clone(),
            }
        });

        (
            ForwardOutput {
                logits,
                kv_states,
                hidden_states: hidden,
            },
            trace,
        )
    }

    /// Masked softmax attention. Disallowed keys are never scored, which is
    /// the same as an additive −∞ with their weights pinned to exactly 0.
    fn attention(
        &self,
        q: &Array2<f64>,
        keys: ArrayView2<f64>,
        values: ArrayView2<f64>,
        row_start: &[usize],
        past_len: usize,
        keep_weights: bool,
    ) -> AttentionOut {
        let cfg = &self.config;
        let (n, h, hd) = (q.nrows(), cfg.hidden_dim, cfg.head_dim);
        let scale = 1.0 / (hd as f64).sqrt();
        let qs = q.as_slice().expect("standard layout");
        let ks = keys.as_slice().expect("standard layout");
        let vs = values.as_slice().expect("standard layout");
        let mut o = Array2::<f64>::zeros((n, h));
        let mut weights: Option<Vec<Vec<f64>>> = keep_weights.then(|| vec![Vec::new(); cfg.num_heads]);
        let mut scores = Vec::new();

        {
            let os = o.as_slice_mut().expect("standard layout");
            for i in 0..n {
                let lo = row_start[i];
                let hi = past_len + i;
                for head in 0..cfg.num_heads {
                    let off = head * hd;
                    let qi = &qs[i * h + off..i * h + off + hd];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in lo..=hi {
                        let kj = &ks[j * h + off..j * h + off + hd];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(s);
                        scores.push(s);
                    }
                    let mut sum = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let oi = &mut os[i * h + off..i * h + off + hd];
                    for (idx, j) in (lo..=hi).enumerate() {
                        let w = scores[idx] / sum;
                        scores[idx] = w;
                        let vj = &vs[j * h + off..j * h + off + hd];
                        for (acc, x) in oi.iter_mut().zip(vj) {
                            *acc += w * x;
                        }
                    }
                    if let Some(ws) = weights.as_mut() {
                        ws[head].extend_from_slice(&scores);
                    }
                }
            }
        }
        AttentionOut { o, weights }
    }

    /// Attention weights of `layer`/`head` for query row `i`, over keys
    /// `row_start..=i` (diagnostics and tests).
    pub fn attention_row(trace: &Trace, layer: usize, head: usize, i: usize) -> (usize, &[f64]) {
        let start = trace.row_start[i];
        let w = &trace.layers[layer].weights[head][trace.row_offset[i]..trace.row_offset[i + 1]];
        (start, w)
    }

    /// Greedy next-token id at every position.
    pub fn argmax_rows(logits: &Array2<f64>) -> Vec<TokenId> {
        logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                    .0 as TokenId
            })
            .collect()
    }
}

impl Trace {
    pub fn hidden(&self) -> &Array2<f64> {
        &self.hidden
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Rows `range` of a matrix as an owned array.
pub fn slice_rows(m: &Array2<f64>, range: std::ops::Range<usize>) -> Array2<f64> {
    m.slice(s![range, ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{build_block_mask, build_full_causal, BlockPartition};

    fn tiny() -> ToyModel {
        ToyModel::new(ModelConfig::new(2, 2, 4, 13, 64, 3)).unwrap()
    }

    fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn single_token_attends_to_itself() {
        let m = tiny();
        let mask = build_full_causal(1).unwrap();
        let (out, trace) = m.forward_traced(&[4], &mask, &[0]).unwrap();
        for l in 0..2 {
            for head in 0..2 {
                assert_eq!(ToyModel::attention_row(&trace, l, head, 0).1, &[1.0]);
            }
        }
        let expected = out.hidden_states.dot(&m.params().unembed);
        assert_eq!(out.logits, expected);
    }

    #[test]
    fn one_block_mask_matches_full_causal() {
        let m = tiny();
        let toks: Vec<TokenId> = (0..8).map(|i| (i * 5 % 11) as TokenId).collect();
        let a = m.forward_seq(&toks, &build_full_causal(8).unwrap()).unwrap();
        let b = m
            .forward_seq(&toks, &build_block_mask(&BlockPartition::single(8).unwrap()))
            .unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn middle_block_equals_standalone_forward() {
        let m = tiny();
        let toks: Vec<TokenId> = (0..12).map(|i| (i * 7 % 11) as TokenId).collect();
        let p = BlockPartition::from_lengths(&[4, 4, 4]).unwrap();
        let whole = m.forward_seq(&toks, &build_block_mask(&p)).unwrap();
        let alone = m
            .forward(&toks[4..8], &build_full_causal(4).unwrap(), &[4, 5, 6, 7])
            .unwrap();
        let rows = slice_rows(&whole.logits, 4..8);
        assert!(max_diff(&rows, &alone.logits) < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = tiny();
        let toks: Vec<TokenId> = vec![1, 2, 3, 4, 5];
        let out = m.forward_seq(&toks, &build_full_causal(5).unwrap()).unwrap();
        for row in out.logits.rows() {
            let p = ops::softmax(row);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn input_errors() {
        let m = tiny();
        let mask = build_full_causal(2).unwrap();
        assert!(matches!(m.forward(&[1, 2], &mask, &[0, 64]), Err(crate::Error::Range(_))));
        assert!(matches!(m.forward(&[1, 13], &mask, &[0, 1]), Err(crate::Error::Range(_))));
        assert!(matches!(
            m.forward(&[1, 2, 3], &mask, &[0, 1, 2]),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn masked_pairs_have_no_influence() {
        let m = tiny();
        let p = BlockPartition::from_lengths(&[3, 4, 3]).unwrap();
        let mask = build_block_mask(&p);
        let toks: Vec<TokenId> = vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        let base = m.forward_seq(&toks, &mask).unwrap();
        // token 1 lives in block 0; rows 3..7 (block 1) cannot see it
        let mut alt = toks.clone();
        alt[1] = 0;
        let pert = m.forward_seq(&alt, &mask).unwrap();
        for i in 3..7 {
            assert_eq!(base.logits.row(i), pert.logits.row(i));
        }
        assert_ne!(base.logits.row(8), pert.logits.row(8));
    }
}
