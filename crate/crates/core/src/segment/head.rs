use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CandidateSequence, CutScorer, SegmentationExample};
use crate::error::{contract, Result};
use crate::mask::build_full_causal;
use crate::model::{ops, ToyModel};
use crate::optim::{AdamConfig, AdamW};

/// `hidden → hidden → 1` with a ReLU in between and a sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutHead {
    pub hidden_dim: usize,
    /// hidden × hidden, row-major, input-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

struct HeadActs {
    pre: Vec<f64>,
    logit: f64,
}

impl CutHead {
    pub fn new(hidden_dim: usize, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "cut_head");
        let std1 = (2.0 / hidden_dim as f64).sqrt();
        let n1 = Normal::new(0.0, std1).expect("valid std");
        let n2 = Normal::new(0.0, 0.02).expect("valid std");
        Self {
            hidden_dim,
            w1: (0..hidden_dim * hidden_dim).map(|_| n1.sample(&mut rng)).collect(),
            b1: vec![0.0; hidden_dim],
            w2: (0..hidden_dim).map(|_| n2.sample(&mut rng)).collect(),
            b2: 0.0,
        }
    }

    /// Zero the output layer so every probability is exactly 0.5.
    pub fn zero_output(&mut self) {
        self.w2.fill(0.0);
        self.b2 = 0.0;
    }

    fn acts(&self, h: &[f64]) -> HeadActs {
        let d = self.hidden_dim;
        let mut pre = self.b1.clone();
        for (i, &x) in h.iter().enumerate() {
            let row = &self.w1[i * d..(i + 1) * d];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += x * w;
            }
        }
        let logit = self.b2 + pre.iter().zip(&self.w2).map(|(p, w)| p.max(0.0) * w).sum::<f64>();
        HeadActs { pre, logit }
    }

    pub fn logit(&self, h: &[f64]) -> f64 {
        self.acts(h).logit
    }

    pub fn prob(&self, h: &[f64]) -> f64 {
        ops::sigmoid(self.logit(h))
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, std::slice::from_mut(&mut self.b2)]
    }

    fn zeros_like(&self) -> Self {
        Self {
            hidden_dim: self.hidden_dim,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: 0.0,
        }
    }

    /// Accumulate `dlogit · ∂logit/∂θ` into `grads`; returns ∂/∂h.
    fn backward(&self, h: &[f64], dlogit: f64, grads: &mut CutHead) -> Vec<f64> {
        let d = self.hidden_dim;
        let a = self.acts(h);
        grads.b2 += dlogit;
        let mut dpre = vec![0.0; d];
        for j in 0..d {
            if a.pre[j] > 0.0 {
                grads.w2[j] += dlogit * a.pre[j];
                dpre[j] = dlogit * self.w2[j];
            }
        }
        let mut dh = vec![0.0; d];
        for (i, &x) in h.iter().enumerate() {
            let row = &self.w1[i * d..(i + 1) * d];
            let grow = &mut grads.w1[i * d..(i + 1) * d];
            for j in 0..d {
                grow[j] += x * dpre[j];
                dh[i] += row[j] * dpre[j];
            }
        }
        for j in 0..d {
            grads.b1[j] += dpre[j];
        }
        dh
    }
}

/// Reads the backbone's final hidden state at C_{i+1} to score C_i, so a
/// candidate sees the whole segment that follows it and nothing beyond.
pub struct NeuralScorer<'a> {
    pub model: &'a ToyModel,
    pub head: &'a CutHead,
}

fn candidate_hidden(model: &ToyModel, seq: &CandidateSequence) -> Result<Array2<f64>> {
    let tokens = seq.tokens();
    let out = model.forward_seq(&tokens, &build_full_causal(tokens.len())?)?;
    Ok(out.hidden_states)
}

impl CutScorer for NeuralScorer<'_> {
    fn score(&self, seq: &CandidateSequence) -> Result<Vec<f64>> {
        if self.head.hidden_dim != self.model.config().hidden_dim {
            return Err(contract("cut head width differs from the backbone hidden size"));
        }
        if seq.num_internal() == 0 {
            return Ok(Vec::new());
        }
        let hidden = candidate_hidden(self.model, seq)?;
        Ok((1..seq.num_candidates() - 1)
            .map(|i| {
                let row = hidden.row(seq.token_position(i + 1));
                self.head.prob(row.as_slice().expect("standard layout"))
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub head_lr: f64,
    pub backbone_lr: f64,
    pub freeze_backbone: bool,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            head_lr: 3e-3,
            backbone_lr: 1e-3,
            freeze_backbone: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadTrainReport {
    /// Mean per-candidate BCE over each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

fn bce(p_logit: f64, label: bool) -> f64 {
    // log(1 + e^{-z}) for a positive label, log(1 + e^{z}) otherwise
    let z = if label { -p_logit } else { p_logit };
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean BCE of one example and, when `grads` is given, its gradients.
pub(crate) fn example_loss(
    model: &ToyModel,
    head: &CutHead,
    ex: &SegmentationExample,
    grads: Option<(&mut CutHead, Option<&mut crate::model::ModelParams>)>,
) -> Result<f64> {
    let seq = ex.candidate_sequence(model.config().cut_token())?;
    let labels = ex.labels()?;
    let m = labels.len();
    if m == 0 {
        return Ok(0.0);
    }
    let tokens = seq.tokens();
    let mask = build_full_causal(tokens.len())?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let (out, trace) = model.forward_traced(&tokens, &mask, &positions)?;
    let h = out.hidden_states;
    let mut loss = 0.0;
    let mut dhidden = Array2::<f64>::zeros(h.raw_dim());
    let mut collect = grads;
    for (k, &label) in labels.iter().enumerate() {
        let row = seq.token_position(k + 2);
        let hv = h.row(row);
        let hv = hv.as_slice().expect("standard layout");
        let z = head.logit(hv);
        loss += bce(z, label) / m as f64;
        if let Some((hg, _)) = collect.as_mut() {
            let dz = (ops::sigmoid(z) - f64::from(u8::from(label))) / m as f64;
            let dh = head.backward(hv, dz, hg);
            let mut dst = dhidden.row_mut(row);
            dst += &Array1::from(dh);
        }
    }
    if let Some((_, Some(mg))) = collect {
        let g = model.backward(&trace, None, Some(&dhidden))?;
        mg.add_scaled(&g, 1.0);
    }
    Ok(loss)
}

/// Binary cross-entropy on each internal candidate, one example per Adam
/// step, shuffled each epoch.
pub fn train_cut_head(
    model: &mut ToyModel,
    head: &mut CutHead,
    corpus: &[SegmentationExample],
    cfg: &HeadTrainConfig,
) -> Result<HeadTrainReport> {
    if head.hidden_dim != model.config().hidden_dim {
        return Err(contract("cut head width differs from the backbone hidden size"));
    }
    let mut total_candidates = 0;
    for ex in corpus {
        total_candidates += ex.labels()?.len();
    }
    if total_candidates == 0 {
        return Err(contract("training corpus has no internal candidates"));
    }
    let mut rng = crate::rng::stream(cfg.seed, "cut_head_train");
    let mut head_opt = AdamW::new(AdamConfig::default());
    let mut body_opt = AdamW::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let mut hg = head.zeros_like();
            let mut mg = (!cfg.freeze_backbone).then(|| model.params().zeros_like());
            sum += example_loss(model, head, &corpus[i], Some((&mut hg, mg.as_mut())))?;
            let grads: Vec<Vec<f64>> = vec![hg.w1, hg.b1, hg.w2, vec![hg.b2]];
            head_opt.step(head.tensors_mut(), grads.iter().map(Vec::as_slice).collect(), cfg.head_lr);
            if let Some(mg) = mg {
                body_opt.step(model.params_mut().tensors_mut(), mg.tensors(), cfg.backbone_lr);
            }
        }
        epoch_losses.push(sum / corpus.len() as f64);
    }
    Ok(HeadTrainReport { epoch_losses })
}
