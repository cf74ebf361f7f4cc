use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{block_dropout_kl, distillation_loss_grad, per_token_ce, token_weights, LossBreakdown, LossInputs};
use super::sinks::{insert_sink_tokens, Augmented, SinkLayout};
use super::DistillConfig;
use crate::error::{contract, Result};
use crate::mask::{build_block_mask, build_dropout_mask, build_full_causal, sample_dropout_plan, BlockPartition, DropoutPlan};
use crate::model::{ModelConfig, ModelParams, ToyModel};
use crate::optim::{cosine_lr, AdamConfig, AdamW};
use crate::rng::StreamRng;
use crate::TokenId;

/// One training sequence before sink insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSample {
    pub tokens: Vec<TokenId>,
    pub block_lengths: Vec<usize>,
    /// Positions whose next token is an answer to score.
    #[serde(default)]
    pub answers: Vec<usize>,
}

impl DistillSample {
    pub fn partition(&self) -> Result<BlockPartition> {
        let p = BlockPartition::from_lengths(&self.block_lengths)?;
        if p.len() != self.tokens.len() {
            return Err(contract("block lengths do not cover the sample"));
        }
        Ok(p)
    }

    pub fn augment(&self, layout: SinkLayout) -> Result<Augmented> {
        insert_sink_tokens(&self.tokens, &self.partition()?, layout)
    }
}

fn positions(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Zero the weight wherever the input or the target is a sink token: sinks
/// are layout markers, not text to predict.
fn sink_adjusted(mut w: Vec<f64>, is_sink: &[bool]) -> Vec<f64> {
    for (i, wi) in w.iter_mut().enumerate() {
        if is_sink[i] || is_sink[i + 1] {
            *wi = 0.0;
        }
    }
    w
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Frozen-teacher quantities for one sample; deterministic, so cacheable.
#[derive(Debug, Clone)]
pub struct TeacherPass {
    pub aug: Augmented,
    pub full_logits: Array2<f64>,
    pub ce_full: Vec<f64>,
    pub ce_block: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn teacher_pass(teacher: &ToyModel, sample: &DistillSample, cfg: &DistillConfig) -> Result<TeacherPass> {
    let layout = SinkLayout {
        sink_token: teacher.config().sink_token(),
        sinks_per_block: cfg.sinks_per_block,
    };
    let aug = sample.augment(layout)?;
    let n = aug.tokens.len();
    let full = teacher.forward(&aug.tokens, &build_full_causal(n)?, &positions(n))?;
    let block = teacher.forward(&aug.tokens, &build_block_mask(&aug.partition), &positions(n))?;
    let ce_full = per_token_ce(&full.logits, &aug.tokens)?;
    let ce_block = per_token_ce(&block.logits, &aug.tokens)?;
    let weights = sink_adjusted(token_weights(&ce_block, &ce_full, cfg.alpha, cfg.beta)?, &aug.is_sink);
    Ok(TeacherPass {
        aug,
        full_logits: full.logits,
        ce_full,
        ce_block,
        weights,
    })
}

/// Loss and student gradient for one sample under a given dropout plan.
pub fn sample_loss_and_grad(
    student: &ToyModel,
    tp: &TeacherPass,
    plan: &DropoutPlan,
) -> Result<(LossBreakdown, ModelParams, f64, f64)> {
    let aug = &tp.aug;
    let n = aug.tokens.len();
    let pos = positions(n);
    let (block_out, block_trace) = student.forward_traced(&aug.tokens, &build_block_mask(&aug.partition), &pos)?;
    let (drop_out, drop_trace) =
        student.forward_traced(&aug.tokens, &build_dropout_mask(&aug.partition, plan)?, &pos)?;
    let x = LossInputs {
        tokens: &aug.tokens,
        partition: &aug.partition,
        plan,
        teacher_logits: &tp.full_logits,
        student_block_logits: &block_out.logits,
        student_dropout_logits: &drop_out.logits,
        weights: &tp.weights,
    };
    let (loss, d_block, d_drop) = distillation_loss_grad(&x)?;
    let mut grads = student.backward(&block_trace, Some(&d_block), None)?;
    grads.add_scaled(&student.backward(&drop_trace, Some(&d_drop), None)?, 1.0);
    let student_block_ce = mean(&per_token_ce(&block_out.logits, &aug.tokens)?);
    let student_dropout_ce = mean(&per_token_ce(&drop_out.logits, &aug.tokens)?);
    Ok((loss, grads, student_block_ce, student_dropout_ce))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub weighted_ce: f64,
    pub kl: f64,
    pub total: f64,
    pub teacher_full_ce: f64,
    pub teacher_block_ce: f64,
    pub student_block_ce: f64,
    pub student_dropout_ce: f64,
    /// Corrupted block indices of each sample's dropout plan.
    pub corrupted: Vec<Vec<usize>>,
    pub samples: Vec<usize>,
}

fn same_shape(a: &ModelConfig, b: &ModelConfig) -> bool {
    ModelConfig { seed: 0, ..a.clone() } == ModelConfig { seed: 0, ..b.clone() }
}

/// Student training against a frozen teacher.
pub struct Distiller<'t> {
    teacher: &'t ToyModel,
    student: ToyModel,
    cfg: DistillConfig,
    opt: AdamW,
    dropout_rng: StreamRng,
    batch_rng: StreamRng,
    cache: HashMap<usize, Arc<TeacherPass>>,
    step: usize,
}

impl<'t> Distiller<'t> {
    pub fn new(teacher: &'t ToyModel, student: ToyModel, cfg: DistillConfig) -> Result<Self> {
        cfg.validate()?;
        if !same_shape(teacher.config(), student.config()) {
            return Err(contract("teacher and student configs differ"));
        }
        Ok(Self {
            teacher,
            student,
            opt: AdamW::new(AdamConfig {
                weight_decay: cfg.weight_decay,
                ..AdamConfig::default()
            }),
            dropout_rng: crate::rng::stream(cfg.seed, "dropout"),
            batch_rng: crate::rng::stream(cfg.seed, "batches"),
            cache: HashMap::new(),
            step: 0,
            cfg,
        })
    }

    pub fn student(&self) -> &ToyModel {
        &self.student
    }

    pub fn into_student(self) -> ToyModel {
        self.student
    }

    pub fn config(&self) -> &DistillConfig {
        &self.cfg
    }

    fn teacher_for(&mut self, idx: usize, sample: &DistillSample) -> Result<Arc<TeacherPass>> {
        if !self.cfg.cache_teacher {
            return Ok(Arc::new(teacher_pass(self.teacher, sample, &self.cfg)?));
        }
        if let Some(tp) = self.cache.get(&idx) {
            return Ok(tp.clone());
        }
        let tp = Arc::new(teacher_pass(self.teacher, sample, &self.cfg)?);
        self.cache.insert(idx, tp.clone());
        Ok(tp)
    }

    /// One optimizer step on `batch_size` samples drawn from `corpus`.
    pub fn train_step(&mut self, corpus: &[DistillSample]) -> Result<StepMetrics> {
        if corpus.is_empty() {
            return Err(contract("empty training corpus"));
        }
        let picks: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| self.batch_rng.random_range(0..corpus.len()))
            .collect();
        self.step_on(corpus, &picks)
    }

    /// One optimizer step on the given sample indices.
    pub fn step_on(&mut self, corpus: &[DistillSample], picks: &[usize]) -> Result<StepMetrics> {
        let lr = cosine_lr(self.step, self.cfg.steps.max(1), self.cfg.lr_max, self.cfg.lr_min);
        let mut grads = self.student.params().zeros_like();
        let scale = 1.0 / picks.len() as f64;
        let mut m = StepMetrics {
            step: self.step,
            lr,
            weighted_ce: 0.0,
            kl: 0.0,
            total: 0.0,
            teacher_full_ce: 0.0,
            teacher_block_ce: 0.0,
            student_block_ce: 0.0,
            student_dropout_ce: 0.0,
            corrupted: Vec::with_capacity(picks.len()),
            samples: picks.to_vec(),
        };
        for &idx in picks {
            let tp = self.teacher_for(idx, &corpus[idx])?;
            let plan = sample_dropout_plan(&tp.aug.partition, self.cfg.dropout_rate, &mut self.dropout_rng)?;
            let (loss, g, sb_ce, sd_ce) = sample_loss_and_grad(&self.student, &tp, &plan)?;
            grads.add_scaled(&g, scale);
            m.weighted_ce += loss.weighted_ce * scale;
            m.kl += loss.kl * scale;
            m.total += loss.total * scale;
            m.teacher_full_ce += mean(&tp.ce_full) * scale;
            m.teacher_block_ce += mean(&tp.ce_block) * scale;
            m.student_block_ce += sb_ce * scale;
            m.student_dropout_ce += sd_ce * scale;
            m.corrupted.push(plan.corrupted().iter().copied().collect());
        }
        self.opt.step(self.student.params_mut().tensors_mut(), grads.tensors(), lr);
        self.step += 1;
        Ok(m)
    }
}

/// Held-out comparison of student (block attention) against teacher (full
/// attention) on final-block tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean KL(teacher full ‖ student block) over final-block tokens.
    pub kl: f64,
    pub teacher_full_ce: f64,
    pub teacher_block_ce: f64,
    pub student_block_ce: f64,
    /// Greedy accuracy on answer positions, student under block attention.
    pub student_answer_acc: f64,
    pub teacher_answer_acc: f64,
}

/// Predicted positions inside the final block with neither input nor
/// target a sink.
fn final_block_positions(aug: &Augmented) -> Vec<usize> {
    let last = aug.partition.ranges()[aug.partition.final_index()].clone();
    (last.start..last.end - 1)
        .filter(|&i| !aug.is_sink[i] && !aug.is_sink[i + 1])
        .collect()
}

pub fn evaluate(teacher: &ToyModel, student: &ToyModel, samples: &[DistillSample], sinks_per_block: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(contract("nothing to evaluate"));
    }
    let layout = SinkLayout {
        sink_token: teacher.config().sink_token(),
        sinks_per_block,
    };
    let (mut kl, mut tf, mut tb, mut sb) = (0.0, 0.0, 0.0, 0.0);
    let (mut s_hits, mut t_hits, mut answers) = (0usize, 0usize, 0usize);
    for sample in samples {
        let aug = sample.augment(layout)?;
        let n = aug.tokens.len();
        let pos = positions(n);
        let block_mask = build_block_mask(&aug.partition);
        let t_full = teacher.forward(&aug.tokens, &build_full_causal(n)?, &pos)?.logits;
        let t_block = teacher.forward(&aug.tokens, &block_mask, &pos)?.logits;
        let s_block = student.forward(&aug.tokens, &block_mask, &pos)?.logits;
        kl += block_dropout_kl(&t_full, &s_block, &aug.partition, &DropoutPlan::all_context(&aug.partition))?;
        let idx = final_block_positions(&aug);
        let pick = |ce: Vec<f64>| mean(&idx.iter().map(|&i| ce[i]).collect::<Vec<_>>());
        tf += pick(per_token_ce(&t_full, &aug.tokens)?);
        tb += pick(per_token_ce(&t_block, &aug.tokens)?);
        sb += pick(per_token_ce(&s_block, &aug.tokens)?);
        let s_arg = ToyModel::argmax_rows(&s_block);
        let t_arg = ToyModel::argmax_rows(&t_full);
        for &a in &sample.answers {
            let (i, target) = (aug.index_map[a], sample.tokens[a + 1]);
            s_hits += usize::from(s_arg[i] == target);
            t_hits += usize::from(t_arg[i] == target);
            answers += 1;
        }
    }
    let k = samples.len() as f64;
    let acc = |h: usize| if answers == 0 { 0.0 } else { h as f64 / answers as f64 };
    Ok(EvalReport {
        kl: kl / k,
        teacher_full_ce: tf / k,
        teacher_block_ce: tb / k,
        student_block_ce: sb / k,
        student_answer_acc: acc(s_hits),
        teacher_answer_acc: acc(t_hits),
    })
}

/// Plain next-token training, used to produce toy teachers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Probability that a sample is shown in sink-prefixed form.
    pub sink_mix: f64,
    pub sinks_per_block: usize,
    /// Probability that a sample is trained under its block mask instead of
    /// full causal attention.
    pub block_mix: f64,
    /// Loss multiplier at answer positions.
    pub answer_weight: f64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            lr_max: 3e-3,
            lr_min: 3e-4,
            seed: 0,
            sink_mix: 0.5,
            sinks_per_block: 4,
            block_mix: 0.0,
            answer_weight: 1.0,
        }
    }
}

/// Weighted next-token CE training. Returns the mean loss of every step.
pub fn train_language_model(model: &mut ToyModel, corpus: &[DistillSample], cfg: &LmTrainConfig) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(contract("empty training corpus"));
    }
    let mut rng = crate::rng::stream(cfg.seed, "lm_train");
    let mut opt = AdamW::new(AdamConfig::default());
    let sink_token = model.config().sink_token();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min);
        let mut grads = model.params().zeros_like();
        let mut step_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let sample = &corpus[rng.random_range(0..corpus.len())];
            let sinks = if rng.random::<f64>() < cfg.sink_mix { cfg.sinks_per_block } else { 0 };
            let aug = sample.augment(SinkLayout {
                sink_token,
                sinks_per_block: sinks,
            })?;
            let n = aug.tokens.len();
            let mask = if rng.random::<f64>() < cfg.block_mix {
                build_block_mask(&aug.partition)
            } else {
                build_full_causal(n)?
            };
            let mut w = vec![1.0; n - 1];
            for &a in &sample.answers {
                w[aug.index_map[a]] = cfg.answer_weight;
            }
            let w = sink_adjusted(w, &aug.is_sink);
            let (out, trace) = model.forward_traced(&aug.tokens, &mask, &positions(n))?;
            let (loss, d) = super::loss::weighted_ce_grad(&out.logits, &aug.tokens, &w)?;
            step_loss += loss / cfg.batch_size as f64;
            grads.add_scaled(&model.backward(&trace, Some(&d), None)?, 1.0 / cfg.batch_size as f64);
        }
        opt.step(model.params_mut().tensors_mut(), grads.tensors(), lr);
        losses.push(step_loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Vec<DistillSample> {
        (0..4)
            .map(|s| DistillSample {
                tokens: (0..10).map(|i| ((i * 3 + s) % 9) as TokenId).collect(),
                block_lengths: vec![3, 3, 4],
                answers: vec![8],
            })
            .collect()
    }

    fn models() -> (ToyModel, ToyModel) {
        let teacher = ToyModel::new(ModelConfig::new(1, 2, 4, 12, 64, 1)).unwrap();
        let student = teacher.clone();
        (teacher, student)
    }

    #[test]
    fn zero_lr_keeps_student() {
        let (teacher, student) = models();
        let cfg = DistillConfig {
            lr_max: 0.0,
            lr_min: 0.0,
            sinks_per_block: 2,
            ..DistillConfig::default()
        };
        let before = teacher.params().clone();
        let mut d = Distiller::new(&teacher, student, cfg).unwrap();
        for _ in 0..3 {
            d.train_step(&tiny_corpus()).unwrap();
        }
        assert_eq!(d.student().params(), &before);
        assert_eq!(teacher.params(), &before);
    }

    #[test]
    fn caching_does_not_change_losses() {
        let (teacher, student) = models();
        let run = |cache: bool| {
            let cfg = DistillConfig {
                cache_teacher: cache,
                steps: 6,
                ..DistillConfig::default()
            };
            let mut d = Distiller::new(&teacher, student.clone(), cfg).unwrap();
            (0..6).map(|_| d.train_step(&tiny_corpus()).unwrap().total).collect::<Vec<_>>()
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn full_dropout_corrupts_every_context_block() {
        let (teacher, student) = models();
        let cfg = DistillConfig {
            dropout_rate: 1.0,
            ..DistillConfig::default()
        };
        let mut d = Distiller::new(&teacher, student, cfg).unwrap();
        let m = d.train_step(&tiny_corpus()).unwrap();
        assert!(m.corrupted.iter().all(|c| c == &vec![0, 1]));
    }

    #[test]
    fn mismatched_configs_rejected() {
        let (teacher, _) = models();
        let other = ToyModel::new(ModelConfig::new(2, 2, 4, 12, 64, 1)).unwrap();
        assert!(Distiller::new(&teacher, other, DistillConfig::default()).is_err());
    }

    #[test]
    fn language_model_loss_falls() {
        let (mut m, _) = models();
        let cfg = LmTrainConfig {
            steps: 60,
            sinks_per_block: 2,
            ..LmTrainConfig::default()
        };
        let losses = train_language_model(&mut m, &tiny_corpus(), &cfg).unwrap();
        assert!(losses[55..].iter().sum::<f64>() < 0.75 * losses[..5].iter().sum::<f64>());
    }
}
