use ndarray::Array2;
use serde::Serialize;

use crate::error::{contract, Result};
use crate::mask::{BlockPartition, DropoutPlan};
use crate::model::ops;
use crate::TokenId;

/// Cross-entropy of predicting `tokens[i + 1]` from row `i`, for `i < n - 1`.
pub fn per_token_ce(logits: &Array2<f64>, tokens: &[TokenId]) -> Result<Vec<f64>> {
    if logits.nrows() != tokens.len() {
        return Err(contract(format!("{} logit rows for {} tokens", logits.nrows(), tokens.len())));
    }
    Ok((0..tokens.len().saturating_sub(1))
        .map(|i| {
            let row = logits.row(i);
            ops::log_sum_exp(row) - row[tokens[i + 1] as usize]
        })
        .collect())
}

/// `w = max(ce_block − ce_full, 0)·α + β`, elementwise.
pub fn token_weights(ce_block: &[f64], ce_full: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    if ce_block.len() != ce_full.len() {
        return Err(contract(format!(
            "block CE has {} entries, full CE has {}",
            ce_block.len(),
            ce_full.len()
        )));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(contract("alpha and beta must be non-negative"));
    }
    Ok(ce_block
        .iter()
        .zip(ce_full)
        .map(|(b, f)| (b - f).max(0.0) * alpha + beta)
        .collect())
}

fn check_pair(teacher: &Array2<f64>, student: &Array2<f64>, partition: &BlockPartition) -> Result<()> {
    if teacher.dim() != student.dim() {
        return Err(contract(format!("teacher {:?} vs student {:?} logits", teacher.dim(), student.dim())));
    }
    if teacher.nrows() != partition.len() {
        return Err(contract("logit rows do not match the partition"));
    }
    Ok(())
}

fn kl_row(teacher: ndarray::ArrayView1<f64>, student: ndarray::ArrayView1<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let lp = ops::log_softmax(teacher);
    let lq = ops::log_softmax(student);
    let kl = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>();
    (kl.max(0.0), lp, lq)
}

fn included(partition: &BlockPartition, plan: &DropoutPlan) -> Result<Vec<usize>> {
    plan.validate(partition)?;
    let corrupted = plan.corrupted_tokens(partition);
    let idx: Vec<usize> = (0..partition.len()).filter(|&i| !corrupted[i]).collect();
    if idx.is_empty() {
        return Err(contract("every token is corrupted"));
    }
    Ok(idx)
}

/// Mean over tokens outside corrupted blocks of KL(teacher ‖ student).
pub fn block_dropout_kl(
    teacher: &Array2<f64>,
    student: &Array2<f64>,
    partition: &BlockPartition,
    plan: &DropoutPlan,
) -> Result<f64> {
    check_pair(teacher, student, partition)?;
    let idx = included(partition, plan)?;
    let sum: f64 = idx.iter().map(|&i| kl_row(teacher.row(i), student.row(i)).0).sum();
    Ok(sum / idx.len() as f64)
}

/// [`block_dropout_kl`] and its gradient with respect to the student logits.
pub fn block_dropout_kl_grad(
    teacher: &Array2<f64>,
    student: &Array2<f64>,
    partition: &BlockPartition,
    plan: &DropoutPlan,
) -> Result<(f64, Array2<f64>)> {
    check_pair(teacher, student, partition)?;
    let idx = included(partition, plan)?;
    let scale = 1.0 / idx.len() as f64;
    let mut grad = Array2::zeros(student.raw_dim());
    let mut sum = 0.0;
    for &i in &idx {
        let (kl, lp, lq) = kl_row(teacher.row(i), student.row(i));
        sum += kl;
        for (v, (a, b)) in lp.iter().zip(&lq).enumerate() {
            grad[[i, v]] = (b.exp() - a.exp()) * scale;
        }
    }
    Ok((sum * scale, grad))
}

/// Mean over positions `0..n-1` of `CE_i · w_i`.
pub fn weighted_ce(logits: &Array2<f64>, tokens: &[TokenId], weights: &[f64]) -> Result<f64> {
    let ce = per_token_ce(logits, tokens)?;
    if weights.len() != ce.len() {
        return Err(contract(format!("{} weights for {} predicted tokens", weights.len(), ce.len())));
    }
    if ce.is_empty() {
        return Ok(0.0);
    }
    Ok(ce.iter().zip(weights).map(|(c, w)| c * w).sum::<f64>() / ce.len() as f64)
}

/// [`weighted_ce`] and its gradient with respect to the logits.
pub fn weighted_ce_grad(logits: &Array2<f64>, tokens: &[TokenId], weights: &[f64]) -> Result<(f64, Array2<f64>)> {
    let value = weighted_ce(logits, tokens, weights)?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let m = weights.len();
    for i in 0..m {
        let p = ops::softmax(logits.row(i));
        let s = weights[i] / m as f64;
        for (v, pv) in p.iter().enumerate() {
            grad[[i, v]] = pv * s;
        }
        grad[[i, tokens[i + 1] as usize]] -= s;
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub weighted_ce: f64,
    pub kl: f64,
    pub total: f64,
}

/// Everything the combined loss reads for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub tokens: &'a [TokenId],
    pub partition: &'a BlockPartition,
    pub plan: &'a DropoutPlan,
    /// Teacher, full attention.
    pub teacher_logits: &'a Array2<f64>,
    /// Student, block attention.
    pub student_block_logits: &'a Array2<f64>,
    /// Student, block-dropout attention.
    pub student_dropout_logits: &'a Array2<f64>,
    /// One weight per predicted position (`n - 1`).
    pub weights: &'a [f64],
}

/// `CE(student block pass)·w + KL(teacher ‖ student dropout pass)`.
pub fn distillation_loss(x: &LossInputs) -> Result<LossBreakdown> {
    let weighted_ce = weighted_ce(x.student_block_logits, x.tokens, x.weights)?;
    let kl = block_dropout_kl(x.teacher_logits, x.student_dropout_logits, x.partition, x.plan)?;
    Ok(LossBreakdown {
        weighted_ce,
        kl,
        total: weighted_ce + kl,
    })
}

/// Loss plus gradients w.r.t. the block-pass and dropout-pass student logits.
pub fn distillation_loss_grad(x: &LossInputs) -> Result<(LossBreakdown, Array2<f64>, Array2<f64>)> {
    let (weighted_ce, d_block) = weighted_ce_grad(x.student_block_logits, x.tokens, x.weights)?;
    let (kl, d_drop) = block_dropout_kl_grad(x.teacher_logits, x.student_dropout_logits, x.partition, x.plan)?;
    Ok((
        LossBreakdown {
            weighted_ce,
            kl,
            total: weighted_ce + kl,
        },
        d_block,
        d_drop,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn weight_examples() {
        let w = token_weights(&[1.5, 0.5, 2.0], &[1.0, 1.0, 1.0], 0.2, 0.1).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-12);
        assert_eq!(w[1], 0.1);
        let w = token_weights(&[2.0], &[1.0], 0.5, 0.1).unwrap();
        assert!((w[0] - 0.6).abs() < 1e-12);
        assert!(token_weights(&[1.0], &[1.0, 2.0], 0.2, 0.1).is_err());
    }

    #[test]
    fn kl_identity_and_delta_vs_uniform() {
        let p = BlockPartition::single(2).unwrap();
        let t = array![[1.0, 2.0, 3.0], [0.5, 0.0, -1.0]];
        assert!(block_dropout_kl(&t, &t, &p, &DropoutPlan::empty()).unwrap().abs() < 1e-12);

        let delta = array![[0.0, 800.0, 0.0, 0.0]];
        let uniform = array![[0.0, 0.0, 0.0, 0.0]];
        let one = BlockPartition::single(1).unwrap();
        let kl = block_dropout_kl(&delta, &uniform, &one, &DropoutPlan::empty()).unwrap();
        assert!((kl - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn kl_gradient_is_q_minus_p() {
        let p = BlockPartition::from_lengths(&[1, 2]).unwrap();
        let t = array![[1.0, 0.0], [0.3, -0.2], [2.0, 1.0]];
        let s = array![[0.0, 0.0], [0.1, 0.4], [-1.0, 1.0]];
        let plan = DropoutPlan::new([0], 0.5);
        let (v, g) = block_dropout_kl_grad(&t, &s, &p, &plan).unwrap();
        assert_eq!(v, block_dropout_kl(&t, &s, &p, &plan).unwrap());
        assert_eq!(g.row(0).to_vec(), vec![0.0, 0.0]);
        let eps = 1e-6;
        for (i, j) in [(1, 0), (2, 1)] {
            let mut up = s.clone();
            up[[i, j]] += eps;
            let mut down = s.clone();
            down[[i, j]] -= eps;
            let num = (block_dropout_kl(&t, &up, &p, &plan).unwrap() - block_dropout_kl(&t, &down, &p, &plan).unwrap())
                / (2.0 * eps);
            assert!((num - g[[i, j]]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_weights_and_equal_student_give_zero() {
        let tokens = [0, 1, 2];
        let p = BlockPartition::from_lengths(&[1, 2]).unwrap();
        let logits = array![[1.0, 0.0, 0.2], [0.1, 0.4, 0.0], [0.0, 0.0, 1.0]];
        let x = LossInputs {
            tokens: &tokens,
            partition: &p,
            plan: &DropoutPlan::empty(),
            teacher_logits: &logits,
            student_block_logits: &logits,
            student_dropout_logits: &logits,
            weights: &[0.0, 0.0],
        };
        let l = distillation_loss(&x).unwrap();
        assert_eq!(l.total, 0.0);

        let unit = LossInputs {
            weights: &[1.0, 1.0],
            ..x
        };
        let l = distillation_loss(&unit).unwrap();
        let plain = per_token_ce(&logits, &tokens).unwrap().iter().sum::<f64>() / 2.0;
        assert_eq!(l.weighted_ce, plain);
        assert_eq!(l.kl, 0.0);
    }
}
