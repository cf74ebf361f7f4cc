//! Small numeric helpers shared by the losses and scorers.

use ndarray::ArrayView1;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(row: ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(row: ArrayView1<f64>) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|&x| x - lse).collect()
}

/// Shannon entropy (nats) of the softmax of `row`.
pub fn entropy(row: ArrayView1<f64>) -> f64 {
    let logp = log_softmax(row);
    -logp
        .iter()
        .map(|&lp| if lp.is_finite() { lp.exp() * lp } else { 0.0 })
        .sum::<f64>()
}
