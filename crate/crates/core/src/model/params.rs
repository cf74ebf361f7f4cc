use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_norm: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub mlp_norm: Array1<f64>,
    /// hidden × mlp
    pub w_up: Array2<f64>,
    /// mlp × hidden
    pub w_down: Array2<f64>,
}

/// All trainable tensors of the toy model. Gradients and optimizer moments
/// reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// vocab × hidden
    pub embed: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_norm: Array1<f64>,
    /// hidden × vocab
    pub unembed: Array2<f64>,
}

fn trunc_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            break x;
        }
    })
}

impl ModelParams {
    /// Truncated-normal (σ = 0.02, cut at 2σ) matrices and unit norm gains,
    /// drawn from the config seed.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = crate::rng::stream(cfg.seed, "init");
        let (h, f, v) = (cfg.hidden_dim, cfg.mlp_dim(), cfg.vocab_size);
        let embed = trunc_normal(&mut rng, v, h);
        let layers = (0..cfg.num_layers)
            .map(|_| LayerParams {
                attn_norm: Array1::ones(h),
                wq: trunc_normal(&mut rng, h, h),
                wk: trunc_normal(&mut rng, h, h),
                wv: trunc_normal(&mut rng, h, h),
                wo: trunc_normal(&mut rng, h, h),
                mlp_norm: Array1::ones(h),
                w_up: trunc_normal(&mut rng, h, f),
                w_down: trunc_normal(&mut rng, f, h),
            })
            .collect();
        let unembed = trunc_normal(&mut rng, h, v);
        Self {
            embed,
            layers,
            final_norm: Array1::ones(h),
            unembed,
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (h, f, v) = (cfg.hidden_dim, cfg.mlp_dim(), cfg.vocab_size);
        Self {
            embed: Array2::zeros((v, h)),
            layers: (0..cfg.num_layers)
                .map(|_| LayerParams {
                    attn_norm: Array1::zeros(h),
                    wq: Array2::zeros((h, h)),
                    wk: Array2::zeros((h, h)),
                    wv: Array2::zeros((h, h)),
                    wo: Array2::zeros((h, h)),
                    mlp_norm: Array1::zeros(h),
                    w_up: Array2::zeros((h, f)),
                    w_down: Array2::zeros((f, h)),
                })
                .collect(),
            final_norm: Array1::zeros(h),
            unembed: Array2::zeros((h, v)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// Every tensor as a flat slice, in a fixed order: embed, then per layer
    /// (attn_norm, wq, wk, wv, wo, mlp_norm, w_up, w_down), final_norm, unembed.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embed.as_slice().expect("standard layout")];
        for l in &self.layers {
            out.push(l.attn_norm.as_slice().expect("standard layout"));
            for m in [&l.wq, &l.wk, &l.wv, &l.wo] {
                out.push(m.as_slice().expect("standard layout"));
            }
            out.push(l.mlp_norm.as_slice().expect("standard layout"));
            out.push(l.w_up.as_slice().expect("standard layout"));
            out.push(l.w_down.as_slice().expect("standard layout"));
        }
        out.push(self.final_norm.as_slice().expect("standard layout"));
        out.push(self.unembed.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embed.as_slice_mut().expect("standard layout")];
        for l in &mut self.layers {
            out.push(l.attn_norm.as_slice_mut().expect("standard layout"));
            for m in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo] {
                out.push(m.as_slice_mut().expect("standard layout"));
            }
            out.push(l.mlp_norm.as_slice_mut().expect("standard layout"));
            out.push(l.w_up.as_slice_mut().expect("standard layout"));
            out.push(l.w_down.as_slice_mut().expect("standard layout"));
        }
        out.push(self.final_norm.as_slice_mut().expect("standard layout"));
        out.push(self.unembed.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["embed".to_string()];
        for i in 0..self.layers.len() {
            for name in ["attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_up", "w_down"] {
                out.push(format!("layers.{i}.{name}"));
            }
        }
        out.push("final_norm".into());
        out.push("unembed".into());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter at flat index `idx` over [`Self::tensors`] order.
    pub fn get(&self, mut idx: usize) -> f64 {
        for t in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut idx: usize, value: f64) {
        for t in self.tensors_mut() {
            if idx < t.len() {
                t[idx] = value;
                return;
            }
            idx -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::new(2, 2, 4, 11, 32, 5);
        let a = ModelParams::init(&cfg);
        let b = ModelParams::init(&cfg);
        assert_eq!(a.to_flat(), b.to_flat());
        let c = ModelParams::init(&ModelConfig { seed: 6, ..cfg.clone() });
        assert_ne!(a.to_flat(), c.to_flat());
        assert!(a.embed.iter().all(|x| x.abs() <= 0.04));
    }

    #[test]
    fn flat_indexing_round_trips() {
        let cfg = ModelConfig::new(1, 2, 4, 11, 16, 1);
        let mut p = ModelParams::init(&cfg);
        assert_eq!(p.tensors().len(), p.tensor_names().len());
        let n = p.num_params();
        p.set(n - 1, 3.5);
        assert_eq!(p.get(n - 1), 3.5);
        let flat = p.to_flat();
        let mut q = ModelParams::zeros(&cfg);
        q.load_flat(&flat);
        assert_eq!(p, q);
    }
}
