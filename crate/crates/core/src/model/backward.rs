//! Hand-written reverse-mode gradients for [`ToyModel`].

use ndarray::{Array1, Array2};

use super::{ops, ModelParams, ToyModel, Trace};
use crate::error::{contract, Result};

/// Backward of `y = gain ⊙ x / rms(x)`. Accumulates into `dgain`, returns dx.
fn rms_norm_backward(
    x: &Array2<f64>,
    rms: &Array1<f64>,
    gain: &Array1<f64>,
    dy: &Array2<f64>,
    dgain: &mut Array1<f64>,
) -> Array2<f64> {
    let h = x.ncols() as f64;
    let mut dx = Array2::<f64>::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let (xr, dyr, r) = (x.row(i), dy.row(i), rms[i]);
        let mut dot = 0.0;
        for j in 0..x.ncols() {
            dgain[j] += dyr[j] * xr[j] / r;
            dot += gain[j] * dyr[j] * xr[j];
        }
        let mut dxr = dx.row_mut(i);
        for j in 0..x.ncols() {
            dxr[j] = gain[j] * dyr[j] / r - xr[j] * dot / (h * r * r * r);
        }
    }
    dx
}

fn silu_grad(u: f64) -> f64 {
    let s = ops::sigmoid(u);
    s * (1.0 + u * (1.0 - s))
}

impl ToyModel {
    /// Gradients of a scalar loss with respect to every parameter, given the
    /// loss gradient at the logits and/or at the final hidden states.
    pub fn backward(
        &self,
        trace: &Trace,
        dlogits: Option<&Array2<f64>>,
        dhidden: Option<&Array2<f64>>,
    ) -> Result<ModelParams> {
        let cfg = &self.config;
        let n = trace.len();
        let (h, hd) = (cfg.hidden_dim, cfg.head_dim);
        let mut grads = self.params.zeros_like();

        let mut dhf = Array2::<f64>::zeros((n, h));
        if let Some(dl) = dlogits {
            if dl.dim() != (n, cfg.vocab_size) {
                return Err(contract(format!("dlogits shape {:?} != ({n}, {})", dl.dim(), cfg.vocab_size)));
            }
            grads.unembed = trace.hidden.t().dot(dl);
            dhf += &dl.dot(&self.params.unembed.t());
        }
        if let Some(dh) = dhidden {
            if dh.dim() != (n, h) {
                return Err(contract(format!("dhidden shape {:?} != ({n}, {h})", dh.dim())));
            }
            dhf += dh;
        }

        let mut dx = rms_norm_backward(
            &trace.x_final,
            &trace.rms_final,
            &self.params.final_norm,
            &dhf,
            &mut grads.final_norm,
        );

        let scale = 1.0 / (hd as f64).sqrt();
        for (l, lt) in trace.layers.iter().enumerate().rev() {
            let lp = &self.params.layers[l];
            let gl = &mut grads.layers[l];

            // MLP residual branch
            gl.w_down = lt.act.t().dot(&dx);
            let dact = dx.dot(&lp.w_down.t());
            let mut du = dact;
            du.zip_mut_with(&lt.u, |d, &u| *d *= silu_grad(u));
            gl.w_up = lt.b.t().dot(&du);
            let db = du.dot(&lp.w_up.t());
            let mut dx_mid = dx;
            dx_mid += &rms_norm_backward(&lt.x_mid, &lt.rms2, &lp.mlp_norm, &db, &mut gl.mlp_norm);

            // attention residual branch
            gl.wo = lt.o.t().dot(&dx_mid);
            let do_ = dx_mid.dot(&lp.wo.t());
            let mut dq = Array2::<f64>::zeros((n, h));
            let mut dk = Array2::<f64>::zeros((n, h));
            let mut dv = Array2::<f64>::zeros((n, h));
            {
                let qs = lt.q.as_slice().expect("standard layout");
                let ks = lt.k.as_slice().expect("standard layout");
                let vs = lt.v.as_slice().expect("standard layout");
                let dos = do_.as_slice().expect("standard layout");
                let dqs = dq.as_slice_mut().expect("standard layout");
                let dks = dk.as_slice_mut().expect("standard layout");
                let dvs = dv.as_slice_mut().expect("standard layout");
                let mut dw = Vec::new();
                for i in 0..n {
                    let lo = trace.row_start[i];
                    let row_w = trace.row_offset[i]..trace.row_offset[i + 1];
                    for head in 0..cfg.num_heads {
                        let off = head * hd;
                        let w = &lt.weights[head][row_w.clone()];
                        let doi = &dos[i * h + off..i * h + off + hd];
                        dw.clear();
                        let mut wsum = 0.0;
                        for (idx, j) in (lo..=i).enumerate() {
                            let vj = &vs[j * h + off..j * h + off + hd];
                            let d = doi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                            wsum += w[idx] * d;
                            dw.push(d);
                            let dvj = &mut dvs[j * h + off..j * h + off + hd];
                            for (acc, g) in dvj.iter_mut().zip(doi) {
                                *acc += w[idx] * g;
                            }
                        }
                        for (idx, j) in (lo..=i).enumerate() {
                            let ds = w[idx] * (dw[idx] - wsum) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for t in 0..hd {
                                dqs[i * h + off + t] += ds * ks[j * h + off + t];
                                dks[j * h + off + t] += ds * qs[i * h + off + t];
                            }
                        }
                    }
                }
            }
            // undo the rotary encoding
            for (i, &p) in trace.positions.iter().enumerate() {
                self.rope().rotate(dq.row_mut(i).into_slice().expect("row"), -(p as f64));
                self.rope().rotate(dk.row_mut(i).into_slice().expect("row"), -(p as f64));
            }
            gl.wq = lt.a.t().dot(&dq);
            gl.wk = lt.a.t().dot(&dk);
            gl.wv = lt.a.t().dot(&dv);
            let da = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
            dx = dx_mid;
            dx += &rms_norm_backward(&lt.x_in, &lt.rms1, &lp.attn_norm, &da, &mut gl.attn_norm);
        }

        for (i, &t) in trace.tokens.iter().enumerate() {
            let mut row = grads.embed.row_mut(t as usize);
            row += &dx.row(i);
        }
        Ok(grads)
    }
}
