//! Next-token training for the toy model (hand-written backward pass).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{check_tokens, run};
use super::ops::{acc_rows, acc_xt_dy, gelu_grad, matmul_wt, rms_norm_backward};
use super::ToyModel;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeededRng;
use crate::sequence::TokenSequence;

/// Mean next-token cross-entropy over the sequence and its gradient.
pub fn lm_loss_and_grad(model: &ToyModel, tokens: &[u32]) -> Result<(f64, ToyModel)> {
    check_tokens(model, tokens)?;
    if tokens.len() < 2 {
        return Err(Error::TooShort {
            len: tokens.len(),
            min: 2,
        });
    }
    let c = &model.config;
    let (d, m, v, h, dh) = (c.d_model, c.d_mlp, c.vocab, c.n_heads, c.head_dim());
    let t_len = tokens.len();
    let n_pred = t_len - 1;
    let scale = 1.0 / (dh as f32).sqrt();
    let cache = run(model, tokens, None, true);
    let mut grad = model.zeros_like();

    // cross-entropy
    let mut loss = 0.0f64;
    let mut dlogits = vec![0.0f32; t_len * v];
    for t in 0..n_pred {
        let row = &cache.logits[t * v..(t + 1) * v];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = row.iter().map(|&z| ((z - max) as f64).exp()).sum();
        let target = tokens[t + 1] as usize;
        loss += sum.ln() + max as f64 - row[target] as f64;
        let dl = &mut dlogits[t * v..(t + 1) * v];
        for (j, g) in dl.iter_mut().enumerate() {
            *g = ((((row[j] - max) as f64).exp() / sum) / n_pred as f64) as f32;
        }
        dl[target] -= 1.0 / n_pred as f32;
    }
    loss /= n_pred as f64;

    acc_xt_dy(&mut grad.unembed, &cache.nf, t_len, d, &dlogits, v);
    let dnf = matmul_wt(&dlogits, t_len, v, &model.unembed, d);
    let mut dx = rms_norm_backward(
        &dnf,
        &cache.x_final,
        &cache.rms_f,
        d,
        &model.final_gain,
        &mut grad.final_gain,
    );

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &model.layers[l];
        let gl = &mut grad.layers[l];

        // MLP block: x_out = x_mid + gelu(n2 W_up + b_up) W_down + b_down
        acc_xt_dy(&mut gl.w_down, &lc.act, t_len, m, &dx, d);
        acc_rows(&mut gl.b_down, &dx, d);
        let dact = matmul_wt(&dx, t_len, d, &lp.w_down, m);
        let du: Vec<f32> = dact
            .iter()
            .zip(&lc.u)
            .map(|(&g, &u)| g * gelu_grad(u))
            .collect();
        acc_xt_dy(&mut gl.w_up, &lc.n2, t_len, d, &du, m);
        acc_rows(&mut gl.b_up, &du, m);
        let dn2 = matmul_wt(&du, t_len, m, &lp.w_up, d);
        let dmid = rms_norm_backward(&dn2, &lc.x_mid, &lc.rms2, d, &lp.mlp_gain, &mut gl.mlp_gain);
        for (a, b) in dx.iter_mut().zip(&dmid) {
            *a += b;
        }

        // attention block: x_mid = x_in + attn · W_o
        acc_xt_dy(&mut gl.wo, &lc.attn, t_len, d, &dx, d);
        let dattn = matmul_wt(&dx, t_len, d, &lp.wo, d);
        let mut dq = vec![0.0f32; t_len * d];
        let mut dk = vec![0.0f32; t_len * d];
        let mut dv = vec![0.0f32; t_len * d];
        let mut dp = vec![0.0f32; t_len];
        for head in 0..h {
            let off = head * dh;
            for t in 0..t_len {
                let p = &lc.probs[(head * t_len + t) * t_len..(head * t_len + t) * t_len + t + 1];
                let dout = &dattn[t * d + off..t * d + off + dh];
                let mut weighted = 0.0f32;
                for s in 0..=t {
                    let vs = &lc.v[s * d + off..s * d + off + dh];
                    dp[s] = super::ops::dot(dout, vs);
                    weighted += p[s] * dp[s];
                    for (g, &o) in dv[s * d + off..s * d + off + dh].iter_mut().zip(dout) {
                        *g += p[s] * o;
                    }
                }
                for s in 0..=t {
                    let ds = p[s] * (dp[s] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for i in 0..dh {
                        dq[t * d + off + i] += ds * lc.k[s * d + off + i];
                        dk[s * d + off + i] += ds * lc.q[t * d + off + i];
                    }
                }
            }
        }
        acc_xt_dy(&mut gl.wq, &lc.n1, t_len, d, &dq, d);
        acc_xt_dy(&mut gl.wk, &lc.n1, t_len, d, &dk, d);
        acc_xt_dy(&mut gl.wv, &lc.n1, t_len, d, &dv, d);
        let mut dn1 = matmul_wt(&dq, t_len, d, &lp.wq, d);
        for (a, b) in dn1.iter_mut().zip(matmul_wt(&dk, t_len, d, &lp.wk, d)) {
            *a += b;
        }
        for (a, b) in dn1.iter_mut().zip(matmul_wt(&dv, t_len, d, &lp.wv, d)) {
            *a += b;
        }
        let din = rms_norm_backward(&dn1, &lc.x_in, &lc.rms1, d, &lp.attn_gain, &mut gl.attn_gain);
        for (a, b) in dx.iter_mut().zip(&din) {
            *a += b;
        }
    }

    for (t, &tok) in tokens.iter().enumerate() {
        let g = &dx[t * d..(t + 1) * d];
        for (e, &gi) in grad.tok_emb[tok as usize * d..(tok as usize + 1) * d].iter_mut().zip(g) {
            *e += gi;
        }
        for (e, &gi) in grad.pos_emb[t * d..(t + 1) * d].iter_mut().zip(g) {
            *e += gi;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Sequences are cut to their first `max_tokens` tokens during training.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            batch_size: 8,
            lr: 3e-3,
            max_tokens: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    /// Mean batch loss per step, in nats per token.
    pub losses: Vec<f64>,
}

/// Brief Adam training on next-token prediction. Deterministic per seed:
/// per-sequence gradients are summed in batch order.
pub fn train_lm(
    model: &mut ToyModel,
    corpus: &[TokenSequence],
    cfg: &LmTrainConfig,
) -> Result<LmTrainReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cfg.batch_size == 0 || cfg.max_tokens < 2 || cfg.lr <= 0.0 {
        return Err(Error::Config(
            "batch_size must be >= 1, max_tokens >= 2 and lr > 0".into(),
        ));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let lens: Vec<usize> = model.tensors().iter().map(|(_, _, v)| v.len()).collect();
    let mut adam = Adam::<f32>::new(AdamConfig::with_lr(cfg.lr), lens);
    let mut losses = Vec::with_capacity(cfg.steps);
    let limit = cfg.max_tokens.min(model.config.max_seq);
    for step in 0..cfg.steps {
        let batch: Vec<&[u32]> = (0..cfg.batch_size)
            .map(|_| {
                let seq = &corpus[rng.below(corpus.len() as u64) as usize];
                &seq.tokens()[..seq.len().min(limit)]
            })
            .collect();
        let results = batch
            .par_iter()
            .map(|toks| lm_loss_and_grad(model, toks))
            .collect::<Result<Vec<_>>>()?;
        let mut total = model.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            for ((_, _, acc), (_, _, gi)) in total.tensors_mut().into_iter().zip(g.tensors()) {
                for (a, b) in acc.iter_mut().zip(gi) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / cfg.batch_size as f32;
        for (_, _, t) in total.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= inv);
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: step,
                detail: "language-model loss diverged".into(),
            });
        }
        losses.push(loss);
        let grads = total.tensors();
        let grad_refs: Vec<&[f32]> = grads.iter().map(|(_, _, v)| *v).collect();
        let mut params = model.tensors_mut();
        let mut param_refs: Vec<&mut [f32]> = params.iter_mut().map(|(_, _, v)| &mut **v).collect();
        adam.step(&mut param_refs, &grad_refs);
    }
    Ok(LmTrainReport { losses })
}
