use rayon::prelude::*;

use super::ops::{add_bias, gelu, matmul, rms_norm, softmax_in_place};
use super::{InjectionSpec, ToyModel, NORM_EPS};
use crate::error::{Error, Result};
use crate::sequence::TokenSequence;
use crate::store::RsTensor;

/// Intermediates of one layer, kept for the backward pass.
pub(crate) struct LayerCache {
    pub x_in: Vec<f32>,
    pub rms1: Vec<f32>,
    pub n1: Vec<f32>,
    pub q: Vec<f32>,
    pub k: Vec<f32>,
    pub v: Vec<f32>,
    /// `[head][t][s]`, zero above the diagonal.
    pub probs: Vec<f32>,
    pub attn: Vec<f32>,
    pub attn_out: Vec<f32>,
    pub x_mid: Vec<f32>,
    pub rms2: Vec<f32>,
    pub n2: Vec<f32>,
    pub u: Vec<f32>,
    pub act: Vec<f32>,
    pub mlp_out: Vec<f32>,
}

pub(crate) struct ForwardCache {
    pub len: usize,
    pub layers: Vec<LayerCache>,
    pub x_final: Vec<f32>,
    pub rms_f: Vec<f32>,
    pub nf: Vec<f32>,
    /// `[len × vocab]` when all positions were requested, else `[1 × vocab]`
    /// for the last position.
    pub logits: Vec<f32>,
}

pub(crate) fn check_tokens(model: &ToyModel, tokens: &[u32]) -> Result<()> {
    let c = &model.config;
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    if tokens.len() > c.max_seq {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: c.max_seq,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= c.vocab) {
        return Err(Error::InvariantViolation(format!(
            "token id {t} outside vocab {}",
            c.vocab
        )));
    }
    Ok(())
}

pub(crate) fn run(
    model: &ToyModel,
    tokens: &[u32],
    injection: Option<&InjectionSpec>,
    all_logits: bool,
) -> ForwardCache {
    let c = &model.config;
    let (d, m, v, h, dh) = (c.d_model, c.d_mlp, c.vocab, c.n_heads, c.head_dim());
    let t_len = tokens.len();
    let scale = 1.0 / (dh as f32).sqrt();

    let mut x = vec![0.0f32; t_len * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let e = &model.tok_emb[tok as usize * d..(tok as usize + 1) * d];
        let p = &model.pos_emb[t * d..(t + 1) * d];
        for ((o, &a), &b) in x[t * d..(t + 1) * d].iter_mut().zip(e).zip(p) {
            *o = a + b;
        }
    }

    let mut layers = Vec::with_capacity(c.n_layers);
    for (l, lp) in model.layers.iter().enumerate() {
        if let Some(inj) = injection.filter(|inj| inj.layer == l) {
            x[(t_len - 1) * d..].copy_from_slice(&inj.replacement);
        }
        let x_in = x;
        let (n1, rms1) = rms_norm(&x_in, d, &lp.attn_gain, NORM_EPS);
        let q = matmul(&n1, t_len, d, &lp.wq, d);
        let k = matmul(&n1, t_len, d, &lp.wk, d);
        let vv = matmul(&n1, t_len, d, &lp.wv, d);

        let mut probs = vec![0.0f32; h * t_len * t_len];
        let mut attn = vec![0.0f32; t_len * d];
        for head in 0..h {
            let off = head * dh;
            for t in 0..t_len {
                let row = &mut probs[(head * t_len + t) * t_len..(head * t_len + t) * t_len + t + 1];
                let qt = &q[t * d + off..t * d + off + dh];
                for (s, p) in row.iter_mut().enumerate() {
                    *p = super::ops::dot(qt, &k[s * d + off..s * d + off + dh]) * scale;
                }
                softmax_in_place(row);
                let o = &mut attn[t * d + off..t * d + off + dh];
                for (s, &p) in row.iter().enumerate() {
                    for (oi, &vi) in o.iter_mut().zip(&vv[s * d + off..s * d + off + dh]) {
                        *oi += p * vi;
                    }
                }
            }
        }
        let attn_out = matmul(&attn, t_len, d, &lp.wo, d);
        let x_mid: Vec<f32> = x_in.iter().zip(&attn_out).map(|(a, b)| a + b).collect();

        let (n2, rms2) = rms_norm(&x_mid, d, &lp.mlp_gain, NORM_EPS);
        let mut u = matmul(&n2, t_len, d, &lp.w_up, m);
        add_bias(&mut u, &lp.b_up);
        let act: Vec<f32> = u.iter().map(|&z| gelu(z)).collect();
        let mut mlp_out = matmul(&act, t_len, m, &lp.w_down, d);
        add_bias(&mut mlp_out, &lp.b_down);
        x = x_mid.iter().zip(&mlp_out).map(|(a, b)| a + b).collect();

        layers.push(LayerCache {
            x_in,
            rms1,
            n1,
            q,
            k,
            v: vv,
            probs,
            attn,
            attn_out,
            x_mid,
            rms2,
            n2,
            u,
            act,
            mlp_out,
        });
    }

    let (nf, rms_f) = rms_norm(&x, d, &model.final_gain, NORM_EPS);
    let logits = if all_logits {
        matmul(&nf, t_len, d, &model.unembed, v)
    } else {
        matmul(&nf[(t_len - 1) * d..], 1, d, &model.unembed, v)
    };
    ForwardCache {
        len: t_len,
        layers,
        x_final: x,
        rms_f,
        nf,
        logits,
    }
}

/// Last-token residuals at every hook plus the last-position logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    /// `[2L × D]`: sublayer `2l` is layer `l` PreAttn, `2l + 1` is PreMlp.
    pub residuals: Vec<f32>,
    pub logits: Vec<f32>,
    pub sublayers: usize,
    pub units: usize,
}

impl Capture {
    pub fn sublayer(&self, s: usize) -> &[f32] {
        &self.residuals[s * self.units..(s + 1) * self.units]
    }

    /// As a single-sample tensor.
    pub fn to_tensor(&self) -> Result<RsTensor> {
        RsTensor::new(self.residuals.clone(), 1, self.sublayers, self.units)
    }
}

/// Residuals and block outputs at every position.
#[derive(Debug, Clone)]
pub struct Trace {
    pub len: usize,
    pub units: usize,
    /// `[2L][len × D]`, pre-normalization residual entering each block.
    pub residuals: Vec<Vec<f32>>,
    /// `[2L][len × D]`, what each block adds to the residual.
    pub block_outputs: Vec<Vec<f32>>,
    /// `[len × D]` after the last block.
    pub final_residual: Vec<f32>,
}

fn capture_from(cache: &ForwardCache, model: &ToyModel) -> Capture {
    let d = model.config.d_model;
    let last = cache.len - 1;
    let mut residuals = Vec::with_capacity(2 * model.config.n_layers * d);
    for lc in &cache.layers {
        residuals.extend_from_slice(&lc.x_in[last * d..(last + 1) * d]);
        residuals.extend_from_slice(&lc.x_mid[last * d..(last + 1) * d]);
    }
    Capture {
        residuals,
        logits: cache.logits.clone(),
        sublayers: 2 * model.config.n_layers,
        units: d,
    }
}

pub fn forward_capture(model: &ToyModel, seq: &TokenSequence) -> Result<Capture> {
    check_tokens(model, seq.tokens())?;
    Ok(capture_from(&run(model, seq.tokens(), None, false), model))
}

/// Same as [`forward_capture`] with the last-token residual at the injection
/// hook replaced before that block reads it.
pub fn forward_inject(model: &ToyModel, seq: &TokenSequence, inj: &InjectionSpec) -> Result<Capture> {
    inj.check(&model.config)?;
    check_tokens(model, seq.tokens())?;
    Ok(capture_from(&run(model, seq.tokens(), Some(inj), false), model))
}

pub fn forward_trace(model: &ToyModel, tokens: &[u32]) -> Result<Trace> {
    check_tokens(model, tokens)?;
    let cache = run(model, tokens, None, false);
    let mut residuals = Vec::new();
    let mut block_outputs = Vec::new();
    for lc in cache.layers {
        residuals.push(lc.x_in);
        residuals.push(lc.x_mid);
        block_outputs.push(lc.attn_out);
        block_outputs.push(lc.mlp_out);
    }
    Ok(Trace {
        len: cache.len,
        units: model.config.d_model,
        residuals,
        block_outputs,
        final_residual: cache.x_final,
    })
}

/// Captures every sequence; row `b` is `forward_capture(corpus[b])`.
pub fn generate_dataset(model: &ToyModel, corpus: &[TokenSequence]) -> Result<RsTensor> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = corpus
        .par_iter()
        .map(|seq| forward_capture(model, seq).map(|c| c.residuals))
        .collect::<Result<Vec<_>>>()?;
    RsTensor::from_samples(&rows, model.config.sublayers(), model.config.d_model)
}
