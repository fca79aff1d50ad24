//! Seedable pre-norm decoder-only transformer.
//!
//! Each layer computes
//!
//! ```text
//! h_mid = h_in  + Attn(RMSNorm(h_in))      // h_in  is captured as PreAttn
//! h_out = h_mid + MLP(RMSNorm(h_mid))      // h_mid is captured as PreMlp
//! ```
//!
//! with learned token and positional embeddings, causal multi-head attention
//! and a GELU MLP. Captures are copies of the residual at the last token,
//! taken before normalization.

mod forward;
mod ops;
mod train;

use serde::{Deserialize, Serialize};

use crate::container::{NamedTensor, ParamFile, TensorData};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::sequence::BYTE_VOCAB;
use crate::store::HookPoint;

pub use forward::{forward_capture, forward_inject, forward_trace, generate_dataset, Capture, Trace};
pub use train::{lm_loss_and_grad, train_lm, LmTrainConfig, LmTrainReport};

pub const CHECKPOINT_KIND: &str = "toy-transformer";
pub const INIT_STD: f32 = 0.02;
pub const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_mlp: 256,
            vocab: BYTE_VOCAB,
            // Fits any line that passes the default 100..500 character filter
            // plus BOS, as long as it is ASCII.
            max_seq: 512,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers < 1 {
            return fail("n_layers must be at least 1".into());
        }
        if self.d_model < 1 || self.n_heads < 1 {
            return fail("d_model and n_heads must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab < BYTE_VOCAB {
            return fail(format!("vocab {} is below {BYTE_VOCAB}", self.vocab));
        }
        if self.d_mlp < 1 {
            return fail("d_mlp must be positive".into());
        }
        if self.max_seq < 2 {
            return fail("max_seq must be at least 2".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn sublayers(&self) -> usize {
        2 * self.n_layers
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_gain: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub mlp_gain: Vec<f32>,
    pub w_up: Vec<f32>,
    pub b_up: Vec<f32>,
    pub w_down: Vec<f32>,
    pub b_down: Vec<f32>,
}

/// Model parameters. Matrices are row-major `[in × out]` so `y = x · W`.
///
/// The same struct doubles as the gradient buffer during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub tok_emb: Vec<f32>,
    pub pos_emb: Vec<f32>,
    pub layers: Vec<LayerParams>,
    pub final_gain: Vec<f32>,
    pub unembed: Vec<f32>,
}

/// Replace the last-token residual at a hook with a given vector.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    pub layer: usize,
    pub hook: HookPoint,
    pub replacement: Vec<f32>,
}

impl InjectionSpec {
    pub fn pre_attn(layer: usize, replacement: Vec<f32>) -> Self {
        Self {
            layer,
            hook: HookPoint::PreAttn,
            replacement,
        }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.layer >= config.n_layers {
            return Err(Error::LayerOutOfRange {
                layer: self.layer,
                n_layers: config.n_layers,
            });
        }
        if self.hook != HookPoint::PreAttn {
            return Err(Error::UnsupportedHook(format!(
                "injection is only defined at pre_attn, got {}",
                self.hook
            )));
        }
        if self.replacement.len() != config.d_model {
            return Err(Error::DimensionMismatch {
                expected: config.d_model,
                got: self.replacement.len(),
            });
        }
        if self.replacement.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("replacement vector is not finite".into()));
        }
        Ok(())
    }

    /// Sublayer index this injection overwrites.
    pub fn sublayer(&self) -> usize {
        2 * self.layer
    }
}

impl ToyModel {
    /// Gaussian(0, 0.02) weight matrices and embeddings, unit norm gains and
    /// zero biases, all drawn from one stream seeded by `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let mut gauss = |n: usize| -> Vec<f32> {
            (0..n).map(|_| (rng.normal() as f32) * INIT_STD).collect()
        };
        let (d, m, v) = (config.d_model, config.d_mlp, config.vocab);
        let tok_emb = gauss(v * d);
        let pos_emb = gauss(config.max_seq * d);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                attn_gain: vec![1.0; d],
                wq: gauss(d * d),
                wk: gauss(d * d),
                wv: gauss(d * d),
                wo: gauss(d * d),
                mlp_gain: vec![1.0; d],
                w_up: gauss(d * m),
                b_up: vec![0.0; m],
                w_down: gauss(m * d),
                b_down: vec![0.0; d],
            })
            .collect();
        let final_gain = vec![1.0; d];
        let unembed = gauss(d * v);
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            layers,
            final_gain,
            unembed,
        })
    }

    /// All-zero buffer with this model's shapes.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, t) in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let (d, m, v) = (c.d_model, c.d_mlp, c.vocab);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![c.max_seq, d]),
        ];
        for l in 0..c.n_layers {
            let p = |n: &str| format!("layers.{l}.{n}");
            out.extend([
                (p("attn_gain"), vec![d]),
                (p("wq"), vec![d, d]),
                (p("wk"), vec![d, d]),
                (p("wv"), vec![d, d]),
                (p("wo"), vec![d, d]),
                (p("mlp_gain"), vec![d]),
                (p("w_up"), vec![d, m]),
                (p("b_up"), vec![m]),
                (p("w_down"), vec![m, d]),
                (p("b_down"), vec![d]),
            ]);
        }
        out.push(("final_gain".to_string(), vec![d]));
        out.push(("unembed".to_string(), vec![d, v]));
        out
    }

    fn refs(&self) -> Vec<&Vec<f32>> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend([
                &l.attn_gain, &l.wq, &l.wk, &l.wv, &l.wo, &l.mlp_gain, &l.w_up, &l.b_up,
                &l.w_down, &l.b_down,
            ]);
        }
        out.push(&self.final_gain);
        out.push(&self.unembed);
        out
    }

    fn refs_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_gain,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.mlp_gain,
                &mut l.w_up,
                &mut l.b_up,
                &mut l.w_down,
                &mut l.b_down,
            ]);
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.unembed);
        out
    }

    /// `(name, shape, values)` for every parameter tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        self.shapes()
            .into_iter()
            .zip(self.refs())
            .map(|((n, s), v)| (n, s, v.as_slice()))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f32])> {
        let shapes = self.shapes();
        shapes
            .into_iter()
            .zip(self.refs_mut())
            .map(|((n, s), v)| (n, s, v.as_mut_slice()))
            .collect()
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        self.tensors_mut()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, v)| v)
    }

    pub fn parameter_count(&self) -> usize {
        self.refs().iter().map(|v| v.len()).sum()
    }

    pub fn to_param_file(&self) -> ParamFile {
        ParamFile {
            kind: CHECKPOINT_KIND.to_string(),
            config: serde_json::to_value(self.config).expect("config serializes"),
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, shape, v)| NamedTensor {
                    name,
                    shape,
                    data: TensorData::F32(v.to_vec()),
                })
                .collect(),
        }
    }

    pub fn from_param_file(file: &ParamFile) -> Result<Self> {
        if file.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!(
                "checkpoint kind is {:?}, expected {CHECKPOINT_KIND:?}",
                file.kind
            )));
        }
        let config: ModelConfig = serde_json::from_value(file.config.clone())
            .map_err(|e| Error::Format(format!("model config: {e}")))?;
        config.validate()?;
        let mut model = Self::init(config)?;
        for (name, shape, dst) in model.tensors_mut() {
            let t = file
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            match &t.data {
                TensorData::F32(v) => dst.copy_from_slice(v),
                TensorData::F64(_) => {
                    return Err(Error::Format(format!("tensor {name} is not f32")))
                }
            }
            if dst.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvariantViolation(format!("tensor {name} is not finite")));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_param_file().write(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_param_file(&ParamFile::read(path)?)
    }
}
