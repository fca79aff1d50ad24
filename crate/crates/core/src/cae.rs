//! Compressing autoencoder with a geometric-progression ladder.
//!
//! Encoder widths follow `d_i = round(d_in · r^i)` with
//! `r = (d_bottle / d_in)^(1/(k-1))`; the decoder mirrors them. Every layer
//! except the last of each stack is `ReLU(LayerNorm(W x + b))`. Training
//! minimizes the mean squared reconstruction norm with Adam and stops early on
//! a seeded validation split.

use serde::{Deserialize, Serialize};

use crate::container::{NamedTensor, ParamFile, TensorData};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, SeededRng};
use crate::store::RsTensor;

pub const CHECKPOINT_KIND: &str = "cae";
pub const LN_EPS: f64 = 1e-5;

pub fn plan_dims(d_in: usize, d_bottle: usize, k: usize) -> Result<Vec<usize>> {
    if d_bottle == 0 || d_bottle >= d_in {
        return Err(Error::Config(format!(
            "bottleneck {d_bottle} must be in 1..{d_in}"
        )));
    }
    if k < 2 {
        return Err(Error::Config(format!("k = {k}, need at least 2 layers")));
    }
    if d_in - d_bottle < k - 1 {
        return Err(Error::InfeasibleLadder(format!(
            "cannot fit {k} strictly decreasing widths between {d_in} and {d_bottle}"
        )));
    }
    let r = (d_bottle as f64 / d_in as f64).powf(1.0 / (k - 1) as f64);
    let mut dims: Vec<usize> = (0..k)
        .map(|i| (d_in as f64 * r.powi(i as i32)).round() as usize)
        .collect();
    dims[0] = d_in;
    dims[k - 1] = d_bottle;
    // Ties are broken by decrementing the later width; the tail is then
    // lifted so each width stays above the next.
    for i in 1..k - 1 {
        if dims[i] >= dims[i - 1] {
            dims[i] = dims[i - 1].saturating_sub(1);
        }
    }
    for i in (1..k - 1).rev() {
        if dims[i] <= dims[i + 1] {
            dims[i] = dims[i + 1] + 1;
        }
    }
    if dims.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InfeasibleLadder(format!("{dims:?} is not strictly decreasing")));
    }
    Ok(dims)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    pub d_in: usize,
    pub d_bottle: usize,
    pub k_layers: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl CaeConfig {
    pub fn new(d_in: usize, d_bottle: usize) -> Self {
        Self {
            d_in,
            d_bottle,
            k_layers: 10,
            lr: 1e-3,
            max_epochs: 100,
            patience: 10,
            batch_size: 64,
            seed: 0,
            validation_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_bottle >= self.d_in || self.d_bottle == 0 {
            return bad(format!("d_bottle {} must be in 1..{}", self.d_bottle, self.d_in));
        }
        if self.k_layers < 2 {
            return bad(format!("k_layers {} < 2", self.k_layers));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction {} must be in [0, 1)",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_out × d_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Present on nonlinear layers (normalize then ReLU).
    pub norm: Option<LayerNorm>,
}

impl Dense {
    fn init(d_in: usize, d_out: usize, nonlinear: bool, rng: &mut SeededRng) -> Self {
        let std = if nonlinear { (2.0 / d_in as f64).sqrt() } else { (1.0 / d_in as f64).sqrt() };
        Self {
            d_in,
            d_out,
            w: (0..d_in * d_out).map(|_| rng.normal() * std).collect(),
            b: vec![0.0; d_out],
            norm: nonlinear.then(|| LayerNorm {
                gain: vec![1.0; d_out],
                bias: vec![0.0; d_out],
            }),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            d_in: self.d_in,
            d_out: self.d_out,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
            norm: self.norm.as_ref().map(|n| LayerNorm {
                gain: vec![0.0; n.gain.len()],
                bias: vec![0.0; n.bias.len()],
            }),
        }
    }

    /// Affine layer with no normalization.
    pub fn affine(d_in: usize, d_out: usize, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if w.len() != d_in * d_out {
            return Err(Error::DimensionMismatch {
                expected: d_in * d_out,
                got: w.len(),
            });
        }
        if b.len() != d_out {
            return Err(Error::DimensionMismatch {
                expected: d_out,
                got: b.len(),
            });
        }
        Ok(Self {
            d_in,
            d_out,
            w,
            b,
            norm: None,
        })
    }
}

struct LayerCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    inv_sd: f64,
    out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    pub dims: Vec<usize>,
    /// First `dims.len() - 1` layers encode, the rest decode.
    pub layers: Vec<Dense>,
}

impl CaeModel {
    pub fn init(config: &CaeConfig) -> Result<Self> {
        config.validate()?;
        let dims = plan_dims(config.d_in, config.d_bottle, config.k_layers)?;
        let mut rng = SeededRng::new(derive_seed(config.seed, 0));
        let n = dims.len() - 1;
        let mut layers = Vec::with_capacity(2 * n);
        for i in 0..n {
            layers.push(Dense::init(dims[i], dims[i + 1], i + 1 < n, &mut rng));
        }
        for i in (0..n).rev() {
            layers.push(Dense::init(dims[i + 1], dims[i], i > 0, &mut rng));
        }
        Ok(Self { dims, layers })
    }

    /// Builds a model from explicit encoder and decoder stacks.
    pub fn from_parts(encoder: Vec<Dense>, decoder: Vec<Dense>) -> Result<Self> {
        if encoder.is_empty() || encoder.len() != decoder.len() {
            return Err(Error::Config("encoder and decoder need equal, nonzero depth".into()));
        }
        let mut dims = vec![encoder[0].d_in];
        for l in &encoder {
            if l.d_in != *dims.last().unwrap() {
                return Err(Error::DimensionMismatch {
                    expected: *dims.last().unwrap(),
                    got: l.d_in,
                });
            }
            dims.push(l.d_out);
        }
        let mut width = *dims.last().unwrap();
        for l in &decoder {
            if l.d_in != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: l.d_in,
                });
            }
            width = l.d_out;
        }
        if width != dims[0] {
            return Err(Error::DimensionMismatch {
                expected: dims[0],
                got: width,
            });
        }
        let mut layers = encoder;
        layers.extend(decoder);
        Ok(Self { dims, layers })
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_bottle(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn n_encoder(&self) -> usize {
        self.dims.len() - 1
    }

    fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// `(name, shape, values)` for every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.w"), vec![l.d_out, l.d_in], l.w.as_slice()));
            out.push((format!("layers.{i}.b"), vec![l.d_out], l.b.as_slice()));
            if let Some(n) = &l.norm {
                out.push((format!("layers.{i}.norm_gain"), vec![l.d_out], n.gain.as_slice()));
                out.push((format!("layers.{i}.norm_bias"), vec![l.d_out], n.bias.as_slice()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain);
                out.push(&mut n.bias);
            }
        }
        out
    }

    fn check_width(&self, x: &[f64], width: usize) -> Result<()> {
        if x.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn run(&self, range: std::ops::Range<usize>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &self.layers[range] {
            h = layer_forward(l, &h).out;
        }
        h
    }

    pub fn encode_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x, self.d_in())?;
        Ok(self.run(0..self.n_encoder(), x))
    }

    pub fn decode_one(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_width(z, self.d_bottle())?;
        Ok(self.run(self.n_encoder()..self.layers.len(), z))
    }

    pub fn reconstruct_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x, self.d_in())?;
        Ok(self.run(0..self.layers.len(), x))
    }

    pub fn encode(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.encode_one(r)).collect()
    }

    pub fn decode(&self, codes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        codes.iter().map(|z| self.decode_one(z)).collect()
    }

    pub fn reconstruct(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.reconstruct_one(r)).collect()
    }

    /// Mean over rows of `‖x - f(x)‖²`.
    pub fn loss(&self, rows: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for r in rows {
            total += sq_dist(r, &self.reconstruct_one(r)?);
        }
        Ok(total / rows.len().max(1) as f64)
    }

    /// Mean of `‖x - f(x)‖²` over `rows`, with parameter gradients.
    pub fn loss_and_grad(&self, rows: &[&[f64]]) -> Result<(f64, CaeModel)> {
        let mut grad = self.zeros_like();
        let scale = 1.0 / rows.len().max(1) as f64;
        let mut total = 0.0;
        for &x in rows {
            self.check_width(x, self.d_in())?;
            let mut caches = Vec::with_capacity(self.layers.len());
            let mut h = x.to_vec();
            for l in &self.layers {
                let c = layer_forward(l, &h);
                h = c.out.clone();
                caches.push(c);
            }
            total += sq_dist(x, &h);
            let mut d: Vec<f64> = h.iter().zip(x).map(|(f, t)| 2.0 * (f - t) * scale).collect();
            for (i, l) in self.layers.iter().enumerate().rev() {
                d = layer_backward(l, &caches[i], &d, &mut grad.layers[i]);
            }
        }
        Ok((total * scale, grad))
    }

    pub fn to_param_file(&self, config: &CaeConfig) -> ParamFile {
        ParamFile {
            kind: CHECKPOINT_KIND.to_string(),
            config: serde_json::json!({ "config": config, "dims": self.dims }),
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, shape, v)| NamedTensor {
                    name,
                    shape,
                    data: TensorData::F64(v.to_vec()),
                })
                .collect(),
        }
    }

    pub fn from_param_file(file: &ParamFile) -> Result<(Self, CaeConfig)> {
        if file.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!(
                "checkpoint kind is {:?}, expected {CHECKPOINT_KIND:?}",
                file.kind
            )));
        }
        let config: CaeConfig = serde_json::from_value(file.config["config"].clone())
            .map_err(|e| Error::Format(format!("cae config: {e}")))?;
        let mut model = Self::init(&config)?;
        let names: Vec<(String, Vec<usize>)> =
            model.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        for ((name, shape), dst) in names.into_iter().zip(model.tensors_mut()) {
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
                TensorData::F64(v) => dst.copy_from_slice(v),
                TensorData::F32(_) => return Err(Error::Format(format!("tensor {name} is not f64"))),
            }
        }
        Ok((model, config))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn layer_forward(l: &Dense, x: &[f64]) -> LayerCache {
    let mut z = l.b.clone();
    for (o, zo) in z.iter_mut().enumerate() {
        let row = &l.w[o * l.d_in..(o + 1) * l.d_in];
        *zo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
    match &l.norm {
        None => LayerCache {
            input: x.to_vec(),
            xhat: Vec::new(),
            inv_sd: 0.0,
            out: z,
        },
        Some(n) => {
            let m = z.len() as f64;
            let mean = z.iter().sum::<f64>() / m;
            let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv_sd = 1.0 / (var + LN_EPS).sqrt();
            let xhat: Vec<f64> = z.iter().map(|v| (v - mean) * inv_sd).collect();
            let out = xhat
                .iter()
                .zip(n.gain.iter().zip(&n.bias))
                .map(|(h, (g, b))| (g * h + b).max(0.0))
                .collect();
            LayerCache {
                input: x.to_vec(),
                xhat,
                inv_sd,
                out,
            }
        }
    }
}

/// Accumulates parameter gradients into `g` and returns the input gradient.
fn layer_backward(l: &Dense, c: &LayerCache, dout: &[f64], g: &mut Dense) -> Vec<f64> {
    let dz: Vec<f64> = match (&l.norm, &mut g.norm) {
        (None, _) => dout.to_vec(),
        (Some(n), Some(gn)) => {
            let m = dout.len() as f64;
            let mut dxhat = vec![0.0; dout.len()];
            for i in 0..dout.len() {
                let dy = if c.out[i] > 0.0 { dout[i] } else { 0.0 };
                gn.gain[i] += dy * c.xhat[i];
                gn.bias[i] += dy;
                dxhat[i] = dy * n.gain[i];
            }
            let mean_d = dxhat.iter().sum::<f64>() / m;
            let mean_dx = dxhat.iter().zip(&c.xhat).map(|(a, b)| a * b).sum::<f64>() / m;
            dxhat
                .iter()
                .zip(&c.xhat)
                .map(|(d, h)| c.inv_sd * (d - mean_d - h * mean_dx))
                .collect()
        }
        (Some(_), None) => unreachable!("gradient shaped like model"),
    };
    let mut dx = vec![0.0; l.d_in];
    for (o, &d) in dz.iter().enumerate() {
        g.b[o] += d;
        let row = &l.w[o * l.d_in..(o + 1) * l.d_in];
        let grow = &mut g.w[o * l.d_in..(o + 1) * l.d_in];
        for i in 0..l.d_in {
            grow[i] += d * c.input[i];
            dx[i] += d * row[i];
        }
    }
    dx
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    /// 1-based; 0 before any observation.
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records `loss` for `epoch` (1-based). Returns whether training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        self.bad_epochs >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub adam: AdamConfig,
}

fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = SeededRng::new(derive_seed(seed, 1));
    let perm = rng.permutation(n);
    if n < 2 || fraction <= 0.0 {
        return (perm.clone(), perm);
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = perm[..n_val].to_vec();
    let train = perm[n_val..].to_vec();
    (train, val)
}

pub fn train(config: &CaeConfig, train_set: &[Vec<f64>]) -> Result<(CaeModel, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = train_set.iter().find(|r| r.len() != config.d_in) {
        return Err(Error::DimensionMismatch {
            expected: config.d_in,
            got: bad.len(),
        });
    }
    let mut model = CaeModel::init(config)?;
    let (train_idx, val_idx) = split_indices(train_set.len(), config.validation_fraction, config.seed);
    let val_rows: Vec<Vec<f64>> = val_idx.iter().map(|&i| train_set[i].clone()).collect();
    let adam_cfg = AdamConfig::with_lr(config.lr);
    let lens: Vec<usize> = model.tensors().iter().map(|(_, _, t)| t.len()).collect();
    let mut adam = Adam::<f64>::new(adam_cfg, lens);
    let mut rng = SeededRng::new(derive_seed(config.seed, 2));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        adam: adam_cfg,
    };
    let mut order = train_idx;
    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| train_set[i].as_slice()).collect();
            let (loss, grad) = model.loss_and_grad(&rows)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("training batch loss {loss}"),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            let grads: Vec<&[f64]> = grad.tensors().into_iter().map(|(_, _, t)| t).collect();
            let mut params = model.tensors_mut();
            adam.step(&mut params, &grads);
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = model.loss(&val_rows)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("validation loss {val_loss}, train loss {train_loss}"),
            });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved_at(epoch) {
            best = model.clone();
        }
        if stop {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best;
    Ok((best, history))
}

/// `1 - Σ‖x - f(x)‖² / Σ‖x - x̄‖²` over `rows`; `None` when the rows are constant.
pub fn explained_variance(model: &CaeModel, rows: &[Vec<f64>]) -> Result<Option<f64>> {
    let Some(first) = rows.first() else {
        return Err(Error::EmptyInput);
    };
    let n = rows.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for r in rows {
        model.check_width(r, model.d_in())?;
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut resid = 0.0;
    let mut total = 0.0;
    for r in rows {
        resid += sq_dist(r, &model.reconstruct_one(r)?);
        total += sq_dist(r, &mean);
    }
    Ok((total > 0.0).then(|| 1.0 - resid / total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeTrajectoryStats {
    /// `[S][d_bottle]` mean code per sublayer.
    pub mean_trajectory: Vec<Vec<f64>>,
    /// Euclidean distance between consecutive mean codes, length `S - 1`.
    pub distances: Vec<f64>,
    /// Per-sublayer explained variance; `None` where the sublayer is constant.
    pub explained_variance: Vec<Option<f64>>,
}

pub fn trajectory_stats(model: &CaeModel, rs: &RsTensor) -> Result<CaeTrajectoryStats> {
    if rs.units() != model.d_in() {
        return Err(Error::DimensionMismatch {
            expected: model.d_in(),
            got: rs.units(),
        });
    }
    let s_count = rs.sublayers();
    let b = rs.samples() as f64;
    let mut mean_trajectory = Vec::with_capacity(s_count);
    let mut ev = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let rows: Vec<Vec<f64>> = (0..rs.samples())
            .map(|i| rs.vector(i, s).iter().map(|&v| v as f64).collect())
            .collect();
        let mut code_mean = vec![0.0; model.d_bottle()];
        for r in &rows {
            for (m, c) in code_mean.iter_mut().zip(model.encode_one(r)?) {
                *m += c / b;
            }
        }
        mean_trajectory.push(code_mean);
        ev.push(explained_variance(model, &rows)?);
    }
    let distances = mean_trajectory
        .windows(2)
        .map(|w| sq_dist(&w[0], &w[1]).sqrt())
        .collect();
    Ok(CaeTrajectoryStats {
        mean_trajectory,
        distances,
        explained_variance: ev,
    })
}
