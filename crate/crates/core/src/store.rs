//! The residual-stream activation tensor and the RSD file format.
//!
//! RSD layout (all integers little-endian):
//!
//! ```text
//! "RSD1" | version u32 = 1 | B u32 | S u32 | D u32 | meta_len u32
//!        | meta_len bytes of UTF-8 JSON metadata
//!        | B·S·D f32 LE, sample-major, then sublayer, then unit
//! ```
//!
//! Sublayer labels are not stored; they follow the alternation rule
//! `(0, PreAttn), (0, PreMlp), (1, PreAttn), ...`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RSD_MAGIC: &[u8; 4] = b"RSD1";
pub const RSD_VERSION: u32 = 1;
pub const RSD_HEADER_LEN: usize = 24;

/// Capture point inside a transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HookPoint {
    /// Residual entering the attention block, before its normalization.
    PreAttn,
    /// Residual entering the MLP block, before its normalization.
    PreMlp,
}

impl fmt::Display for HookPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PreAttn => f.write_str("pre_attn"),
            Self::PreMlp => f.write_str("pre_mlp"),
        }
    }
}

/// Kind of step between two consecutive sublayers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    /// `h_l^Attn -> h_l^MLP`
    WithinLayer,
    /// `h_l^MLP -> h_{l+1}^Attn`
    CrossLayer,
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WithinLayer => f.write_str("within_layer"),
            Self::CrossLayer => f.write_str("cross_layer"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SublayerLabel {
    pub layer: usize,
    pub hook: HookPoint,
}

impl SublayerLabel {
    /// Label of sublayer `s` under the alternation rule.
    pub fn canonical(s: usize) -> Self {
        Self {
            layer: s / 2,
            hook: if s.is_multiple_of(2) {
                HookPoint::PreAttn
            } else {
                HookPoint::PreMlp
            },
        }
    }
}

/// Canonical labels for `sublayers` capture points.
pub fn canonical_labels(sublayers: usize) -> Vec<SublayerLabel> {
    (0..sublayers).map(SublayerLabel::canonical).collect()
}

/// Activation tensor of shape `samples × sublayers × units`, stored as f32
/// in sample-major order.
///
/// Construction through [`RsTensor::new`] enforces every invariant;
/// [`RsTensor::from_raw`] does not, and [`validate`] reports what is wrong.
#[derive(Debug, Clone, PartialEq)]
pub struct RsTensor {
    data: Vec<f32>,
    samples: usize,
    sublayers: usize,
    units: usize,
    labels: Vec<SublayerLabel>,
}

impl RsTensor {
    /// Builds a tensor with canonical labels and checks all invariants.
    pub fn new(data: Vec<f32>, samples: usize, sublayers: usize, units: usize) -> Result<Self> {
        let tensor = Self::from_raw(data, samples, sublayers, units, canonical_labels(sublayers));
        let report = validate(&tensor);
        if !report.is_valid() {
            return Err(Error::InvariantViolation(report.to_string()));
        }
        Ok(tensor)
    }

    /// Builds a tensor without checking anything.
    pub fn from_raw(
        data: Vec<f32>,
        samples: usize,
        sublayers: usize,
        units: usize,
        labels: Vec<SublayerLabel>,
    ) -> Self {
        Self {
            data,
            samples,
            sublayers,
            units,
            labels,
        }
    }

    /// Stacks per-sample `sublayers × units` blocks.
    pub fn from_samples(rows: &[Vec<f32>], sublayers: usize, units: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * sublayers * units);
        for row in rows {
            if row.len() != sublayers * units {
                return Err(Error::DimensionMismatch {
                    expected: sublayers * units,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), sublayers, units)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sublayers(&self) -> usize {
        self.sublayers
    }

    pub fn units(&self) -> usize {
        self.units
    }

    /// Number of transformer layers (`S / 2`).
    pub fn layers(&self) -> usize {
        self.sublayers / 2
    }

    pub fn labels(&self) -> &[SublayerLabel] {
        &self.labels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, sample: usize, sublayer: usize, unit: usize) -> usize {
        (sample * self.sublayers + sublayer) * self.units + unit
    }

    #[inline]
    pub fn get(&self, sample: usize, sublayer: usize, unit: usize) -> f32 {
        self.data[self.index(sample, sublayer, unit)]
    }

    /// The `units`-long residual vector of one sample at one sublayer.
    pub fn vector(&self, sample: usize, sublayer: usize) -> &[f32] {
        let start = self.index(sample, sublayer, 0);
        &self.data[start..start + self.units]
    }

    /// One sample's `sublayers × units` block.
    pub fn sample(&self, sample: usize) -> &[f32] {
        let start = self.index(sample, 0, 0);
        &self.data[start..start + self.sublayers * self.units]
    }

    /// Values of one unit at one sublayer across all samples, widened to f64.
    pub fn column(&self, sublayer: usize, unit: usize) -> Vec<f64> {
        (0..self.samples)
            .map(|b| self.get(b, sublayer, unit) as f64)
            .collect()
    }

    /// Every `(sample, sublayer)` vector as an f64 row, sample-major.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.units)
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    }

    /// Transition kind between sublayer `s` and `s + 1`, from the labels.
    pub fn transition(&self, s: usize) -> Option<Transition> {
        let a = self.labels.get(s)?;
        let b = self.labels.get(s + 1)?;
        match (a.hook, b.hook) {
            (HookPoint::PreAttn, HookPoint::PreMlp) if a.layer == b.layer => {
                Some(Transition::WithinLayer)
            }
            (HookPoint::PreMlp, HookPoint::PreAttn) if b.layer == a.layer + 1 => {
                Some(Transition::CrossLayer)
            }
            _ => None,
        }
    }

    /// Transition kinds for all `S - 1` consecutive pairs.
    pub fn transitions(&self) -> Vec<Transition> {
        (0..self.sublayers.saturating_sub(1))
            .map(transition_kind)
            .collect()
    }
}

/// Transition kind of pair `(s, s + 1)` under canonical labels.
pub fn transition_kind(s: usize) -> Transition {
    if s.is_multiple_of(2) {
        Transition::WithinLayer
    } else {
        Transition::CrossLayer
    }
}

/// Provenance stored alongside an RSD payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsdMetadata {
    pub model_name: String,
    pub dataset_name: String,
    /// `"last"` for last-token captures.
    pub token_position: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl RsdMetadata {
    pub fn new(model_name: impl Into<String>, dataset_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            dataset_name: dataset_name.into(),
            token_position: "last".to_string(),
            seed: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    fn check(&self) -> Result<()> {
        if self.model_name.is_empty() {
            return Err(Error::InvariantViolation("model_name is empty".into()));
        }
        if self.dataset_name.is_empty() {
            return Err(Error::InvariantViolation("dataset_name is empty".into()));
        }
        Ok(())
    }
}

/// One broken tensor invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ShapeMismatch { expected: Option<usize>, got: usize },
    NoSamples,
    NoUnits,
    NoSublayers,
    SublayerCountOdd(usize),
    LabelCountMismatch { labels: usize, sublayers: usize },
    LabelOrder { sublayer: usize },
    NonFinite { count: usize, first_index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { expected: Some(e), got } => {
                write!(f, "data length {got} does not match B*S*D = {e}")
            }
            Self::ShapeMismatch { expected: None, got } => {
                write!(f, "data length {got} does not match B*S*D (overflow)")
            }
            Self::NoSamples => f.write_str("sample count is zero"),
            Self::NoUnits => f.write_str("unit count is zero"),
            Self::NoSublayers => f.write_str("sublayer count is zero"),
            Self::SublayerCountOdd(s) => write!(f, "sublayer count not even ({s})"),
            Self::LabelCountMismatch { labels, sublayers } => {
                write!(f, "{labels} labels for {sublayers} sublayers")
            }
            Self::LabelOrder { sublayer } => {
                write!(f, "label order violation at sublayer {sublayer}")
            }
            Self::NonFinite { count, first_index } => {
                write!(f, "{count} non-finite values (first at flat index {first_index})")
            }
        }
    }
}

/// Result of [`validate`]; empty iff the tensor satisfies every invariant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Human-readable messages, one per violation.
    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages().join("; "))
    }
}

/// Checks every tensor invariant. Never panics.
pub fn validate(tensor: &RsTensor) -> ValidationReport {
    let mut violations = Vec::new();
    let expected = tensor
        .samples
        .checked_mul(tensor.sublayers)
        .and_then(|n| n.checked_mul(tensor.units));
    if expected != Some(tensor.data.len()) {
        violations.push(Violation::ShapeMismatch {
            expected,
            got: tensor.data.len(),
        });
    }
    if tensor.samples == 0 {
        violations.push(Violation::NoSamples);
    }
    if tensor.units == 0 {
        violations.push(Violation::NoUnits);
    }
    if tensor.sublayers == 0 {
        violations.push(Violation::NoSublayers);
    } else if !tensor.sublayers.is_multiple_of(2) {
        violations.push(Violation::SublayerCountOdd(tensor.sublayers));
    }
    if tensor.labels.len() != tensor.sublayers {
        violations.push(Violation::LabelCountMismatch {
            labels: tensor.labels.len(),
            sublayers: tensor.sublayers,
        });
    }
    if let Some(s) = tensor
        .labels
        .iter()
        .enumerate()
        .position(|(s, label)| *label != SublayerLabel::canonical(s))
    {
        violations.push(Violation::LabelOrder { sublayer: s });
    }
    let mut non_finite = 0;
    let mut first = None;
    for (i, v) in tensor.data.iter().enumerate() {
        if !v.is_finite() {
            non_finite += 1;
            first.get_or_insert(i);
        }
    }
    if let Some(first_index) = first {
        violations.push(Violation::NonFinite {
            count: non_finite,
            first_index,
        });
    }
    ValidationReport { violations }
}

/// Serializes a tensor and its metadata into RSD bytes.
pub fn encode_rsd(tensor: &RsTensor, meta: &RsdMetadata) -> Result<Vec<u8>> {
    let report = validate(tensor);
    if !report.is_valid() {
        return Err(Error::InvariantViolation(report.to_string()));
    }
    meta.check()?;
    let dim = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::InvariantViolation(format!("{what} {n} exceeds u32")))
    };
    let meta_json = serde_json::to_vec(meta)
        .map_err(|e| Error::InvariantViolation(format!("metadata not serializable: {e}")))?;
    let mut out = Vec::with_capacity(RSD_HEADER_LEN + meta_json.len() + tensor.data.len() * 4);
    out.extend_from_slice(RSD_MAGIC);
    out.extend_from_slice(&RSD_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(tensor.samples, "B")?.to_le_bytes());
    out.extend_from_slice(&dim(tensor.sublayers, "S")?.to_le_bytes());
    out.extend_from_slice(&dim(tensor.units, "D")?.to_le_bytes());
    out.extend_from_slice(&dim(meta_json.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(&meta_json);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses RSD bytes.
pub fn decode_rsd(bytes: &[u8]) -> Result<(RsTensor, RsdMetadata)> {
    if bytes.len() < RSD_HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {RSD_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != RSD_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != RSD_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (b, s, d, meta_len) = (
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
        word(5) as usize,
    );
    let meta_end = RSD_HEADER_LEN
        .checked_add(meta_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format(format!("metadata length {meta_len} runs past end of file")))?;
    let meta: RsdMetadata = serde_json::from_slice(&bytes[RSD_HEADER_LEN..meta_end])
        .map_err(|e| Error::Format(format!("metadata is not valid JSON: {e}")))?;
    let n = b
        .checked_mul(s)
        .and_then(|n| n.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dims {b}x{s}x{d} overflow")))?;
    let payload = &bytes[meta_end..];
    let expected = n
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("dims {b}x{s}x{d} overflow")))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header claims {b}x{s}x{d} f32 = {expected} bytes",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tensor = RsTensor::from_raw(data, b, s, d, canonical_labels(s));
    let report = validate(&tensor);
    if !report.is_valid() {
        return Err(Error::InvariantViolation(report.to_string()));
    }
    Ok((tensor, meta))
}

pub fn write_rsd(tensor: &RsTensor, meta: &RsdMetadata, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_rsd(tensor, meta)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_rsd(path: impl AsRef<Path>) -> Result<(RsTensor, RsdMetadata)> {
    let bytes = std::fs::read(path)?;
    decode_rsd(&bytes)
}
