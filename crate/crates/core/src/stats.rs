//! Layer-wise statistics of the residual stream: mean activations, per-unit
//! Pearson correlations between sublayers, correlation histograms, cosine
//! similarity and velocity.
//!
//! Transition statistics are computed per sample and then aggregated
//! (mean and population sd over samples). The same statistic on batch-mean
//! vectors is reported alongside.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{transition_kind, RsTensor, Transition};

/// `[S][D]` mean over samples.
pub fn mean_activations(rs: &RsTensor) -> Vec<Vec<f64>> {
    let (b, s, d) = (rs.samples(), rs.sublayers(), rs.units());
    let mut means = vec![vec![0.0f64; d]; s];
    for sample in 0..b {
        for (sub, row) in means.iter_mut().enumerate() {
            for (m, &v) in row.iter_mut().zip(rs.vector(sample, sub)) {
                *m += v as f64;
            }
        }
    }
    for row in &mut means {
        row.iter_mut().for_each(|m| *m /= b as f64);
    }
    means
}

/// Ascending argsort of the last sublayer's means; ties keep unit order.
pub fn sort_units_by_last_layer(means: &[Vec<f64>]) -> Vec<usize> {
    let Some(last) = means.last() else {
        return Vec::new();
    };
    let mut order: Vec<usize> = (0..last.len()).collect();
    order.sort_by(|&a, &b| last[a].total_cmp(&last[b]));
    order
}

/// Pearson correlation; `None` if either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 || x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `r[u][s]` = correlation of unit `u` between sublayers `s` and `s + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCorrelationMatrix {
    pub units: usize,
    pub transitions: usize,
    /// Row-major `[units × transitions]`; `None` marks zero-variance pairs.
    pub r: Vec<Option<f64>>,
    pub kinds: Vec<Transition>,
}

impl UnitCorrelationMatrix {
    pub fn get(&self, unit: usize, transition: usize) -> Option<f64> {
        self.r[unit * self.transitions + transition]
    }

    pub fn undefined_count(&self) -> usize {
        self.r.iter().filter(|v| v.is_none()).count()
    }

    /// Median of defined correlations per transition.
    pub fn median_per_transition(&self) -> Vec<Option<f64>> {
        (0..self.transitions)
            .map(|s| {
                let mut vals: Vec<f64> = (0..self.units).filter_map(|u| self.get(u, s)).collect();
                if vals.is_empty() {
                    return None;
                }
                vals.sort_by(f64::total_cmp);
                let n = vals.len();
                Some(if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    0.5 * (vals[n / 2 - 1] + vals[n / 2])
                })
            })
            .collect()
    }
}

fn require_samples(rs: &RsTensor, needed: usize) -> Result<()> {
    if rs.samples() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            got: rs.samples(),
        });
    }
    Ok(())
}

/// Per-unit columns `[S][B]` for one unit.
fn unit_columns(rs: &RsTensor, unit: usize) -> Vec<Vec<f64>> {
    (0..rs.sublayers()).map(|s| rs.column(s, unit)).collect()
}

pub fn layer_pair_correlations(rs: &RsTensor) -> Result<UnitCorrelationMatrix> {
    require_samples(rs, 3)?;
    let t = rs.sublayers().saturating_sub(1);
    let rows: Vec<Vec<Option<f64>>> = (0..rs.units())
        .into_par_iter()
        .map(|u| {
            let cols = unit_columns(rs, u);
            (0..t).map(|s| pearson(&cols[s], &cols[s + 1])).collect()
        })
        .collect();
    Ok(UnitCorrelationMatrix {
        units: rs.units(),
        transitions: t,
        r: rows.into_iter().flatten().collect(),
        kinds: (0..t).map(transition_kind).collect(),
    })
}

/// Which sublayer pairs enter a unit's correlation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// `(s, s + 1)` only.
    Consecutive,
    /// Every `(l, m)` with `l < m`.
    AllPairs,
}

/// Per-unit histogram of correlations over `[0, 1]`.
///
/// Negative correlations are counted in bin 0 and tallied in `underflow`;
/// undefined ones are excluded from the bins and tallied in `undefined`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub n_bins: usize,
    pub pairs_per_unit: usize,
    /// `[D][n_bins]`
    pub counts: Vec<Vec<u64>>,
    /// `counts / (pairs_per_unit · bin_width)`; each row integrates to the
    /// fraction of defined pairs.
    pub density: Vec<Vec<f64>>,
    pub underflow: Vec<u64>,
    pub undefined: Vec<u64>,
}

impl CorrelationHistogram {
    pub fn bin_width(&self) -> f64 {
        1.0 / self.n_bins as f64
    }
}

/// Bin index of a correlation in `[0, 1]` with `n` bins (`r = 1` goes in the top bin).
pub fn correlation_bin(r: f64, n: usize) -> usize {
    if r <= 0.0 {
        return 0;
    }
    ((r * n as f64).floor() as usize).min(n - 1)
}

pub fn correlation_histogram(
    rs: &RsTensor,
    mode: PairMode,
    n_bins: usize,
) -> Result<CorrelationHistogram> {
    require_samples(rs, 3)?;
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be at least 1".into()));
    }
    let s = rs.sublayers();
    let pairs: Vec<(usize, usize)> = match mode {
        PairMode::Consecutive => (0..s.saturating_sub(1)).map(|l| (l, l + 1)).collect(),
        PairMode::AllPairs => (0..s)
            .flat_map(|l| (l + 1..s).map(move |m| (l, m)))
            .collect(),
    };
    let per_unit: Vec<(Vec<u64>, u64, u64)> = (0..rs.units())
        .into_par_iter()
        .map(|u| {
            let cols = unit_columns(rs, u);
            let mut counts = vec![0u64; n_bins];
            let (mut under, mut undef) = (0u64, 0u64);
            for &(l, m) in &pairs {
                match pearson(&cols[l], &cols[m]) {
                    Some(r) => {
                        if r < 0.0 {
                            under += 1;
                        }
                        counts[correlation_bin(r, n_bins)] += 1;
                    }
                    None => undef += 1,
                }
            }
            (counts, under, undef)
        })
        .collect();
    let width = 1.0 / n_bins as f64;
    let total = pairs.len();
    let mut out = CorrelationHistogram {
        n_bins,
        pairs_per_unit: total,
        counts: Vec::with_capacity(rs.units()),
        density: Vec::with_capacity(rs.units()),
        underflow: Vec::with_capacity(rs.units()),
        undefined: Vec::with_capacity(rs.units()),
    };
    for (counts, under, undef) in per_unit {
        out.density.push(
            counts
                .iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
                .collect(),
        );
        out.counts.push(counts);
        out.underflow.push(under);
        out.undefined.push(undef);
    }
    Ok(out)
}

/// A statistic over the `S - 1` sublayer transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSeries {
    pub kinds: Vec<Transition>,
    /// Mean over samples with a defined value (`NaN` if none).
    pub mean: Vec<f64>,
    /// Population sd over the same samples.
    pub sd: Vec<f64>,
    /// Samples with a defined value, per transition.
    pub defined: Vec<usize>,
    /// `[S-1][B]`
    pub per_sample: Vec<Vec<Option<f64>>>,
    /// The statistic evaluated on batch-mean vectors.
    pub batch_mean_form: Vec<Option<f64>>,
}

impl TransitionSeries {
    fn from_per_sample(
        per_sample: Vec<Vec<Option<f64>>>,
        batch_mean_form: Vec<Option<f64>>,
    ) -> Self {
        let mut mean = Vec::with_capacity(per_sample.len());
        let mut sd = Vec::with_capacity(per_sample.len());
        let mut defined = Vec::with_capacity(per_sample.len());
        for row in &per_sample {
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            let n = vals.len();
            defined.push(n);
            if n == 0 {
                mean.push(f64::NAN);
                sd.push(f64::NAN);
                continue;
            }
            let m = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean.push(m);
            sd.push(var.sqrt());
        }
        Self {
            kinds: (0..per_sample.len()).map(transition_kind).collect(),
            mean,
            sd,
            defined,
            per_sample,
            batch_mean_form,
        }
    }

    /// Entries with no defined value (zero-norm vectors for cosine).
    pub fn undefined_entries(&self) -> usize {
        self.per_sample.iter().flatten().filter(|v| v.is_none()).count()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    Some(ab / (aa.sqrt() * bb.sqrt()))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        .sqrt()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn transition_series(
    rs: &RsTensor,
    stat: impl Fn(&[f64], &[f64]) -> Option<f64> + Sync,
) -> TransitionSeries {
    let t = rs.sublayers().saturating_sub(1);
    let per_sample: Vec<Vec<Option<f64>>> = (0..t)
        .into_par_iter()
        .map(|s| {
            (0..rs.samples())
                .map(|b| stat(&widen(rs.vector(b, s)), &widen(rs.vector(b, s + 1))))
                .collect()
        })
        .collect();
    let means = mean_activations(rs);
    let batch_mean_form = (0..t).map(|s| stat(&means[s], &means[s + 1])).collect();
    TransitionSeries::from_per_sample(per_sample, batch_mean_form)
}

/// Cosine similarity between consecutive sublayer vectors; zero-norm
/// vectors leave the entry undefined.
pub fn cosine_similarity_series(rs: &RsTensor) -> TransitionSeries {
    transition_series(rs, cosine)
}

/// Euclidean norm of the step between consecutive sublayer vectors.
pub fn velocity_series(rs: &RsTensor) -> TransitionSeries {
    transition_series(rs, |a, b| Some(distance(a, b)))
}

/// Layer-by-layer comparison of within-layer and cross-layer values:
/// entry `l` pairs transition `2l` (within layer `l`) with `2l + 1`
/// (layer `l` to `l + 1`).
pub fn within_vs_cross(series: &[f64]) -> Vec<(f64, f64)> {
    (0..series.len() / 2)
        .map(|l| (series[2 * l], series[2 * l + 1]))
        .collect()
}
