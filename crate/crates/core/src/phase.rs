//! Per-unit phase portraits in (activation, layer-gradient) space.
//!
//! A unit's activation series `a_s` across sublayers is paired with its
//! finite-difference gradient `g_s`. The rotation count is the cumulative
//! change of the tangent angle along that trajectory divided by 2π, compared
//! against a null built from random permutations of the sublayer order.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::store::RsTensor;

/// Central differences inside, one-sided first differences at the ends.
pub fn layer_gradient(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 3 {
        return Err(Error::TooShort { len: n, min: 3 });
    }
    let mut g = Vec::with_capacity(n);
    g.push(series[1] - series[0]);
    for i in 1..n - 1 {
        g.push((series[i + 1] - series[i - 1]) / 2.0);
    }
    g.push(series[n - 1] - series[n - 2]);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleMode {
    #[default]
    BatchMean,
    SingleSample(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    pub unit: usize,
    pub activation: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl PhaseTrajectory {
    pub fn from_series(unit: usize, activation: Vec<f64>) -> Result<Self> {
        let gradient = layer_gradient(&activation)?;
        Ok(Self {
            unit,
            activation,
            gradient,
        })
    }

    /// A trajectory from explicit points, bypassing the gradient stencil.
    pub fn from_points(unit: usize, points: &[(f64, f64)]) -> Self {
        Self {
            unit,
            activation: points.iter().map(|p| p.0).collect(),
            gradient: points.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.activation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activation.is_empty()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.activation
            .iter()
            .copied()
            .zip(self.gradient.iter().copied())
            .collect()
    }

    pub fn reversed(&self) -> Self {
        let mut a = self.activation.clone();
        let mut g = self.gradient.clone();
        a.reverse();
        g.reverse();
        Self {
            unit: self.unit,
            activation: a,
            gradient: g,
        }
    }
}

pub fn activation_series(rs: &RsTensor, unit: usize, mode: SampleMode) -> Result<Vec<f64>> {
    if unit >= rs.units() {
        return Err(Error::UnitOutOfRange {
            unit,
            units: rs.units(),
        });
    }
    match mode {
        SampleMode::BatchMean => {
            let b = rs.samples() as f64;
            Ok((0..rs.sublayers())
                .map(|s| rs.column(s, unit).iter().sum::<f64>() / b)
                .collect())
        }
        SampleMode::SingleSample(b) => {
            if b >= rs.samples() {
                return Err(Error::Config(format!(
                    "sample {b} out of range for {} samples",
                    rs.samples()
                )));
            }
            Ok((0..rs.sublayers())
                .map(|s| rs.get(b, s, unit) as f64)
                .collect())
        }
    }
}

pub fn build_trajectory(rs: &RsTensor, unit: usize, mode: SampleMode) -> Result<PhaseTrajectory> {
    PhaseTrajectory::from_series(unit, activation_series(rs, unit, mode)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationCount {
    pub rotations: f64,
    /// Zero-length tangent segments that were skipped.
    pub skipped_segments: usize,
    /// Wrapped angle increments, each in (-π, π].
    pub delta_theta: Vec<f64>,
}

pub fn wrap_angle(d: f64) -> f64 {
    let mut w = d % TAU;
    if w > PI {
        w -= TAU;
    } else if w <= -PI {
        w += TAU;
    }
    w
}

fn distinct_points(points: &[(f64, f64)]) -> usize {
    let mut p: Vec<(u64, u64)> = points
        .iter()
        .map(|&(x, y)| ((x + 0.0).to_bits(), (y + 0.0).to_bits()))
        .collect();
    p.sort_unstable();
    p.dedup();
    p.len()
}

pub fn count_rotations(traj: &PhaseTrajectory) -> Result<RotationCount> {
    rotations_of_points(&traj.points())
}

pub fn rotations_of_points(points: &[(f64, f64)]) -> Result<RotationCount> {
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::DegenerateTrajectory("non-finite point".into()));
    }
    let (x0, y0) = points.first().copied().unwrap_or((0.0, 0.0));
    let centered: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x - x0, y - y0)).collect();
    let distinct = distinct_points(&centered);
    if distinct < 3 {
        return Err(Error::DegenerateTrajectory(format!(
            "{distinct} distinct points, need at least 3"
        )));
    }
    let mut skipped = 0;
    let mut angles = Vec::with_capacity(centered.len());
    for w in centered.windows(2) {
        let dx = w[1].0 - w[0].0;
        let dy = w[1].1 - w[0].1;
        if dx == 0.0 && dy == 0.0 {
            skipped += 1;
        } else {
            angles.push(dy.atan2(dx));
        }
    }
    let delta_theta: Vec<f64> = angles.windows(2).map(|w| wrap_angle(w[1] - w[0])).collect();
    Ok(RotationCount {
        rotations: delta_theta.iter().sum::<f64>() / TAU,
        skipped_segments: skipped,
        delta_theta,
    })
}

/// How a null trajectory is formed from a permutation of sublayer order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NullMode {
    /// Permute the (activation, gradient) pairs together.
    #[default]
    PermutePairs,
    /// Permute the activation series and recompute its gradient.
    RecomputeGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullConfig {
    pub n_shuffle: usize,
    pub seed: u64,
    pub mode: NullMode,
    pub sample_mode: SampleMode,
}

impl NullConfig {
    pub fn new(n_shuffle: usize, seed: u64) -> Self {
        Self {
            n_shuffle,
            seed,
            mode: NullMode::default(),
            sample_mode: SampleMode::default(),
        }
    }

    pub fn with_mode(mut self, mode: NullMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_sample_mode(mut self, mode: SampleMode) -> Self {
        self.sample_mode = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationStats {
    pub unit: usize,
    pub rotations: f64,
    pub skipped_segments: usize,
    pub null_samples: Vec<f64>,
    /// Null permutations whose trajectory was degenerate (recorded as 0).
    pub null_degenerate: usize,
    pub null_mean: f64,
    pub null_sd: f64,
    pub z_score: f64,
    /// Two-sided, centered at the null mean, with +1 smoothing.
    pub p_value: f64,
}

impl RotationStats {
    /// Empirical quantile of |null sample|, nearest-rank.
    pub fn null_abs_quantile(&self, q: f64) -> f64 {
        let mut v: Vec<f64> = self.null_samples.iter().map(|x| x.abs()).collect();
        v.sort_by(f64::total_cmp);
        let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
        v[rank - 1]
    }
}

fn permuted(traj: &PhaseTrajectory, perm: &[usize], mode: NullMode) -> Result<PhaseTrajectory> {
    let activation: Vec<f64> = perm.iter().map(|&i| traj.activation[i]).collect();
    match mode {
        NullMode::PermutePairs => Ok(PhaseTrajectory {
            unit: traj.unit,
            activation,
            gradient: perm.iter().map(|&i| traj.gradient[i]).collect(),
        }),
        NullMode::RecomputeGradient => PhaseTrajectory::from_series(traj.unit, activation),
    }
}

/// Null statistics from an explicit sequence of permutations.
pub fn stats_from_permutations<I>(traj: &PhaseTrajectory, perms: I, mode: NullMode) -> Result<RotationStats>
where
    I: IntoIterator<Item = Vec<usize>>,
{
    let observed = count_rotations(traj)?;
    let mut samples = Vec::new();
    let mut degenerate = 0;
    for perm in perms {
        if perm.len() != traj.len() {
            return Err(Error::DimensionMismatch {
                expected: traj.len(),
                got: perm.len(),
            });
        }
        match count_rotations(&permuted(traj, &perm, mode)?) {
            Ok(r) => samples.push(r.rotations),
            Err(Error::DegenerateTrajectory(_)) => {
                degenerate += 1;
                samples.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    if samples.is_empty() {
        return Err(Error::Config("n_shuffle must be at least 1".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = if samples.len() > 1 {
        (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let r = observed.rotations;
    let z = if sd > 0.0 {
        (r - mean) / sd
    } else if r == mean {
        0.0
    } else {
        f64::INFINITY.copysign(r - mean)
    };
    let dev = (r - mean).abs();
    let extreme = samples.iter().filter(|x| (*x - mean).abs() >= dev).count();
    Ok(RotationStats {
        unit: traj.unit,
        rotations: r,
        skipped_segments: observed.skipped_segments,
        null_samples: samples,
        null_degenerate: degenerate,
        null_mean: mean,
        null_sd: sd,
        z_score: z,
        p_value: (extreme as f64 + 1.0) / (n + 1.0),
    })
}

/// Null over `cfg.n_shuffle` random permutations drawn from a stream keyed by
/// `(cfg.seed, unit)`.
pub fn trajectory_null(traj: &PhaseTrajectory, cfg: &NullConfig) -> Result<RotationStats> {
    if cfg.n_shuffle == 0 {
        return Err(Error::Config("n_shuffle must be at least 1".into()));
    }
    let mut rng = SeededRng::new(derive_seed(cfg.seed, traj.unit as u64));
    let n = traj.len();
    let perms = (0..cfg.n_shuffle).map(move |_| rng.permutation(n));
    stats_from_permutations(traj, perms, cfg.mode)
}

pub fn shuffle_null(rs: &RsTensor, unit: usize, n_shuffle: usize, seed: u64) -> Result<RotationStats> {
    shuffle_null_with(rs, unit, &NullConfig::new(n_shuffle, seed))
}

pub fn shuffle_null_with(rs: &RsTensor, unit: usize, cfg: &NullConfig) -> Result<RotationStats> {
    let traj = build_trajectory(rs, unit, cfg.sample_mode)?;
    trajectory_null(&traj, cfg)
}

/// Rotation statistics for every listed unit, in parallel. Per-unit failures
/// are kept in place.
pub fn rotation_table(rs: &RsTensor, units: &[usize], cfg: &NullConfig) -> Vec<Result<RotationStats>> {
    units
        .par_iter()
        .map(|&u| shuffle_null_with(rs, u, cfg))
        .collect()
}
