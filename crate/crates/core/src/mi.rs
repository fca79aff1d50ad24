//! Mutual information between two scalar activations via Gaussian KDE on a grid.
//!
//! The joint density is a Gaussian-kernel estimate with kernel covariance
//! `f² · Σ̂`, where `Σ̂` is the sample covariance and `f = B^(-1/6)` is Scott's
//! factor for two dimensions. Per axis this is a bandwidth of `σ̂ · B^(-1/6)`.
//! The estimate is evaluated on a `G × G` lattice spanning
//! `[min - 3h, max + 3h]` per axis and renormalized to unit mass. MI in nats is
//!
//! ```text
//! Σ p(x,y) · ln((p(x,y) + ε) / ((p(x) + ε)(p(y) + ε))) · Δx · Δy,   ε = 1e-10
//! ```
//!
//! with the marginals obtained by integrating the gridded joint.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::RsTensor;

pub const MI_EPS: f64 = 1e-10;
pub const DEFAULT_GRID_SIZE: usize = 64;
pub const MIN_GRID_SIZE: usize = 16;
pub const MIN_SAMPLES: usize = 10;
/// Kernel correlation is clamped to this magnitude so the kernel stays
/// non-singular when the inputs are (nearly) collinear.
pub const MAX_KERNEL_CORR: f64 = 0.999;
/// Kernel terms with Mahalanobis distance² above this are dropped (< e^-40).
const Q_CUTOFF: f64 = 80.0;

/// Gridded joint density and its marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeGrid {
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
    pub dx: f64,
    pub dy: f64,
    /// Row-major `[x index][y index]`, not renormalized.
    pub joint: Vec<f64>,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    pub bandwidth_x: f64,
    pub bandwidth_y: f64,
    pub kernel_corr: f64,
}

impl KdeGrid {
    pub fn grid_size(&self) -> usize {
        self.grid_x.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.joint[i * self.grid_y.len() + j]
    }

    /// Riemann-sum mass of the gridded joint.
    pub fn mass(&self) -> f64 {
        self.joint.iter().sum::<f64>() * self.dx * self.dy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiEstimate {
    /// Nats.
    pub value: f64,
    pub unit: Option<usize>,
    pub transition: Option<usize>,
    pub bandwidth_x: f64,
    pub bandwidth_y: f64,
    pub grid_size: usize,
    pub kernel_corr: f64,
}

struct Moments {
    mean: f64,
    sd: f64,
    min: f64,
    max: f64,
}

fn moments(v: &[f64]) -> Moments {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let (min, max) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Moments {
        mean,
        sd: var.sqrt(),
        min,
        max,
    }
}

fn check_inputs(x: &[f64], y: &[f64], grid_size: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::Config(format!(
            "grid_size {grid_size} is below {MIN_GRID_SIZE}"
        )));
    }
    if x.len() < MIN_SAMPLES {
        return Err(Error::DegenerateInput(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite input".into()));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::DegenerateInput("x has zero variance".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::DegenerateInput("y has zero variance".into()));
    }
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

pub fn kde_density_2d(x: &[f64], y: &[f64], grid_size: usize) -> Result<KdeGrid> {
    check_inputs(x, y, grid_size)?;
    let n = x.len();
    let mx = moments(x);
    let my = moments(y);
    if mx.sd <= 0.0 || my.sd <= 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let scott = (n as f64).powf(-1.0 / 6.0);
    let hx = mx.sd * scott;
    let hy = my.sd * scott;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx.mean) * (b - my.mean))
        .sum::<f64>()
        / (n as f64 - 1.0);
    let rho = (cov / (mx.sd * my.sd)).clamp(-MAX_KERNEL_CORR, MAX_KERNEL_CORR);

    let grid_x = linspace(mx.min - 3.0 * hx, mx.max + 3.0 * hx, grid_size);
    let grid_y = linspace(my.min - 3.0 * hy, my.max + 3.0 * hy, grid_size);
    let dx = grid_x[1] - grid_x[0];
    let dy = grid_y[1] - grid_y[0];

    let one_m = 1.0 - rho * rho;
    let norm = 1.0 / (std::f64::consts::TAU * hx * hy * one_m.sqrt() * n as f64);
    let g = grid_size;
    // Rows of the joint are independent; each row sums samples in order.
    let joint: Vec<f64> = (0..g)
        .into_par_iter()
        .flat_map_iter(|i| {
            let gx = grid_x[i];
            let mut row = vec![0.0f64; g];
            for (&xb, &yb) in x.iter().zip(y) {
                let u = (gx - xb) / hx;
                if u * u > Q_CUTOFF {
                    continue;
                }
                // q = u² + (v - ρu)² / (1 - ρ²); only j with q <= cutoff matter
                let half = ((Q_CUTOFF - u * u) * one_m).sqrt();
                let v_center = rho * u;
                let lo_y = yb + (v_center - half) * hy;
                let hi_y = yb + (v_center + half) * hy;
                let j_lo = (((lo_y - grid_y[0]) / dy).floor().max(0.0)) as usize;
                let j_hi = (((hi_y - grid_y[0]) / dy).ceil().max(0.0) as usize).min(g - 1);
                if j_lo > j_hi {
                    continue;
                }
                for (j, slot) in row.iter_mut().enumerate().take(j_hi + 1).skip(j_lo) {
                    let v = (grid_y[j] - yb) / hy;
                    let q = (u * u - 2.0 * rho * u * v + v * v) / one_m;
                    if q <= Q_CUTOFF {
                        *slot += (-0.5 * q).exp();
                    }
                }
            }
            row.into_iter().map(move |s| s * norm)
        })
        .collect();

    let (px, py) = marginals(&joint, g, dx, dy);
    Ok(KdeGrid {
        grid_x,
        grid_y,
        dx,
        dy,
        joint,
        px,
        py,
        bandwidth_x: hx,
        bandwidth_y: hy,
        kernel_corr: rho,
    })
}

fn marginals(joint: &[f64], g: usize, dx: f64, dy: f64) -> (Vec<f64>, Vec<f64>) {
    let px = (0..g)
        .map(|i| joint[i * g..(i + 1) * g].iter().sum::<f64>() * dy)
        .collect();
    let py = (0..g)
        .map(|j| (0..g).map(|i| joint[i * g + j]).sum::<f64>() * dx)
        .collect();
    (px, py)
}

pub fn mutual_information(x: &[f64], y: &[f64], grid_size: usize) -> Result<MiEstimate> {
    let kde = kde_density_2d(x, y, grid_size)?;
    let g = kde.grid_size();
    let mass = kde.mass();
    if !(mass > 0.0) {
        return Err(Error::DegenerateInput("density has no mass on the grid".into()));
    }
    let joint: Vec<f64> = kde.joint.iter().map(|p| p / mass).collect();
    let (px, py) = marginals(&joint, g, kde.dx, kde.dy);
    let mut total = 0.0;
    for i in 0..g {
        for j in 0..g {
            let p = joint[i * g + j];
            if p > 0.0 {
                total += p * ((p + MI_EPS) / ((px[i] + MI_EPS) * (py[j] + MI_EPS))).ln();
            }
        }
    }
    Ok(MiEstimate {
        value: total * kde.dx * kde.dy,
        unit: None,
        transition: None,
        bandwidth_x: kde.bandwidth_x,
        bandwidth_y: kde.bandwidth_y,
        grid_size: g,
        kernel_corr: kde.kernel_corr,
    })
}

/// Per-(unit, transition) MI between consecutive sublayers.
#[derive(Debug, Clone)]
pub struct MiProfile {
    pub units: Vec<usize>,
    pub transitions: usize,
    /// Row-major `[units.len() × transitions]`; `Err` entries are flagged
    /// degenerate and excluded from the means.
    pub entries: Vec<std::result::Result<MiEstimate, String>>,
    /// Mean over units with a defined estimate, per transition.
    pub mean: Vec<Option<f64>>,
}

impl MiProfile {
    pub fn get(&self, row: usize, transition: usize) -> Option<&MiEstimate> {
        self.entries[row * self.transitions + transition].as_ref().ok()
    }
}

pub fn mi_layer_profile(
    rs: &RsTensor,
    unit_subset: Option<&[usize]>,
    grid_size: usize,
) -> Result<MiProfile> {
    if rs.samples() < MIN_SAMPLES {
        return Err(Error::DegenerateInput(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            rs.samples()
        )));
    }
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::Config(format!(
            "grid_size {grid_size} is below {MIN_GRID_SIZE}"
        )));
    }
    let units: Vec<usize> = match unit_subset {
        Some(list) => list.to_vec(),
        None => (0..rs.units()).collect(),
    };
    if let Some(&bad) = units.iter().find(|&&u| u >= rs.units()) {
        return Err(Error::UnitOutOfRange {
            unit: bad,
            units: rs.units(),
        });
    }
    let t = rs.sublayers() - 1;
    let jobs: Vec<(usize, usize)> = units
        .iter()
        .flat_map(|&u| (0..t).map(move |s| (u, s)))
        .collect();
    let entries: Vec<_> = jobs
        .par_iter()
        .map(|&(u, s)| {
            mutual_information(&rs.column(s, u), &rs.column(s + 1, u), grid_size)
                .map(|mut e| {
                    e.unit = Some(u);
                    e.transition = Some(s);
                    e
                })
                .map_err(|e| e.to_string())
        })
        .collect();
    let mean = (0..t)
        .map(|s| {
            let vals: Vec<f64> = (0..units.len())
                .filter_map(|r| entries[r * t + s].as_ref().ok().map(|e| e.value))
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    Ok(MiProfile {
        units,
        transitions: t,
        entries,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = SeededRng::new(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a = rng.normal();
            let b = rng.normal();
            x.push(a);
            y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        (x, y)
    }

    /// 2-D trapezoid rule over the lattice.
    fn trapezoid_mass(k: &KdeGrid) -> f64 {
        let g = k.grid_size();
        let w = |i: usize| if i == 0 || i == g - 1 { 0.5 } else { 1.0 };
        let mut total = 0.0;
        for i in 0..g {
            for j in 0..g {
                total += w(i) * w(j) * k.at(i, j);
            }
        }
        total * k.dx * k.dy
    }

    #[test]
    fn standard_gaussian_mass_is_one() {
        let (x, y) = gaussian_pair(5000, 0.0, 1);
        let k = kde_density_2d(&x, &y, DEFAULT_GRID_SIZE).unwrap();
        let m = trapezoid_mass(&k);
        assert!((0.98..=1.02).contains(&m), "mass {m}");
        assert!(k.joint.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn constant_input_is_degenerate() {
        let x = vec![1.0; 50];
        let (y, _) = gaussian_pair(50, 0.0, 2);
        assert!(matches!(kde_density_2d(&x, &y, 32), Err(Error::DegenerateInput(_))));
        assert!(matches!(
            mutual_information(&y[..5], &y[..5], 32),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn density_nonnegative_for_random_inputs() {
        let mut rng = SeededRng::new(3);
        let x: Vec<f64> = (0..200).map(|_| rng.uniform() * 10.0).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.normal().powi(3)).collect();
        let k = kde_density_2d(&x, &y, 40).unwrap();
        assert!(k.joint.iter().all(|&p| p >= 0.0 && p.is_finite()));
    }

    #[test]
    fn independent_gaussians_have_small_mi() {
        let (x, y) = gaussian_pair(5000, 0.0, 4);
        let mi = mutual_information(&x, &y, DEFAULT_GRID_SIZE).unwrap();
        assert!(mi.value < 0.05, "{}", mi.value);
    }

    #[test]
    fn correlated_gaussian_matches_analytic() {
        let (x, y) = gaussian_pair(5000, 0.9, 5);
        let mi = mutual_information(&x, &y, DEFAULT_GRID_SIZE).unwrap();
        let analytic = -0.5 * (1.0f64 - 0.81).ln();
        assert!((mi.value - analytic).abs() < 0.15, "{} vs {analytic}", mi.value);
    }

    #[test]
    fn identical_inputs_have_large_mi() {
        let (x, y) = gaussian_pair(5000, 0.0, 6);
        let same = mutual_information(&x, &x, DEFAULT_GRID_SIZE).unwrap().value;
        let indep = mutual_information(&x, &y, DEFAULT_GRID_SIZE).unwrap().value;
        assert!(same >= 1.0);
        assert!(same >= 5.0 * indep);
    }

    #[test]
    fn symmetric_in_arguments() {
        let (x, y) = gaussian_pair(1000, 0.6, 7);
        let a = mutual_information(&x, &y, 48).unwrap().value;
        let b = mutual_information(&y, &x, 48).unwrap().value;
        assert!((a - b).abs() < 1e-9, "{a} {b}");
    }

    #[test]
    fn profile_matches_per_unit_calls() {
        let mut rng = SeededRng::new(8);
        let data: Vec<f32> = (0..40 * 4 * 2).map(|_| rng.normal() as f32).collect();
        let rs = RsTensor::new(data, 40, 4, 2).unwrap();
        let p = mi_layer_profile(&rs, None, 32).unwrap();
        for u in 0..2 {
            for s in 0..3 {
                let direct = mutual_information(&rs.column(s, u), &rs.column(s + 1, u), 32).unwrap();
                assert_eq!(p.get(u, s).unwrap().value, direct.value);
            }
        }
    }

    #[test]
    fn profile_constant_when_sublayers_repeat() {
        let mut rng = SeededRng::new(9);
        let mut data = Vec::new();
        for _ in 0..30 {
            let v: Vec<f32> = (0..3).map(|_| rng.normal() as f32).collect();
            for _ in 0..4 {
                data.extend(&v);
            }
        }
        let rs = RsTensor::new(data, 30, 4, 3).unwrap();
        let p = mi_layer_profile(&rs, None, 32).unwrap();
        let m: Vec<f64> = p.mean.iter().map(|v| v.unwrap()).collect();
        assert!(m.iter().all(|&v| v == m[0]));
    }

    #[test]
    fn profile_flags_constant_units_and_rejects_small_batches() {
        let mut rng = SeededRng::new(10);
        let mut data = Vec::new();
        for _ in 0..12 {
            for _ in 0..2 {
                data.push(rng.normal() as f32);
                data.push(0.5);
            }
        }
        let rs = RsTensor::new(data, 12, 2, 2).unwrap();
        let p = mi_layer_profile(&rs, None, 16).unwrap();
        assert!(p.get(0, 0).is_some());
        assert!(p.get(1, 0).is_none());
        assert_eq!(p.mean[0], Some(p.get(0, 0).unwrap().value));

        let small = RsTensor::new(vec![0.0; 9 * 2], 9, 2, 1).unwrap();
        assert!(matches!(mi_layer_profile(&small, None, 16), Err(Error::DegenerateInput(_))));
        assert!(matches!(
            mi_layer_profile(&rs, Some(&[5]), 16),
            Err(Error::UnitOutOfRange { .. })
        ));
    }

    #[test]
    fn affine_maps_leave_mi_unchanged() {
        let (x, y) = gaussian_pair(2000, 0.5, 11);
        let base = mutual_information(&x, &y, DEFAULT_GRID_SIZE).unwrap().value;
        let x2: Vec<f64> = x.iter().map(|v| 3.5 * v - 20.0).collect();
        let y2: Vec<f64> = y.iter().map(|v| 0.01 * v + 4.0).collect();
        let moved = mutual_information(&x2, &y2, DEFAULT_GRID_SIZE).unwrap().value;
        assert!((base - moved).abs() < 0.02, "{base} {moved}");
    }

    #[test]
    fn estimates_are_not_meaningfully_negative() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(100 + seed);
            let x: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.normal().exp()).collect();
            assert!(mutual_information(&x, &y, 32).unwrap().value >= -0.01);
        }
    }

    #[test]
    fn noise_does_not_increase_mi() {
        let (x, z) = gaussian_pair(5000, 0.0, 12);
        let vals: Vec<f64> = [0.1, 0.5, 1.0, 2.0]
            .iter()
            .map(|&sigma| {
                let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + sigma * b).collect();
                mutual_information(&x, &y, DEFAULT_GRID_SIZE).unwrap().value
            })
            .collect();
        let inversions: Vec<f64> = vals.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
        assert!(inversions.len() <= 1 && inversions.iter().all(|d| *d <= 0.01), "{vals:?}");
    }

    #[test]
    fn independent_noise_profile_is_small() {
        let mut rng = SeededRng::new(13);
        let data: Vec<f32> = (0..2000 * 4 * 3).map(|_| rng.normal() as f32).collect();
        let rs = RsTensor::new(data, 2000, 4, 3).unwrap();
        let p = mi_layer_profile(&rs, None, DEFAULT_GRID_SIZE).unwrap();
        assert!(p.mean.iter().all(|m| m.unwrap() < 0.05), "{:?}", p.mean);
    }
}
