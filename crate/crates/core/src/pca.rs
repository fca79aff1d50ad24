//! PCA over every `(sample, sublayer)` residual vector via thin SVD of the
//! centered data matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::store::RsTensor;

/// Tolerance for the post-fit orthonormality check on `V`.
pub const ORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D × D`; column `k` is the k-th principal direction.
    pub components: DMatrix<f64>,
    /// Descending, nonnegative, length `D`.
    pub singular_values: Vec<f64>,
    pub n_rows: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `r_k = σ_k² / Σ σ_i²`.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        self.singular_values.iter().map(|s| s * s / total).collect()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.components.column(k).iter().copied().collect()
    }

    /// Largest entry of `|VᵀV - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.dim();
        let g = self.components.transpose() * &self.components;
        (g - DMatrix::<f64>::identity(d, d)).abs().max()
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    fn check_components(&self, n: usize) -> Result<()> {
        if n > self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }

    pub fn project_one(&self, row: &[f64], n_components: usize) -> Result<Vec<f64>> {
        self.check_width(row.len())?;
        self.check_components(n_components)?;
        let centered: Vec<f64> = row.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..n_components)
            .map(|k| {
                self.components
                    .column(k)
                    .iter()
                    .zip(&centered)
                    .map(|(v, c)| v * c)
                    .sum()
            })
            .collect())
    }

    pub fn inverse_project_one(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_components(z.len())?;
        let mut x = self.mean.clone();
        for (k, &zk) in z.iter().enumerate() {
            for (xi, v) in x.iter_mut().zip(self.components.column(k).iter()) {
                *xi += zk * v;
            }
        }
        Ok(x)
    }
}

pub fn fit_pca_rows(rows: &[Vec<f64>]) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: rows.len(),
        });
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Zero rows pad the matrix to at least D rows so V is square; they add
    // nothing to XᵀX.
    let m_rows = n.max(d);
    let mut x = DMatrix::<f64>::zeros(m_rows, d);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..d {
            x[(i, j)] = r[j] - mean[j];
        }
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateData("all rows are identical".into()));
    }
    let svd = x.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvariantViolation("SVD returned no right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let components = DMatrix::from_fn(d, d, |i, k| v_t[(order[k], i)]);
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k].max(0.0)).collect();
    let model = PcaModel {
        mean,
        components,
        singular_values,
        n_rows: n,
    };
    let err = model.orthonormality_error();
    if !(err <= ORTHO_TOL) {
        return Err(Error::InvariantViolation(format!(
            "components not orthonormal (max deviation {err:e})"
        )));
    }
    if model.singular_values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvariantViolation("singular values not descending".into()));
    }
    Ok(model)
}

pub fn fit_pca(rs: &RsTensor) -> Result<PcaModel> {
    fit_pca_rows(&rs.rows())
}

pub fn project(model: &PcaModel, rows: &[Vec<f64>], n_components: usize) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| model.project_one(r, n_components)).collect()
}

pub fn inverse_project(model: &PcaModel, z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    z.iter().map(|r| model.inverse_project_one(r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvCurves {
    /// Prefix sums of `r_k`, length `D`.
    pub cumulative: Vec<f64>,
    /// Per-sublayer EV of the rank-`n_components` reconstruction; `None` where
    /// the sublayer's rows all equal the fitted mean.
    pub per_sublayer: Vec<Option<f64>>,
    pub n_components: usize,
}

/// Per-sublayer EV uses the model's global mean, so a sublayer that sits away
/// from the mean is credited for the offset the components capture.
pub fn explained_variance_curves(model: &PcaModel, rs: &RsTensor, n_components: usize) -> Result<EvCurves> {
    model.check_width(rs.units())?;
    model.check_components(n_components)?;
    let mut cumulative = Vec::with_capacity(model.dim());
    let mut acc = 0.0;
    for r in model.explained_variance_ratio() {
        acc += r;
        cumulative.push(acc);
    }
    let mut per_sublayer = Vec::with_capacity(rs.sublayers());
    for s in 0..rs.sublayers() {
        let mut resid = 0.0;
        let mut total = 0.0;
        for b in 0..rs.samples() {
            let x: Vec<f64> = rs.vector(b, s).iter().map(|&v| v as f64).collect();
            let z = model.project_one(&x, n_components)?;
            let rec = model.inverse_project_one(&z)?;
            for j in 0..x.len() {
                resid += (x[j] - rec[j]).powi(2);
                total += (x[j] - model.mean[j]).powi(2);
            }
        }
        per_sublayer.push((total > 0.0).then(|| 1.0 - resid / total));
    }
    Ok(EvCurves {
        cumulative,
        per_sublayer,
        n_components,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleportGrid {
    /// `n²` points, x-major.
    pub points: Vec<[f64; 2]>,
    pub n: usize,
    pub range_x: (f64, f64),
    pub range_y: (f64, f64),
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

pub fn make_grid(n: usize, range_x: (f64, f64), range_y: (f64, f64)) -> Result<TeleportGrid> {
    if n < 2 {
        return Err(Error::BadRange(format!("grid needs n >= 2, got {n}")));
    }
    for (name, (lo, hi)) in [("x", range_x), ("y", range_y)] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::BadRange(format!("{name} range [{lo}, {hi}] is empty")));
        }
    }
    let xs = linspace(range_x.0, range_x.1, n);
    let ys = linspace(range_y.0, range_y.1, n);
    let points = xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| [x, y]))
        .collect();
    Ok(TeleportGrid {
        points,
        n,
        range_x,
        range_y,
    })
}

/// Fraction of the observed span added on each side of a default grid range.
pub const GRID_MARGIN: f64 = 0.1;

/// Per-axis `[min, max]` of 2-D points widened by 20% of the span (10% per
/// side). A zero span is widened by ±1 instead.
pub fn default_grid_ranges(points: &[Vec<f64>]) -> Result<((f64, f64), (f64, f64))> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let axis = |k: usize| {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
        let span = hi - lo;
        if span > 0.0 {
            (lo - GRID_MARGIN * span, hi + GRID_MARGIN * span)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    Ok((axis(0), axis(1)))
}
