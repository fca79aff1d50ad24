//! Dense kernels on row-major f32 buffers.

/// `x[rows × k] · w[k × n]`.
pub(crate) fn matmul(x: &[f32], rows: usize, k: usize, w: &[f32], n: usize) -> Vec<f32> {
    debug_assert_eq!(x.len(), rows * k);
    debug_assert_eq!(w.len(), k * n);
    let mut out = vec![0.0f32; rows * n];
    for r in 0..rows {
        let o = &mut out[r * n..(r + 1) * n];
        for (i, &xi) in x[r * k..(r + 1) * k].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wr = &w[i * n..(i + 1) * n];
            for (oj, &wj) in o.iter_mut().zip(wr) {
                *oj += xi * wj;
            }
        }
    }
    out
}

/// `dy[rows × n] · w[k × n]ᵀ`.
pub(crate) fn matmul_wt(dy: &[f32], rows: usize, n: usize, w: &[f32], k: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * k];
    for r in 0..rows {
        let d = &dy[r * n..(r + 1) * n];
        for i in 0..k {
            out[r * k + i] = dot(d, &w[i * n..(i + 1) * n]);
        }
    }
    out
}

/// `dw[k × n] += x[rows × k]ᵀ · dy[rows × n]`.
pub(crate) fn acc_xt_dy(dw: &mut [f32], x: &[f32], rows: usize, k: usize, dy: &[f32], n: usize) {
    for r in 0..rows {
        let d = &dy[r * n..(r + 1) * n];
        for (i, &xi) in x[r * k..(r + 1) * k].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (w, &dj) in dw[i * n..(i + 1) * n].iter_mut().zip(d) {
                *w += xi * dj;
            }
        }
    }
}

/// `db[n] += Σ_rows dy`.
pub(crate) fn acc_rows(db: &mut [f32], dy: &[f32], n: usize) {
    for row in dy.chunks_exact(n) {
        for (b, &d) in db.iter_mut().zip(row) {
            *b += d;
        }
    }
}

pub(crate) fn add_bias(x: &mut [f32], b: &[f32]) {
    let n = b.len();
    for row in x.chunks_exact_mut(n) {
        for (v, &bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise RMS normalization. Returns `(normalized, per-row rms)`.
pub(crate) fn rms_norm(x: &[f32], d: usize, gain: &[f32], eps: f32) -> (Vec<f32>, Vec<f32>) {
    let rows = x.len() / d;
    let mut out = vec![0.0f32; x.len()];
    let mut rms = vec![0.0f32; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let ms = row.iter().map(|v| v * v).sum::<f32>() / d as f32;
        let s = (ms + eps).sqrt();
        rms[r] = s;
        for ((o, &v), &g) in out[r * d..(r + 1) * d].iter_mut().zip(row).zip(gain) {
            *o = v / s * g;
        }
    }
    (out, rms)
}

/// Backward of [`rms_norm`]: accumulates into `dgain`, returns `dx`.
pub(crate) fn rms_norm_backward(
    dy: &[f32],
    x: &[f32],
    rms: &[f32],
    d: usize,
    gain: &[f32],
    dgain: &mut [f32],
) -> Vec<f32> {
    let mut dx = vec![0.0f32; x.len()];
    for (r, &s) in rms.iter().enumerate() {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut proj = 0.0f32;
        for i in 0..d {
            dgain[i] += dyr[i] * xr[i] / s;
            proj += gain[i] * dyr[i] * xr[i];
        }
        let s3 = s * s * s * d as f32;
        for i in 0..d {
            dx[r * d + i] = gain[i] * dyr[i] / s - xr[i] * proj / s3;
        }
    }
    dx
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu(u: f32) -> f32 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(u: f32) -> f32 {
    let inner = GELU_C * (u + 0.044715 * u * u * u);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

/// In-place softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
