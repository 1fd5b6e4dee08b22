//! Dense lower-triangular Cholesky kernels on row-major `d x d` buffers.
//!
//! Only the lower triangle of a factor is ever read; the strict upper
//! triangle is kept at zero.

use crate::error::{Error, Result};

/// Diagonal jitter added when a scale matrix fails to factorize.
pub const JITTER: f64 = 1e-9;

/// Plain Cholesky factorization `A = L Lᵀ`. `None` when `A` is not
/// numerically positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Cholesky with escalating diagonal jitter (`1e-9`, `1e-8`, ...), scaled by
/// the mean diagonal magnitude when that exceeds one.
pub fn cholesky_jittered(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if let Some(l) = cholesky(a, d) {
        return Ok(l);
    }
    let scale = ((0..d).map(|i| a[i * d + i].abs()).sum::<f64>() / d.max(1) as f64).max(1.0);
    let mut jitter = JITTER * scale;
    let mut work = a.to_vec();
    for _ in 0..8 {
        for i in 0..d {
            work[i * d + i] = a[i * d + i] + jitter;
        }
        if let Some(l) = cholesky(&work, d) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(
        "scale matrix is not positive definite even after jitter".into(),
    ))
}

/// In-place rank-1 update: on return `L' L'ᵀ = L Lᵀ + v vᵀ`. `v` is clobbered.
pub fn rank1_update(l: &mut [f64], v: &mut [f64], d: usize) {
    for j in 0..d {
        let ljj = l[j * d + j];
        let vj = v[j];
        let r = ljj.hypot(vj);
        let c = r / ljj;
        let s = vj / ljj;
        l[j * d + j] = r;
        for i in (j + 1)..d {
            let lij = (l[i * d + j] + s * v[i]) / c;
            l[i * d + j] = lij;
            v[i] = c * v[i] - s * lij;
        }
    }
}

/// In-place rank-1 downdate: on return `L' L'ᵀ = L Lᵀ - v vᵀ`.
///
/// Fails without a usable result if the downdated matrix is not positive
/// definite; `l` is then left in an unspecified state.
pub fn rank1_downdate(l: &mut [f64], v: &mut [f64], d: usize) -> Result<()> {
    for j in 0..d {
        let ljj = l[j * d + j];
        let vj = v[j];
        let arg = (ljj - vj) * (ljj + vj);
        if !(arg > 0.0) {
            return Err(Error::Numerical(
                "Cholesky downdate lost positive definiteness".into(),
            ));
        }
        let r = arg.sqrt();
        let c = r / ljj;
        let s = vj / ljj;
        l[j * d + j] = r;
        for i in (j + 1)..d {
            let lij = (l[i * d + j] - s * v[i]) / c;
            l[i * d + j] = lij;
            v[i] = c * v[i] - s * lij;
        }
    }
    Ok(())
}

/// `‖L⁻¹ b‖²` by forward substitution.
pub fn solve_norm_sq(l: &[f64], b: &[f64], d: usize) -> f64 {
    let mut y = [0.0f64; 64];
    let mut heap;
    let y: &mut [f64] = if d <= 64 {
        &mut y[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    let mut acc = 0.0;
    for i in 0..d {
        let row = &l[i * d..i * d + i];
        let mut s = b[i];
        for (lik, yk) in row.iter().zip(y.iter()) {
            s -= lik * yk;
        }
        let yi = s / l[i * d + i];
        y[i] = yi;
        acc += yi * yi;
    }
    acc
}

/// `ln det(L Lᵀ)`.
pub fn log_det(l: &[f64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>()
}

/// `L z` for lower-triangular `L`.
pub fn lower_mul(l: &[f64], z: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| (0..=i).map(|k| l[i * d + k] * z[k]).sum())
        .collect()
}

/// `L Lᵀ`, mostly for tests and batch comparisons.
pub fn reconstruct(l: &[f64], d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..=i.min(j)).map(|k| l[i * d + k] * l[j * d + k]).sum();
        }
    }
    a
}
