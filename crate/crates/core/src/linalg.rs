//! Dense least squares by Householder QR with column pivoting.
//!
//! Works directly on column-major buffers (the nalgebra storage order) so the
//! bootstrap loop does not allocate more than one scratch copy per fit.

use crate::error::{MintError, Result};

/// Outcome of a least-squares solve.
#[derive(Debug, Clone)]
pub(crate) struct LsSolution {
    pub coefficients: Vec<f64>,
    /// Residual sum of squares of the unpenalized problem.
    pub rss: f64,
    /// Upper triangle of R in pivoted order, `m x m` column-major.
    pub r: Vec<f64>,
}

/// Rank tolerance relative to the largest singular value.
pub(crate) fn rank_tolerance(n: usize, m: usize, sigma_max: f64) -> f64 {
    n.max(m) as f64 * f64::EPSILON * sigma_max
}

/// Solves `min ||y - D b||^2 + ridge ||b||^2` for a column-major `n x m`
/// design. With `ridge == 0` a rank-deficient design is an error naming the
/// columns that fall below the rank tolerance.
pub(crate) fn solve_least_squares(
    design: &[f64],
    n: usize,
    m: usize,
    y: &[f64],
    ridge: f64,
) -> Result<LsSolution> {
    debug_assert_eq!(design.len(), n * m);
    if y.len() != n {
        return Err(MintError::DimensionMismatch(format!(
            "design has {n} rows but target has length {}",
            y.len()
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(MintError::InvalidInput(format!("ridge must be >= 0, got {ridge}")));
    }
    if m == 0 {
        return Ok(LsSolution {
            coefficients: Vec::new(),
            rss: y.iter().map(|v| v * v).sum(),
            r: Vec::new(),
        });
    }

    // Augment with sqrt(ridge) * I rows when penalized.
    let rows = if ridge > 0.0 { n + m } else { n };
    let mut a = vec![0.0; rows * m];
    let mut b = vec![0.0; rows];
    for j in 0..m {
        a[j * rows..j * rows + n].copy_from_slice(&design[j * n..(j + 1) * n]);
        if ridge > 0.0 {
            a[j * rows + n + j] = ridge.sqrt();
        }
    }
    b[..n].copy_from_slice(y);

    let mut perm: Vec<usize> = (0..m).collect();
    let steps = rows.min(m);
    for k in 0..steps {
        // Pivot: remaining column with the largest trailing norm.
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..m {
            let col = &a[j * rows + k..(j + 1) * rows];
            let s: f64 = col.iter().map(|v| v * v).sum();
            if s > best_norm {
                best_norm = s;
                best = j;
            }
        }
        if best != k {
            for i in 0..rows {
                a.swap(k * rows + i, best * rows + i);
            }
            perm.swap(k, best);
        }

        let norm = best_norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a[k * rows + k];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place below the diagonal.
        a[k * rows + k] = x0 - alpha;
        let vnorm2: f64 = a[k * rows + k..(k + 1) * rows].iter().map(|v| v * v).sum();
        if vnorm2 > 0.0 {
            let (head, tail) = a.split_at_mut((k + 1) * rows);
            let v = &head[k * rows + k..(k + 1) * rows];
            for j in 0..(m - k - 1) {
                let col = &mut tail[j * rows + k..(j + 1) * rows];
                let dot: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vnorm2;
                for (c, vi) in col.iter_mut().zip(v) {
                    *c -= f * vi;
                }
            }
            let dot: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in b[k..].iter_mut().zip(v) {
                *c -= f * vi;
            }
        }
        a[k * rows + k] = alpha;
    }

    let mut r = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..=j.min(steps - 1) {
            r[j * m + i] = a[j * rows + i];
        }
    }

    let sigma_max = largest_singular_value(&r, m);
    let tol = rank_tolerance(rows, m, sigma_max);
    let rank = (0..steps).take_while(|&k| r[k * m + k].abs() > tol).count();
    if rank < m {
        let mut deficient: Vec<usize> = perm[rank..].to_vec();
        deficient.sort_unstable();
        return Err(MintError::RankDeficient {
            rank,
            cols: m,
            deficient,
        });
    }

    let mut z = vec![0.0; m];
    for k in (0..m).rev() {
        let mut s = b[k];
        for j in k + 1..m {
            s -= r[j * m + k] * z[j];
        }
        z[k] = s / r[k * m + k];
    }
    let mut coefficients = vec![0.0; m];
    for (k, &p) in perm.iter().enumerate() {
        coefficients[p] = z[k];
    }

    let rss = if ridge > 0.0 {
        (0..n)
            .map(|i| {
                let fit: f64 = (0..m).map(|j| design[j * n + i] * coefficients[j]).sum();
                (y[i] - fit).powi(2)
            })
            .sum()
    } else {
        b[m..].iter().map(|v| v * v).sum()
    };

    Ok(LsSolution {
        coefficients,
        rss,
        r,
    })
}

/// Largest singular value of an upper-triangular `m x m` matrix via power
/// iteration on `R^T R`.
pub(crate) fn largest_singular_value(r: &[f64], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut w = vec![0.0; m];
    let mut u = vec![0.0; m];
    let mut lambda = 0.0;
    for _ in 0..200 {
        // u = R v
        for i in 0..m {
            u[i] = (i..m).map(|j| r[j * m + i] * v[j]).sum();
        }
        // w = R^T u
        for j in 0..m {
            w[j] = (0..=j).map(|i| r[j * m + i] * u[i]).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (next - lambda).abs() <= 1e-12 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

/// Smallest singular value of a nonsingular upper-triangular matrix via
/// inverse iteration.
pub(crate) fn smallest_singular_value(r: &[f64], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    if (0..m).any(|k| r[k * m + k] == 0.0) {
        return 0.0;
    }
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut mu = 0.0;
    for _ in 0..200 {
        // Solve R^T w = v (forward), then R u = w (backward).
        let mut w = vec![0.0; m];
        for j in 0..m {
            let s: f64 = (0..j).map(|i| r[j * m + i] * w[i]).sum();
            w[j] = (v[j] - s) / r[j * m + j];
        }
        let mut u = vec![0.0; m];
        for i in (0..m).rev() {
            let s: f64 = (i + 1..m).map(|j| r[j * m + i] * u[j]).sum();
            u[i] = (w[i] - s) / r[i * m + i];
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return 0.0;
        }
        for (vi, ui) in v.iter_mut().zip(&u) {
            *vi = ui / norm;
        }
        if (norm - mu).abs() <= 1e-12 * norm {
            mu = norm;
            break;
        }
        mu = norm;
    }
    (1.0 / mu).sqrt()
}
