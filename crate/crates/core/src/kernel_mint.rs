//! Kernel variant of the test: mechanism parameters live implicitly in an
//! RKHS and are represented by kernel ridge dual coefficients.
//!
//! Calibration is permutation-only, so results are flagged `experimental`.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiEnvDataset;
use crate::error::{MintError, Result};
use crate::mint::{check_alpha, double_center, TestMethod, TestResult, SMALL_K_WARNING};
use crate::rng::{self, TAG_BANDWIDTH, TAG_PERMUTATION};

/// Rows used by the median heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    MedianHeuristic,
    #[serde(untagged)]
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    pub ridge_lambda: f64,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::MedianHeuristic
}

impl KernelSpec {
    pub fn linear(ridge_lambda: f64) -> Self {
        Self { kind: KernelKind::Linear, bandwidth: Bandwidth::MedianHeuristic, ridge_lambda }
    }

    pub fn rbf(bandwidth: Bandwidth, ridge_lambda: f64) -> Self {
        Self { kind: KernelKind::Rbf, bandwidth, ridge_lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda > 0.0 && self.ridge_lambda.is_finite()) {
            return Err(MintError::InvalidConfig(format!(
                "ridge_lambda must be positive, got {}",
                self.ridge_lambda
            )));
        }
        if let (KernelKind::Rbf, Bandwidth::Value(b)) = (self.kind, self.bandwidth) {
            if !(b > 0.0 && b.is_finite()) {
                return Err(MintError::InvalidConfig(format!("rbf bandwidth must be positive, got {b}")));
            }
        }
        Ok(())
    }

    /// Replaces a median-heuristic bandwidth by its value on `data`.
    pub fn resolve(&self, data: &DMatrix<f64>, seed: u64) -> Result<Self> {
        self.validate()?;
        match (self.kind, self.bandwidth) {
            (KernelKind::Rbf, Bandwidth::MedianHeuristic) => Ok(Self {
                bandwidth: Bandwidth::Value(median_heuristic(data, seed)?),
                ..*self
            }),
            _ => Ok(*self),
        }
    }
}

/// Median pairwise Euclidean distance over at most [`MEDIAN_SUBSAMPLE`] rows.
pub fn median_heuristic(data: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let n = data.nrows();
    if n < 2 {
        return Err(MintError::InvalidInput("median heuristic needs at least 2 rows".into()));
    }
    let rows: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        let mut r = rng::stream(seed, &[TAG_BANDWIDTH]);
        let mut idx = index::sample(&mut r, n, MEDIAN_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            dists.push((data.row(i) - data.row(j)).norm());
        }
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *m;
    if median <= 0.0 {
        return Err(MintError::Numerical("median pairwise distance is zero".into()));
    }
    Ok(median)
}

/// Gram matrix `k(row_i(xa), row_j(xb))`.
pub fn gram(xa: &DMatrix<f64>, xb: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if xa.ncols() != xb.ncols() {
        return Err(MintError::DimensionMismatch(format!(
            "kernel inputs have {} and {} columns",
            xa.ncols(),
            xb.ncols()
        )));
    }
    match spec.kind {
        KernelKind::Linear => Ok(xa * xb.transpose()),
        KernelKind::Rbf => {
            let b = match spec.bandwidth {
                Bandwidth::Value(b) if b > 0.0 => b,
                Bandwidth::Value(b) => {
                    return Err(MintError::InvalidConfig(format!("rbf bandwidth must be positive, got {b}")))
                }
                Bandwidth::MedianHeuristic => {
                    return Err(MintError::InvalidConfig(
                        "median-heuristic bandwidth must be resolved before building a Gram matrix".into(),
                    ))
                }
            };
            let scale = -0.5 / (b * b);
            let na: Vec<f64> = xa.row_iter().map(|r| r.norm_squared()).collect();
            let nb: Vec<f64> = xb.row_iter().map(|r| r.norm_squared()).collect();
            let mut g = xa * xb.transpose();
            for j in 0..g.ncols() {
                for i in 0..g.nrows() {
                    let d2 = (na[i] + nb[j] - 2.0 * g[(i, j)]).max(0.0);
                    g[(i, j)] = (scale * d2).exp();
                }
            }
            Ok(g)
        }
    }
}

/// Kernel ridge dual coefficients: solves `(G + n lambda I) c = target`.
pub fn kernel_dual(g: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = g.nrows();
    if g.ncols() != n || target.len() != n {
        return Err(MintError::DimensionMismatch(format!(
            "Gram is {}x{}, target has {} entries",
            g.nrows(),
            g.ncols(),
            target.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(MintError::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let scale = g.amax().max(f64::MIN_POSITIVE);
    for j in 0..n {
        for i in 0..j {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                return Err(MintError::InvalidInput(format!("Gram matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut m = g.clone();
    for i in 0..n {
        m[(i, i)] += n as f64 * lambda;
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| MintError::Numerical("Gram matrix is not positive semi-definite".into()))?;
    let mut c = chol.solve(target);
    // one step of iterative refinement; the system is badly conditioned for small lambda
    let r = target - &m * &c;
    c += chol.solve(&r);
    Ok(c)
}

/// Dual coefficients with the numerical null space of `G` removed.
///
/// Combinations `sum v_i k(x_i, .)` with `G v = 0` are the zero function, so
/// dropping them leaves the fitted function unchanged. Keeping them makes
/// the coefficients grow like `1 / (n lambda)` and destroys the accuracy of
/// later quadratic forms.
fn range_dual(g: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = g.nrows();
    let eig = g.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if eig.eigenvalues.min() < -1e-10 * top.max(1.0) {
        return Err(MintError::Numerical(format!(
            "Gram matrix is not positive semi-definite (min eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let tol = 10.0 * n as f64 * f64::EPSILON * top;
    let proj = eig.eigenvectors.transpose() * target;
    let mut c = DVector::zeros(n);
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > tol {
            c.axpy(proj[j] / (ev + n as f64 * lambda), &eig.eigenvectors.column(j), 1.0);
        }
    }
    Ok(c)
}

struct DualBlock {
    inputs: DMatrix<f64>,
    coef: DVector<f64>,
}

fn with_treatment(x: &DMatrix<f64>, a: &DVector<f64>) -> DMatrix<f64> {
    let mut xa = DMatrix::zeros(x.nrows(), x.ncols() + 1);
    xa.columns_mut(0, x.ncols()).copy_from(x);
    xa.set_column(x.ncols(), a);
    xa
}

fn pooled(dataset: &MultiEnvDataset, f: impl Fn(usize) -> DMatrix<f64>) -> DMatrix<f64> {
    let parts: Vec<DMatrix<f64>> = (0..dataset.k()).map(f).collect();
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, parts[0].ncols());
    let mut r = 0;
    for p in &parts {
        out.rows_mut(r, p.nrows()).copy_from(p);
        r += p.nrows();
    }
    out
}

fn cross_gram(blocks: &[DualBlock], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let k = blocks.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let g = gram(&blocks[i].inputs, &blocks[j].inputs, spec)?;
            Ok(blocks[i].coef.dot(&(g * &blocks[j].coef)))
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(k, k);
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}

/// Environment-level inner-product matrices `(G_omega, G_gamma)`.
pub fn kernel_gram_matrices(
    dataset: &MultiEnvDataset,
    k_spec: &KernelSpec,
    h_spec: &KernelSpec,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !dataset.is_balanced() {
        return Err(MintError::InvalidInput(
            "kernel statistic requires equal sample sizes in all environments".into(),
        ));
    }
    let blocks = dataset.blocks();
    let k_spec = k_spec.resolve(&pooled(dataset, |s| blocks[s].x().clone()), seed)?;
    let h_spec = h_spec.resolve(&pooled(dataset, |s| with_treatment(blocks[s].x(), blocks[s].a())), seed)?;

    let duals: Vec<(DualBlock, DualBlock)> = blocks
        .par_iter()
        .map(|b| {
            let ctx = |e: MintError| e.context(format!("environment {}", b.env_id()));
            let x = b.x().clone();
            let c = range_dual(&gram(&x, &x, &k_spec)?, b.a(), k_spec.ridge_lambda).map_err(ctx)?;
            let xa = with_treatment(b.x(), b.a());
            let d = range_dual(&gram(&xa, &xa, &h_spec)?, b.y(), h_spec.ridge_lambda).map_err(ctx)?;
            Ok((DualBlock { inputs: x, coef: c }, DualBlock { inputs: xa, coef: d }))
        })
        .collect::<Result<_>>()?;
    let (omega, gamma): (Vec<_>, Vec<_>) = duals.into_iter().unzip();
    let g_omega = cross_gram(&omega, &k_spec)?;
    let g_gamma = cross_gram(&gamma, &h_spec)?;
    for g in [&g_omega, &g_gamma] {
        let min_eig = g.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * g.amax().max(1.0) {
            return Err(MintError::Numerical(format!(
                "environment inner-product matrix is not PSD (min eigenvalue {min_eig:e})"
            )));
        }
    }
    Ok((g_omega, g_gamma))
}

/// The Frobenius statistic computed from kernel ridge fits. Median-heuristic
/// bandwidths are resolved with seed 0.
pub fn kernel_statistic(dataset: &MultiEnvDataset, k_spec: &KernelSpec, h_spec: &KernelSpec) -> Result<f64> {
    let (go, gg) = kernel_gram_matrices(dataset, k_spec, h_spec, 0)?;
    crate::mint::centered_gram_statistic(&go, &gg)
}

fn permuted_trace(a: &DMatrix<f64>, b: &DMatrix<f64>, perm: &[usize]) -> f64 {
    let k = perm.len();
    let mut tr = 0.0;
    for j in 0..k {
        let pj = perm[j];
        for i in 0..k {
            tr += a[(perm[i], pj)] * b[(j, i)];
        }
    }
    tr
}

/// Permutation-calibrated kernel test. The null permutes environments on
/// the treatment side (rows and columns of `G_omega` together).
pub fn kernel_mint_test(
    dataset: &MultiEnvDataset,
    k_spec: &KernelSpec,
    h_spec: &KernelSpec,
    alpha: f64,
    resamples: usize,
    seed: u64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if resamples == 0 {
        return Err(MintError::InvalidConfig("resamples must be positive".into()));
    }
    let (go, gg) = kernel_gram_matrices(dataset, k_spec, h_spec, seed)?;
    let k = go.nrows();
    let kf = k as f64;
    let a = double_center(&go);
    let b = double_center(&gg);
    let identity: Vec<usize> = (0..k).collect();
    let stat = |perm: &[usize]| permuted_trace(&a, &b, perm).max(0.0).sqrt() / kf;
    let statistic = stat(&identity);
    let null: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|m| {
            let mut r = rng::stream(seed, &[TAG_PERMUTATION, m]);
            let mut perm = identity.clone();
            perm.shuffle(&mut r);
            stat(&perm)
        })
        .collect();
    let mut result = TestResult::from_null(TestMethod::KernelMint, statistic, null, alpha, seed, true)?;
    result.experimental = true;
    if k == 2 {
        result.warnings.push(SMALL_K_WARNING.into());
    }
    Ok(result)
}
