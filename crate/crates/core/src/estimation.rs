//! Per-environment least-squares fits of the treatment and outcome working
//! models.
//!
//! Ridge convention: `ridge = lambda` solves `(D^T D + lambda I) b = D^T y`
//! with no sample-size scaling. The kernel module uses `n * lambda`
//! instead; see [`crate::kernel::kernel_dual`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::{EnvironmentBlock, MultiEnvDataset};
use crate::error::{MintError, Result};
use crate::features::{build_outcome_features, build_treatment_features, FeatureSpec};
use crate::linalg;

/// Least-squares (or ridge) coefficients of `target` on `design`.
///
/// With `ridge == 0` the problem is solved by pivoted Householder QR and a
/// design whose numerical rank falls below its column count is rejected.
/// Rank tolerance: `max(n, m) * eps * sigma_max`.
pub fn least_squares_fit(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>> {
    check_finite(design, target)?;
    let (n, m) = design.shape();
    let sol = linalg::solve_least_squares(design.as_slice(), n, m, target.as_slice(), ridge)?;
    Ok(DVector::from_vec(sol.coefficients))
}

fn check_finite(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<()> {
    if design.iter().any(|v| !v.is_finite()) {
        return Err(MintError::NonFinite("design".into()));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(MintError::NonFinite("target".into()));
    }
    Ok(())
}

/// Diagnostics of a single working-model fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    /// `RSS / (n - m)`.
    pub residual_variance: f64,
    /// Ratio of extreme singular values of the design.
    pub design_condition_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvDiagnostics {
    pub treatment: FitDiagnostics,
    pub outcome: FitDiagnostics,
}

/// Fitted mechanism parameters, one row per environment.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismEstimates {
    /// `K x z`, row `s` is the treatment-model coefficient vector.
    pub omegas: DMatrix<f64>,
    /// `K x z'`, row `s` is the outcome-model coefficient vector.
    pub gammas: DMatrix<f64>,
    pub diagnostics: Vec<EnvDiagnostics>,
}

/// Cached design matrices for every environment.
///
/// Features are computed row-wise, so a bootstrap resample of an environment
/// is exactly the corresponding row selection of its cached designs.
#[derive(Debug, Clone)]
pub(crate) struct EnvDesign {
    pub psi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub a: DVector<f64>,
    pub y: DVector<f64>,
}

pub(crate) fn check_dimensions(
    dataset: &MultiEnvDataset,
    psi_spec: &FeatureSpec,
    phi_spec: &FeatureSpec,
) -> Result<()> {
    let min_n = dataset.min_n();
    let z = psi_spec.dim(dataset.d());
    let z2 = phi_spec.dim(dataset.d());
    let dim = z.max(z2);
    if dim >= min_n {
        return Err(MintError::TooManyFeatures { dim, min_n });
    }
    Ok(())
}

pub(crate) fn build_designs(
    dataset: &MultiEnvDataset,
    psi_spec: &FeatureSpec,
    phi_spec: &FeatureSpec,
) -> Result<Vec<EnvDesign>> {
    check_dimensions(dataset, psi_spec, phi_spec)?;
    dataset
        .blocks()
        .iter()
        .map(|b: &EnvironmentBlock| {
            Ok(EnvDesign {
                psi: build_treatment_features(b.x(), psi_spec)?,
                phi: build_outcome_features(b.x(), b.a(), phi_spec)?,
                a: b.a().clone(),
                y: b.y().clone(),
            })
        })
        .collect()
}

fn diagnose(design: &DMatrix<f64>, target: &DVector<f64>, ridge: f64) -> Result<(Vec<f64>, FitDiagnostics)> {
    let (n, m) = design.shape();
    let sol = linalg::solve_least_squares(design.as_slice(), n, m, target.as_slice(), ridge)?;
    // R from the unpenalized factorization carries the design's singular values.
    let r = if ridge > 0.0 {
        linalg::solve_least_squares(design.as_slice(), n, m, target.as_slice(), 0.0)
            .map(|s| s.r)
            .unwrap_or_default()
    } else {
        sol.r.clone()
    };
    let cond = if r.is_empty() {
        f64::INFINITY
    } else {
        let smax = linalg::largest_singular_value(&r, m);
        let smin = linalg::smallest_singular_value(&r, m);
        if smin > 0.0 {
            (smax / smin).max(1.0)
        } else {
            f64::INFINITY
        }
    };
    let residual_variance = if n > m { sol.rss / (n - m) as f64 } else { 0.0 };
    Ok((
        sol.coefficients,
        FitDiagnostics {
            residual_variance,
            design_condition_estimate: cond,
        },
    ))
}

/// Fits both working models in every environment.
pub fn fit_mechanisms(
    dataset: &MultiEnvDataset,
    psi_spec: &FeatureSpec,
    phi_spec: &FeatureSpec,
    ridge: f64,
) -> Result<MechanismEstimates> {
    let designs = build_designs(dataset, psi_spec, phi_spec)?;
    let per_env: Vec<(Vec<f64>, Vec<f64>, EnvDiagnostics)> = designs
        .par_iter()
        .enumerate()
        .map(|(s, d)| {
            let ctx = |e: MintError| e.context(format!("environment {}", dataset.blocks()[s].env_id()));
            let (w, td) = diagnose(&d.psi, &d.a, ridge).map_err(ctx)?;
            let (g, od) = diagnose(&d.phi, &d.y, ridge).map_err(ctx)?;
            Ok((
                w,
                g,
                EnvDiagnostics {
                    treatment: td,
                    outcome: od,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let k = per_env.len();
    let z = designs[0].psi.ncols();
    let z2 = designs[0].phi.ncols();
    let omegas = DMatrix::from_fn(k, z, |s, i| per_env[s].0[i]);
    let gammas = DMatrix::from_fn(k, z2, |s, j| per_env[s].1[j]);
    Ok(MechanismEstimates {
        omegas,
        gammas,
        diagnostics: per_env.into_iter().map(|p| p.2).collect(),
    })
}

/// Coefficients only, for the resampling hot path.
pub(crate) fn fit_coefficients(design: &DMatrix<f64>, target: &DVector<f64>, ridge: f64) -> Result<Vec<f64>> {
    let (n, m) = design.shape();
    linalg::solve_least_squares(design.as_slice(), n, m, target.as_slice(), ridge).map(|s| s.coefficients)
}
