//! The mechanism-independence test.
//!
//! Stage one fits the treatment and outcome working models in every
//! environment and measures the dependence between the two sets of fitted
//! coefficients with a scaled Frobenius norm of their cross-covariance
//! across environments. Stage two calibrates a rejection threshold from
//! `M` null statistics, each computed on a within-environment bootstrap
//! refit whose treatment coefficients are shuffled across environments.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiEnvDataset;
use crate::error::{MintError, Result};
use crate::estimation::{self, build_designs, EnvDesign, MechanismEstimates};
use crate::features::FeatureSpec;
use crate::format::{serialize_f17, serialize_vec_f17};
use crate::rng::{self, TAG_BOOTSTRAP, TAG_PERMUTATION};

/// Default number of resamples.
pub const DEFAULT_RESAMPLES: usize = 1000;
/// Relative ridge used when a bootstrap resample loses rank.
pub const DEFAULT_RIDGE_JITTER: f64 = 1e-8;

pub const SMALL_K_WARNING: &str =
    "only 2 environments: the permutation null has 2 distinct values and the test has no power";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Mint,
    MintNoBootstrap,
    Transportability,
    KernelMint,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Mint => "mint",
            TestMethod::MintNoBootstrap => "mint_no_bootstrap",
            TestMethod::Transportability => "transportability",
            TestMethod::KernelMint => "kernel_mint",
        }
    }
}

impl std::str::FromStr for TestMethod {
    type Err = MintError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mint" => Ok(TestMethod::Mint),
            "mint_no_bootstrap" => Ok(TestMethod::MintNoBootstrap),
            "transportability" => Ok(TestMethod::Transportability),
            "kernel_mint" => Ok(TestMethod::KernelMint),
            other => Err(MintError::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Outcome of a falsification test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    #[serde(serialize_with = "serialize_f17")]
    pub statistic: f64,
    #[serde(serialize_with = "serialize_f17")]
    pub threshold: f64,
    #[serde(serialize_with = "serialize_f17")]
    pub p_value: f64,
    pub reject: bool,
    #[serde(serialize_with = "serialize_f17")]
    pub alpha: f64,
    /// Number of resamples; `None` for analytic tests.
    pub resamples: Option<usize>,
    pub seed: u64,
    pub method: TestMethod,
    #[serde(serialize_with = "serialize_vec_f17")]
    pub null_samples: Option<Vec<f64>>,
    pub experimental: bool,
    pub warnings: Vec<String>,
}

impl TestResult {
    /// Assembles a resampling-based result from the observed statistic and
    /// its null samples.
    pub(crate) fn from_null(
        method: TestMethod,
        statistic: f64,
        null_samples: Vec<f64>,
        alpha: f64,
        seed: u64,
        keep_null: bool,
    ) -> Result<Self> {
        let threshold = calibrate_threshold(&null_samples, alpha)?;
        let p_value = monte_carlo_p_value(statistic, &null_samples);
        Ok(Self {
            statistic,
            threshold,
            p_value,
            reject: statistic > threshold,
            alpha,
            resamples: Some(null_samples.len()),
            seed,
            method,
            null_samples: keep_null.then_some(null_samples),
            experimental: false,
            warnings: Vec::new(),
        })
    }
}

/// Options of [`mint_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MintConfig {
    pub alpha: f64,
    pub resamples: usize,
    pub seed: u64,
    pub use_bootstrap: bool,
    pub ridge_jitter: f64,
    /// Retain the null statistics in the result.
    pub keep_null_samples: bool,
}

impl Default for MintConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
            use_bootstrap: true,
            ridge_jitter: DEFAULT_RIDGE_JITTER,
            keep_null_samples: true,
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MintError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `(1/K) * || sum_s (w_s - w_bar)(g_s - g_bar)^T ||_F`.
pub fn frobenius_statistic(omegas: &DMatrix<f64>, gammas: &DMatrix<f64>) -> Result<f64> {
    let k = omegas.nrows();
    if k < 2 {
        return Err(MintError::TooFewEnvironments(k));
    }
    if gammas.nrows() != k {
        return Err(MintError::DimensionMismatch(format!(
            "omegas have {k} rows, gammas have {}",
            gammas.nrows()
        )));
    }
    Ok(frobenius_unchecked(omegas, gammas, None))
}

/// Statistic with the omega rows optionally taken in `perm` order.
fn frobenius_unchecked(omegas: &DMatrix<f64>, gammas: &DMatrix<f64>, perm: Option<&[usize]>) -> f64 {
    let k = omegas.nrows();
    let (z, z2) = (omegas.ncols(), gammas.ncols());
    let kf = k as f64;
    let wbar: Vec<f64> = (0..z).map(|i| omegas.column(i).sum() / kf).collect();
    let gbar: Vec<f64> = (0..z2).map(|j| gammas.column(j).sum() / kf).collect();
    let mut cross = vec![0.0; z * z2];
    for s in 0..k {
        let src = perm.map_or(s, |p| p[s]);
        for i in 0..z {
            let dw = omegas[(src, i)] - wbar[i];
            for j in 0..z2 {
                cross[i * z2 + j] += dw * (gammas[(s, j)] - gbar[j]);
            }
        }
    }
    cross.iter().map(|c| c * c).sum::<f64>().sqrt() / kf
}

/// The same statistic from environment-level Gram matrices:
/// `(1/K) * sqrt(tr((H G_w H)(H G_g H)))` with `H = I - 11^T / K`.
pub fn centered_gram_statistic(g_omega: &DMatrix<f64>, g_gamma: &DMatrix<f64>) -> Result<f64> {
    let k = g_omega.nrows();
    if k < 2 {
        return Err(MintError::TooFewEnvironments(k));
    }
    if g_omega.shape() != (k, k) || g_gamma.shape() != (k, k) {
        return Err(MintError::DimensionMismatch(
            "Gram matrices must both be K x K".into(),
        ));
    }
    let a = double_center(g_omega);
    let b = double_center(g_gamma);
    // tr(AB) = sum_ij A_ij B_ji
    let tr: f64 = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)] * b[(j, i)])
        .sum();
    Ok(tr.max(0.0).sqrt() / k as f64)
}

pub(crate) fn double_center(g: &DMatrix<f64>) -> DMatrix<f64> {
    let k = g.nrows();
    let kf = k as f64;
    let row_means: Vec<f64> = (0..k).map(|i| g.row(i).sum() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| g.column(j).sum() / kf).collect();
    let grand = row_means.iter().sum::<f64>() / kf;
    DMatrix::from_fn(k, k, |i, j| g[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Rejection threshold: the `ceil((1 - alpha) M)`-th smallest null sample.
pub fn calibrate_threshold(null_samples: &[f64], alpha: f64) -> Result<f64> {
    if null_samples.is_empty() {
        return Err(MintError::InvalidInput("no null samples".into()));
    }
    check_alpha(alpha)?;
    let m = null_samples.len();
    let mut sorted = null_samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let target = (1.0 - alpha) * m as f64;
    let rank = ((target - 1e-9 * m as f64).ceil() as usize).clamp(1, m);
    Ok(sorted[rank - 1])
}

/// `(1 + #{T_m >= t}) / (M + 1)`.
pub fn monte_carlo_p_value(statistic: f64, null_samples: &[f64]) -> f64 {
    let exceed = null_samples.iter().filter(|&&t| t >= statistic).count();
    (1 + exceed) as f64 / (null_samples.len() + 1) as f64
}

fn resample_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn fit_with_jitter(
    design: &DMatrix<f64>,
    target: &nalgebra::DVector<f64>,
    ridge_jitter: f64,
) -> Result<Vec<f64>> {
    match estimation::fit_coefficients(design, target, 0.0) {
        Err(MintError::RankDeficient { .. }) => {
            let m = design.ncols().max(1) as f64;
            let ridge = ridge_jitter * design.norm_squared() / m;
            if !(ridge > 0.0) {
                return Err(MintError::Numerical(
                    "resampled design is identically zero".into(),
                ));
            }
            estimation::fit_coefficients(design, target, ridge)
        }
        other => other,
    }
}

/// Refits both working models on one within-environment bootstrap resample.
fn bootstrap_coefficients<R: Rng + ?Sized>(
    designs: &[EnvDesign],
    ridge_jitter: f64,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = designs.len();
    let z = designs[0].psi.ncols();
    let z2 = designs[0].phi.ncols();
    let mut omegas = DMatrix::zeros(k, z);
    let mut gammas = DMatrix::zeros(k, z2);
    for (s, d) in designs.iter().enumerate() {
        let idx = resample_indices(d.a.len(), rng);
        let w = fit_with_jitter(&d.psi.select_rows(&idx), &d.a.select_rows(&idx), ridge_jitter)?;
        let g = fit_with_jitter(&d.phi.select_rows(&idx), &d.y.select_rows(&idx), ridge_jitter)?;
        omegas.row_mut(s).copy_from_slice(&w);
        gammas.row_mut(s).copy_from_slice(&g);
    }
    Ok((omegas, gammas))
}

/// Fits both working models on a within-environment bootstrap resample of
/// every environment. Rank-deficient resamples are solved with ridge
/// `ridge_jitter * mean(diag(D^T D))`.
pub fn bootstrap_refit<R: Rng + ?Sized>(
    dataset: &MultiEnvDataset,
    psi_spec: &FeatureSpec,
    phi_spec: &FeatureSpec,
    ridge_jitter: f64,
    rng: &mut R,
) -> Result<MechanismEstimates> {
    let designs = build_designs(dataset, psi_spec, phi_spec)?;
    let mut diagnostics = Vec::with_capacity(designs.len());
    let k = designs.len();
    let mut omegas = DMatrix::zeros(k, designs[0].psi.ncols());
    let mut gammas = DMatrix::zeros(k, designs[0].phi.ncols());
    for (s, d) in designs.iter().enumerate() {
        let idx = resample_indices(d.a.len(), rng);
        let (psi, a) = (d.psi.select_rows(&idx), d.a.select_rows(&idx));
        let (phi, y) = (d.phi.select_rows(&idx), d.y.select_rows(&idx));
        let w = fit_with_jitter(&psi, &a, ridge_jitter)?;
        let g = fit_with_jitter(&phi, &y, ridge_jitter)?;
        let diag = |design: &DMatrix<f64>, target: &nalgebra::DVector<f64>, coef: &[f64]| {
            let b = nalgebra::DVector::from_column_slice(coef);
            let rss = (target - design * b).norm_squared();
            let (n, m) = design.shape();
            let sv = design.singular_values();
            let (smax, smin) = (sv.max(), sv.min());
            estimation::FitDiagnostics {
                residual_variance: if n > m { rss / (n - m) as f64 } else { 0.0 },
                design_condition_estimate: if smin > 0.0 { (smax / smin).max(1.0) } else { f64::INFINITY },
            }
        };
        diagnostics.push(estimation::EnvDiagnostics {
            treatment: diag(&psi, &a, &w),
            outcome: diag(&phi, &y, &g),
        });
        omegas.row_mut(s).copy_from_slice(&w);
        gammas.row_mut(s).copy_from_slice(&g);
    }
    Ok(MechanismEstimates {
        omegas,
        gammas,
        diagnostics,
    })
}

/// Runs the full two-stage test.
pub fn mint_test(
    dataset: &MultiEnvDataset,
    psi_spec: &FeatureSpec,
    phi_spec: &FeatureSpec,
    config: &MintConfig,
) -> Result<TestResult> {
    check_alpha(config.alpha)?;
    if config.resamples == 0 {
        return Err(MintError::InvalidConfig("resamples must be positive".into()));
    }
    let designs = build_designs(dataset, psi_spec, phi_spec)?;
    let k = designs.len();

    let mut omegas = DMatrix::zeros(k, designs[0].psi.ncols());
    let mut gammas = DMatrix::zeros(k, designs[0].phi.ncols());
    for (s, d) in designs.iter().enumerate() {
        let ctx = |e: MintError| e.context(format!("environment {}", dataset.blocks()[s].env_id()));
        let w = estimation::fit_coefficients(&d.psi, &d.a, 0.0).map_err(ctx)?;
        let g = estimation::fit_coefficients(&d.phi, &d.y, 0.0).map_err(ctx)?;
        omegas.row_mut(s).copy_from_slice(&w);
        gammas.row_mut(s).copy_from_slice(&g);
    }
    let statistic = frobenius_unchecked(&omegas, &gammas, None);

    let null_samples: Vec<f64> = (0..config.resamples as u64)
        .into_par_iter()
        .map(|m| {
            let mut perm_rng = rng::stream(config.seed, &[TAG_PERMUTATION, m]);
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut perm_rng);
            if config.use_bootstrap {
                let mut boot_rng = rng::stream(config.seed, &[TAG_BOOTSTRAP, m]);
                let (w, g) = bootstrap_coefficients(&designs, config.ridge_jitter, &mut boot_rng)
                    .map_err(|e| e.context(format!("bootstrap resample {m}")))?;
                Ok(frobenius_unchecked(&w, &g, Some(&perm)))
            } else {
                Ok(frobenius_unchecked(&omegas, &gammas, Some(&perm)))
            }
        })
        .collect::<Result<_>>()?;

    let method = if config.use_bootstrap {
        TestMethod::Mint
    } else {
        TestMethod::MintNoBootstrap
    };
    let mut result = TestResult::from_null(
        method,
        statistic,
        null_samples,
        config.alpha,
        config.seed,
        config.keep_null_samples,
    )?;
    if k == 2 {
        result.warnings.push(SMALL_K_WARNING.into());
    }
    Ok(result)
}

/// Permutation-only test on given parameter matrices (no estimation step).
pub fn permutation_test(
    omegas: &DMatrix<f64>,
    gammas: &DMatrix<f64>,
    alpha: f64,
    resamples: usize,
    seed: u64,
) -> Result<TestResult> {
    let statistic = frobenius_statistic(omegas, gammas)?;
    if resamples == 0 {
        return Err(MintError::InvalidConfig("resamples must be positive".into()));
    }
    let k = omegas.nrows();
    let null: Vec<f64> = (0..resamples as u64)
        .map(|m| {
            let mut r = rng::stream(seed, &[TAG_PERMUTATION, m]);
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut r);
            frobenius_unchecked(omegas, gammas, Some(&perm))
        })
        .collect();
    TestResult::from_null(TestMethod::MintNoBootstrap, statistic, null, alpha, seed, false)
}
