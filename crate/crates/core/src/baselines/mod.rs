//! The transportability baseline and shared statistical utilities.

pub mod special;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiEnvDataset;
use crate::error::{MintError, Result};
use crate::estimation::least_squares_fit;
use crate::features::{build_outcome_features, FeatureSpec};
use crate::linalg;
use crate::mint::{check_alpha, TestMethod, TestResult, SMALL_K_WARNING};

pub use special::{chi2_survival, f_critical, f_survival};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMethod {
    Fisher,
    Tippett,
}

/// A set of p-values to be combined into one.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueBundle {
    pub values: Vec<f64>,
    pub method: CombineMethod,
}

impl PValueBundle {
    pub fn new(values: Vec<f64>, method: CombineMethod) -> Result<Self> {
        if values.is_empty() {
            return Err(MintError::InvalidInput("empty p-value bundle".into()));
        }
        if let Some(p) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(MintError::InvalidInput(format!("p-value {p} outside [0, 1]")));
        }
        Ok(Self { values, method })
    }

    pub fn combine(&self) -> Result<f64> {
        match self.method {
            CombineMethod::Fisher => combine_fisher(self),
            CombineMethod::Tippett => combine_tippett(self),
        }
    }
}

/// Fisher's method: `-2 sum ln p_k ~ chi2(2k)` under the null.
pub fn combine_fisher(bundle: &PValueBundle) -> Result<f64> {
    if bundle.values.is_empty() {
        return Err(MintError::InvalidInput("empty p-value bundle".into()));
    }
    if bundle.values.iter().any(|&p| p == 0.0) {
        return Err(MintError::Numerical(
            "p-value of 0 makes the Fisher statistic infinite (underflow)".into(),
        ));
    }
    let stat: f64 = -2.0 * bundle.values.iter().map(|p| p.ln()).sum::<f64>();
    chi2_survival(stat, 2 * bundle.values.len() as u32)
}

/// Tippett's method: `1 - (1 - min p)^k`.
pub fn combine_tippett(bundle: &PValueBundle) -> Result<f64> {
    let k = bundle.values.len();
    if k == 0 {
        return Err(MintError::InvalidInput("empty p-value bundle".into()));
    }
    let min = bundle.values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(1.0 - (1.0 - min).powi(k as i32))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialCorrelation {
    pub r: f64,
    pub p_value: f64,
}

/// Pearson partial correlation of `x` and `y` given the columns of `z`
/// (an intercept is always added), with a two-sided t-test on `n - q - 2`
/// degrees of freedom.
pub fn partial_correlation(x: &DVector<f64>, y: &DVector<f64>, z: &DMatrix<f64>) -> Result<PartialCorrelation> {
    let n = x.len();
    let q = z.ncols();
    if y.len() != n || (q > 0 && z.nrows() != n) {
        return Err(MintError::DimensionMismatch(format!(
            "x has {n} entries, y {}, Z {} rows",
            y.len(),
            z.nrows()
        )));
    }
    if n <= q + 2 {
        return Err(MintError::InvalidInput(format!(
            "partial correlation needs n > q + 2 (n={n}, q={q})"
        )));
    }
    let mut design = DMatrix::from_element(n, q + 1, 1.0);
    if q > 0 {
        design.columns_mut(1, q).copy_from(z);
    }
    let rx = x - &design * least_squares_fit(&design, x, 0.0)?;
    let ry = y - &design * least_squares_fit(&design, y, 0.0)?;
    let (sx, sy) = (rx.norm(), ry.norm());
    let scale = x.amax().max(y.amax()).max(1.0) * (n as f64).sqrt();
    if sx <= 1e-12 * scale || sy <= 1e-12 * scale {
        return Err(MintError::Numerical("zero-variance residuals in partial correlation".into()));
    }
    let r = (rx.dot(&ry) / (sx * sy)).clamp(-1.0, 1.0);
    let df = (n - q - 2) as f64;
    let p_value = if 1.0 - r * r <= 8.0 * f64::EPSILON {
        0.0
    } else {
        special::t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)?
    };
    Ok(PartialCorrelation { r, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportVariant {
    /// Environment-specific coefficients for every outcome feature.
    #[default]
    FullInteraction,
    /// Environment-specific intercepts only.
    InterceptShift,
}

/// Nested-model F statistic and its degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedFTest {
    pub f: f64,
    pub df_num: u32,
    pub df_den: u32,
    pub rss_restricted: f64,
    pub rss_full: f64,
}

fn rss(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<f64> {
    let (n, m) = design.shape();
    Ok(linalg::solve_least_squares(design.as_slice(), n, m, target.as_slice(), 0.0)?.rss)
}

/// Computes the F statistic comparing a pooled outcome regression against
/// one with environment-specific terms.
pub fn transportability_f(
    dataset: &MultiEnvDataset,
    phi_spec: &FeatureSpec,
    variant: TransportVariant,
) -> Result<NestedFTest> {
    let k = dataset.k();
    let n = dataset.n_total();
    let zp = phi_spec.dim(dataset.d());
    let blocks: Vec<DMatrix<f64>> = dataset
        .blocks()
        .iter()
        .map(|b| build_outcome_features(b.x(), b.a(), phi_spec))
        .collect::<Result<_>>()?;
    let mut pooled = DMatrix::zeros(n, zp);
    let mut y = DVector::zeros(n);
    let mut row = 0;
    for (phi, b) in blocks.iter().zip(dataset.blocks()) {
        pooled.rows_mut(row, b.n()).copy_from(phi);
        y.rows_mut(row, b.n()).copy_from(b.y());
        row += b.n();
    }

    let (rss_full, df_full) = match variant {
        TransportVariant::FullInteraction => {
            // Interacting every column with the environment indicators is the
            // same model as separate per-environment fits.
            let mut total = 0.0;
            for (phi, b) in blocks.iter().zip(dataset.blocks()) {
                total += rss(phi, b.y())
                    .map_err(|e| e.context(format!("full model, environment {}", b.env_id())))?;
            }
            (total, k * zp)
        }
        TransportVariant::InterceptShift => {
            let mut design = DMatrix::zeros(n, zp + k - 1);
            design.columns_mut(0, zp).copy_from(&pooled);
            let mut row = dataset.blocks()[0].n();
            for (s, b) in dataset.blocks().iter().enumerate().skip(1) {
                design.view_mut((row, zp + s - 1), (b.n(), 1)).fill(1.0);
                row += b.n();
            }
            (rss(&design, &y).map_err(|e| e.context("full model"))?, zp + k - 1)
        }
    };
    if n <= df_full + 1 {
        return Err(MintError::InvalidInput(format!(
            "pooled sample {n} too small for a full model with {df_full} parameters"
        )));
    }
    let rss_restricted = rss(&pooled, &y).map_err(|e| e.context("restricted model"))?;
    let df_num = df_full - zp;
    let df_den = n - df_full;
    let f = if rss_full > 0.0 {
        ((rss_restricted - rss_full).max(0.0) / df_num as f64) / (rss_full / df_den as f64)
    } else if rss_restricted > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(NestedFTest {
        f,
        df_num: df_num as u32,
        df_den: df_den as u32,
        rss_restricted,
        rss_full,
    })
}

/// Tests the implication `Y _||_ S | X, A` of unconfoundedness combined with
/// transportability, by a nested-model F-test.
pub fn transportability_test(
    dataset: &MultiEnvDataset,
    phi_spec: &FeatureSpec,
    variant: TransportVariant,
    alpha: f64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let t = transportability_f(dataset, phi_spec, variant)?;
    let p_value = f_survival(t.f, t.df_num, t.df_den)?;
    let threshold = f_critical(alpha, t.df_num, t.df_den)?;
    let mut warnings = Vec::new();
    if dataset.k() == 2 {
        warnings.push(SMALL_K_WARNING.to_string());
    }
    Ok(TestResult {
        statistic: t.f,
        threshold,
        p_value,
        reject: p_value < alpha,
        alpha,
        resamples: None,
        seed: 0,
        method: TestMethod::Transportability,
        null_samples: None,
        experimental: false,
        warnings,
    })
}
