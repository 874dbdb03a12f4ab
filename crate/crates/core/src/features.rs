//! Design matrices for the treatment and outcome working models.
//!
//! Column order is fixed so coefficient positions are stable everywhere:
//!
//! * treatment: `[1 | X_1..X_d | X_1^2..X_d^2 | ... | X_1^p..X_d^p]`
//! * outcome: `[1 | covariate powers as above | A | A*X_1..A*X_d | A^2]`
//!
//! Only per-coordinate powers are generated; there are no cross-covariate
//! products. The intercept is an ordinary column.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MintError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Features of `X` used to model `E[A | X]`.
    TreatmentPsi,
    /// Features of `(X, A)` used to model `E[Y | X, A]`.
    OutcomePhi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub degree: usize,
    #[serde(default = "default_true")]
    pub include_intercept: bool,
    #[serde(default)]
    pub include_treatment_interactions: bool,
    #[serde(default)]
    pub include_treatment_square: bool,
}

fn default_true() -> bool {
    true
}

impl FeatureSpec {
    /// Polynomial treatment features of the given degree, with intercept.
    pub fn treatment(degree: usize) -> Self {
        Self {
            kind: FeatureKind::TreatmentPsi,
            degree,
            include_intercept: true,
            include_treatment_interactions: false,
            include_treatment_square: false,
        }
    }

    /// Polynomial outcome features `[1, powers, A]`.
    pub fn outcome(degree: usize) -> Self {
        Self {
            kind: FeatureKind::OutcomePhi,
            ..Self::treatment(degree)
        }
    }

    /// The outcome basis `[1, X, A, A*X, A^2]` that is well specified for the
    /// linear confounded example.
    pub fn outcome_full_linear() -> Self {
        Self::outcome(1).with_interactions(true).with_square(true)
    }

    pub fn with_intercept(mut self, on: bool) -> Self {
        self.include_intercept = on;
        self
    }

    pub fn with_interactions(mut self, on: bool) -> Self {
        self.include_treatment_interactions = on;
        self
    }

    pub fn with_square(mut self, on: bool) -> Self {
        self.include_treatment_square = on;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    /// Number of columns produced for `d` covariates.
    pub fn dim(&self, d: usize) -> usize {
        let base = usize::from(self.include_intercept) + d * self.degree;
        match self.kind {
            FeatureKind::TreatmentPsi => base,
            FeatureKind::OutcomePhi => {
                base + 1
                    + if self.include_treatment_interactions { d } else { 0 }
                    + usize::from(self.include_treatment_square)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(MintError::InvalidConfig(
                "feature degree must be at least 1".into(),
            ));
        }
        if self.kind == FeatureKind::TreatmentPsi
            && (self.include_treatment_interactions || self.include_treatment_square)
        {
            return Err(MintError::InvalidConfig(
                "treatment features cannot reference the treatment".into(),
            ));
        }
        Ok(())
    }
}

fn check_x(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(MintError::InvalidInput("empty covariate matrix".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MintError::NonFinite("covariates".into()));
    }
    Ok(())
}

fn fill_covariate_powers(out: &mut DMatrix<f64>, x: &DMatrix<f64>, degree: usize, first: usize) {
    let d = x.ncols();
    for j in 0..d {
        for i in 0..x.nrows() {
            let v = x[(i, j)];
            let mut p = v;
            for k in 0..degree {
                out[(i, first + k * d + j)] = p;
                p *= v;
            }
        }
    }
}

/// Builds the treatment design matrix `psi(X)`.
pub fn build_treatment_features(x: &DMatrix<f64>, spec: &FeatureSpec) -> Result<DMatrix<f64>> {
    if spec.kind != FeatureKind::TreatmentPsi {
        return Err(MintError::InvalidConfig(
            "expected a treatment feature spec".into(),
        ));
    }
    spec.validate()?;
    check_x(x)?;
    let (n, d) = x.shape();
    let mut out = DMatrix::zeros(n, spec.dim(d));
    let mut col = 0;
    if spec.include_intercept {
        out.column_mut(0).fill(1.0);
        col = 1;
    }
    fill_covariate_powers(&mut out, x, spec.degree, col);
    Ok(out)
}

/// Builds the outcome design matrix `phi(X, A)`.
pub fn build_outcome_features(
    x: &DMatrix<f64>,
    a: &DVector<f64>,
    spec: &FeatureSpec,
) -> Result<DMatrix<f64>> {
    if spec.kind != FeatureKind::OutcomePhi {
        return Err(MintError::InvalidConfig("expected an outcome feature spec".into()));
    }
    spec.validate()?;
    check_x(x)?;
    let (n, d) = x.shape();
    if a.len() != n {
        return Err(MintError::DimensionMismatch(format!(
            "X has {n} rows but A has length {}",
            a.len()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MintError::NonFinite("treatment".into()));
    }
    let mut out = DMatrix::zeros(n, spec.dim(d));
    let mut col = 0;
    if spec.include_intercept {
        out.column_mut(0).fill(1.0);
        col = 1;
    }
    fill_covariate_powers(&mut out, x, spec.degree, col);
    col += d * spec.degree;
    out.set_column(col, a);
    col += 1;
    if spec.include_treatment_interactions {
        for j in 0..d {
            for i in 0..n {
                out[(i, col + j)] = a[i] * x[(i, j)];
            }
        }
        col += d;
    }
    if spec.include_treatment_square {
        for i in 0..n {
            out[(i, col)] = a[i] * a[i];
        }
    }
    Ok(out)
}
