//! Multi-environment observational data.
//!
//! Each environment contributes an `(X, A, Y)` block of covariates, a
//! continuous treatment and a continuous outcome. Blocks share the covariate
//! dimension `d`; sample sizes may differ between environments.

use nalgebra::{DMatrix, DVector};

use crate::error::{MintError, Result};

/// Observations from a single environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentBlock {
    env_id: String,
    x: DMatrix<f64>,
    a: DVector<f64>,
    y: DVector<f64>,
}

impl EnvironmentBlock {
    pub fn new(
        env_id: impl Into<String>,
        x: DMatrix<f64>,
        a: DVector<f64>,
        y: DVector<f64>,
    ) -> Result<Self> {
        let env_id = env_id.into();
        let n = x.nrows();
        if n == 0 {
            return Err(MintError::InvalidInput(format!(
                "environment '{env_id}' has no observations"
            )));
        }
        if a.len() != n || y.len() != n {
            return Err(MintError::DimensionMismatch(format!(
                "environment '{env_id}': X has {n} rows, A has {}, Y has {}",
                a.len(),
                y.len()
            )));
        }
        if x.iter().chain(a.iter()).chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(MintError::NonFinite(format!("environment '{env_id}'")));
        }
        Ok(Self { env_id, x, a, y })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Returns a copy of the block with the rows at `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            env_id: self.env_id.clone(),
            x: self.x.select_rows(indices),
            a: self.a.select_rows(indices),
            y: self.y.select_rows(indices),
        }
    }

    pub(crate) fn with_x(&self, x: DMatrix<f64>) -> Self {
        Self {
            env_id: self.env_id.clone(),
            x,
            a: self.a.clone(),
            y: self.y.clone(),
        }
    }
}

/// An ordered collection of at least two environment blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEnvDataset {
    blocks: Vec<EnvironmentBlock>,
    d: usize,
}

impl MultiEnvDataset {
    pub fn new(blocks: Vec<EnvironmentBlock>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(MintError::TooFewEnvironments(blocks.len()));
        }
        let d = blocks[0].d();
        for b in &blocks {
            if b.d() != d {
                return Err(MintError::DimensionMismatch(format!(
                    "environment '{}' has {} covariates, expected {d}",
                    b.env_id(),
                    b.d()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for b in &blocks {
            if !seen.insert(b.env_id()) {
                return Err(MintError::InvalidInput(format!(
                    "duplicate environment id '{}'",
                    b.env_id()
                )));
            }
        }
        Ok(Self { blocks, d })
    }

    pub fn blocks(&self) -> &[EnvironmentBlock] {
        &self.blocks
    }

    /// Number of environments.
    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Total number of observations.
    pub fn n_total(&self) -> usize {
        self.blocks.iter().map(EnvironmentBlock::n).sum()
    }

    pub fn min_n(&self) -> usize {
        self.blocks.iter().map(EnvironmentBlock::n).min().unwrap_or(0)
    }

    /// True when every environment has the same number of observations.
    pub fn is_balanced(&self) -> bool {
        let n0 = self.blocks[0].n();
        self.blocks.iter().all(|b| b.n() == n0)
    }

    pub(crate) fn map_blocks(
        &self,
        f: impl Fn(&EnvironmentBlock) -> EnvironmentBlock,
    ) -> Result<Self> {
        Self::new(self.blocks.iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(id: &str, n: usize, d: usize) -> EnvironmentBlock {
        EnvironmentBlock::new(
            id,
            DMatrix::from_fn(n, d, |i, j| (i + j) as f64),
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 2.0),
        )
        .unwrap()
    }

    #[test]
    fn rejects_single_environment() {
        let err = MultiEnvDataset::new(vec![block("a", 3, 1)]).unwrap_err();
        assert!(matches!(err, MintError::TooFewEnvironments(1)));
    }

    #[test]
    fn rejects_mismatched_dimension() {
        let err = MultiEnvDataset::new(vec![block("a", 3, 1), block("b", 3, 2)]).unwrap_err();
        assert!(matches!(err, MintError::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = MultiEnvDataset::new(vec![block("a", 3, 1), block("a", 4, 1)]).unwrap_err();
        assert!(matches!(err, MintError::InvalidInput(_)));
    }

    #[test]
    fn rejects_non_finite_and_length_mismatch() {
        let x = DMatrix::from_element(2, 1, f64::NAN);
        let e = EnvironmentBlock::new("a", x, DVector::zeros(2), DVector::zeros(2));
        assert!(matches!(e, Err(MintError::NonFinite(_))));
        let e = EnvironmentBlock::new(
            "a",
            DMatrix::zeros(2, 1),
            DVector::zeros(3),
            DVector::zeros(2),
        );
        assert!(matches!(e, Err(MintError::DimensionMismatch(_))));
    }

    #[test]
    fn sizes() {
        let ds = MultiEnvDataset::new(vec![block("a", 3, 2), block("b", 5, 2)]).unwrap();
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.n_total(), 8);
        assert_eq!(ds.min_n(), 3);
        assert!(!ds.is_balanced());
    }
}
