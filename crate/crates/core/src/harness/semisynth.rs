//! Semi-synthetic datasets: real covariates with simulated treatment and
//! outcome.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use super::io::{standardize_covariate_data, CovariateData};
use crate::dataset::{EnvironmentBlock, MultiEnvDataset};
use crate::dgp::{Generated, GroundTruth, PolyMechanism};
use crate::error::{MintError, Result};

/// Options of [`semi_synthetic_generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SemiSyntheticOptions {
    pub n_confounders: usize,
    pub degree: usize,
    pub observed: usize,
    pub confounded: bool,
}

/// Standardizes the covariates, picks `n_confounders` columns at random and
/// generates `(A, Y)` from them with the polynomial mechanism. Only the
/// first `observed` of the picked columns are kept as covariates.
///
/// Without confounding the hidden columns are left out of the generating
/// equations as well.
pub fn semi_synthetic_generate<R: Rng + ?Sized>(
    covariates: &CovariateData,
    opts: &SemiSyntheticOptions,
    rng: &mut R,
) -> Result<Generated> {
    let SemiSyntheticOptions { n_confounders, degree, observed, confounded } = *opts;
    if n_confounders == 0 || degree == 0 || observed == 0 {
        return Err(MintError::InvalidConfig(
            "n_confounders, degree and observed must be positive".into(),
        ));
    }
    if observed > n_confounders {
        return Err(MintError::InvalidConfig(format!(
            "observed subset ({observed}) larger than the confounder set ({n_confounders})"
        )));
    }
    if covariates.d() < n_confounders {
        return Err(MintError::InvalidInput(format!(
            "covariate file has {} columns, {n_confounders} confounders requested",
            covariates.d()
        )));
    }
    if covariates.k() < 2 {
        return Err(MintError::TooFewEnvironments(covariates.k()));
    }
    let std = standardize_covariate_data(covariates)?;
    let chosen = index::sample(rng, std.d(), n_confounders).into_vec();
    let generating: &[usize] = if confounded { &chosen } else { &chosen[..observed] };
    let mech = PolyMechanism::draw(generating.len(), degree, rng);

    let mut blocks = Vec::with_capacity(std.k());
    for (env, x) in std.env_ids.iter().zip(&std.blocks) {
        let alpha0: f64 = rng.sample(StandardNormal);
        let beta0: f64 = rng.sample(StandardNormal);
        let x_gen = x.select_columns(generating);
        let (a, y) = mech.emit(&x_gen, alpha0, beta0, None, rng);
        let x_obs: DMatrix<f64> = x.select_columns(&chosen[..observed]);
        blocks.push(EnvironmentBlock::new(env.clone(), x_obs, a, y)?);
    }
    let hidden = if confounded { n_confounders - observed } else { 0 };
    Ok(Generated {
        dataset: MultiEnvDataset::new(blocks)?,
        truth: GroundTruth {
            confounded: hidden > 0,
            varied: vec!["alpha0".into(), "beta0".into()],
            unmeasured_confounders: hidden,
            env_params: Vec::new(),
        },
    })
}
