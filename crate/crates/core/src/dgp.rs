//! Synthetic data generators and closed-form mechanism parameters.
//!
//! Two generators are provided. The linear example has a scalar covariate
//! `X`, an optional scalar confounder `U` and outcome
//!
//! ```text
//! A = a0 + aX X + aU U + eA
//! Y = b0 + bX X + bA A + bAX A X + (bU + A bAU) U + eY
//! ```
//!
//! The polynomial generator draws `d` correlated covariates and uses
//! polynomial features of a given degree for both mechanisms, with
//! environment-specific intercepts.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::{EnvironmentBlock, MultiEnvDataset};
use crate::error::{MintError, Result};
use crate::features::FeatureSpec;

/// Names accepted in [`LinearExampleConfig::varying`].
pub const LINEAR_PARAMETERS: [&str; 13] = [
    "alpha0", "alphaX", "alphaU", "beta0", "betaX", "betaA", "betaAX", "betaU", "betaAU", "muX",
    "muU", "sigmaX", "sigmaU",
];

const CONFOUNDER_DEFAULT: f64 = 0.25;

/// Ground truth attached to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub confounded: bool,
    pub varied: Vec<String>,
    /// Confounders that affect both A and Y but are absent from the data.
    pub unmeasured_confounders: usize,
    /// Per-environment parameters of the linear example (empty otherwise).
    pub env_params: Vec<OracleParams>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: MultiEnvDataset,
    pub truth: GroundTruth,
}

fn default_true() -> bool {
    true
}
fn half() -> f64 {
    0.5
}
fn third() -> f64 {
    1.0 / 3.0
}
fn one() -> f64 {
    1.0
}
fn eighth() -> f64 {
    0.125
}
fn default_range() -> [f64; 2] {
    [0.1, 3.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearExampleConfig {
    pub k: usize,
    pub n: usize,
    /// Sets the default of `alphaU`, `betaU` and `betaAU` to 1/4 (else 0).
    #[serde(default = "default_true")]
    pub confounded: bool,
    #[serde(default = "half")]
    pub alpha0: f64,
    #[serde(default = "third", rename = "alphaX")]
    pub alpha_x: f64,
    #[serde(default, rename = "alphaU", skip_serializing_if = "Option::is_none")]
    pub alpha_u: Option<f64>,
    #[serde(default = "half")]
    pub beta0: f64,
    #[serde(default = "third", rename = "betaX")]
    pub beta_x: f64,
    #[serde(default = "half", rename = "betaA")]
    pub beta_a: f64,
    #[serde(default = "third", rename = "betaAX")]
    pub beta_ax: f64,
    #[serde(default, rename = "betaU", skip_serializing_if = "Option::is_none")]
    pub beta_u: Option<f64>,
    #[serde(default, rename = "betaAU", skip_serializing_if = "Option::is_none")]
    pub beta_au: Option<f64>,
    #[serde(default = "one", rename = "muX")]
    pub mu_x: f64,
    #[serde(default = "one", rename = "muU")]
    pub mu_u: f64,
    #[serde(default = "one", rename = "sigmaX")]
    pub sigma_x: f64,
    #[serde(default = "one", rename = "sigmaU")]
    pub sigma_u: f64,
    #[serde(default = "eighth")]
    pub noise_var_a: f64,
    #[serde(default = "eighth")]
    pub noise_var_y: f64,
    #[serde(default)]
    pub varying: BTreeSet<String>,
    #[serde(default = "default_range")]
    pub varying_range: [f64; 2],
}

impl LinearExampleConfig {
    pub fn new(k: usize, n: usize, confounded: bool) -> Self {
        Self {
            k,
            n,
            confounded,
            alpha0: 0.5,
            alpha_x: 1.0 / 3.0,
            alpha_u: None,
            beta0: 0.5,
            beta_x: 1.0 / 3.0,
            beta_a: 0.5,
            beta_ax: 1.0 / 3.0,
            beta_u: None,
            beta_au: None,
            mu_x: 1.0,
            mu_u: 1.0,
            sigma_x: 1.0,
            sigma_u: 1.0,
            noise_var_a: 0.125,
            noise_var_y: 0.125,
            varying: BTreeSet::new(),
            varying_range: default_range(),
        }
    }

    pub fn vary(mut self, name: &str) -> Self {
        self.varying.insert(name.to_string());
        self
    }

    fn confounder_default(&self) -> f64 {
        if self.confounded {
            CONFOUNDER_DEFAULT
        } else {
            0.0
        }
    }

    pub fn alpha_u(&self) -> f64 {
        self.alpha_u.unwrap_or_else(|| self.confounder_default())
    }

    pub fn beta_u(&self) -> f64 {
        self.beta_u.unwrap_or_else(|| self.confounder_default())
    }

    pub fn beta_au(&self) -> f64 {
        self.beta_au.unwrap_or_else(|| self.confounder_default())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(MintError::TooFewEnvironments(self.k));
        }
        if self.n == 0 {
            return Err(MintError::InvalidConfig("N must be positive".into()));
        }
        for (name, v) in [
            ("sigmaX", self.sigma_x),
            ("sigmaU", self.sigma_u),
            ("noise_var_a", self.noise_var_a),
            ("noise_var_y", self.noise_var_y),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MintError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let [lo, hi] = self.varying_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MintError::InvalidConfig(format!("invalid varying_range [{lo}, {hi}]")));
        }
        for name in &self.varying {
            if !LINEAR_PARAMETERS.contains(&name.as_str()) {
                return Err(MintError::InvalidConfig(format!(
                    "unknown parameter '{name}' in varying (expected one of {})",
                    LINEAR_PARAMETERS.join(", ")
                )));
            }
            if name.starts_with("sigma") && lo <= 0.0 {
                return Err(MintError::InvalidConfig(format!(
                    "{name} is varied but varying_range includes non-positive values"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of one environment of the linear example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub alpha0: f64,
    #[serde(rename = "alphaX")]
    pub alpha_x: f64,
    #[serde(rename = "alphaU")]
    pub alpha_u: f64,
    #[serde(rename = "muU")]
    pub mu_u: f64,
    #[serde(rename = "sigmaU")]
    pub sigma_u: f64,
    #[serde(rename = "sigmaA")]
    pub sigma_a: f64,
    /// `[b0, bX, bA, bAX]`
    pub beta: [f64; 4],
    #[serde(rename = "betaU")]
    pub beta_u: f64,
    #[serde(rename = "betaAU")]
    pub beta_au: f64,
}

impl OracleParams {
    pub fn is_confounded(&self) -> bool {
        self.alpha_u != 0.0 && (self.beta_u != 0.0 || self.beta_au != 0.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_u > 0.0 && self.sigma_a > 0.0) {
            return Err(MintError::InvalidInput("sigmaU and sigmaA must be positive".into()));
        }
        Ok(())
    }
}

/// Population coefficients of the working models `[1, X]` and
/// `[1, X, A, AX, A^2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCoefficients {
    pub omega: DVector<f64>,
    pub gamma: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialCase {
    AlphaUZero,
    BetaUBetaAUZero,
}

/// Observable coefficients when `U` confounds both mechanisms.
pub fn lemma1_closed_form(p: &OracleParams) -> Result<OracleCoefficients> {
    p.validate()?;
    if p.alpha_u == 0.0 {
        return Err(MintError::InvalidInput(
            "alphaU = 0: use special_case_closed_form(AlphaUZero)".into(),
        ));
    }
    let su2 = p.sigma_u * p.sigma_u;
    let ratio2 = (p.sigma_a / p.alpha_u).powi(2);
    let delta = 1.0 / (su2 + ratio2);
    // E[U | X, A] = c0 + cX X + cA A
    let c0 = p.alpha0 * su2 / p.alpha_u - p.mu_u * ratio2;
    let cx = p.alpha_x * su2 / p.alpha_u;
    let ca = su2 / p.alpha_u;
    let big_gamma = [
        -p.beta_u * c0,
        -p.beta_u * cx,
        p.beta_u * ca - p.beta_au * c0,
        -p.beta_au * cx,
        p.beta_au * ca,
    ];
    let omega = DVector::from_vec(vec![p.alpha0 + p.alpha_u * p.mu_u, p.alpha_x]);
    let gamma = DVector::from_fn(5, |i, _| p.beta.get(i).copied().unwrap_or(0.0) + delta * big_gamma[i]);
    Ok(OracleCoefficients { omega, gamma })
}

/// Observable coefficients in the two unconfounded branches.
pub fn special_case_closed_form(p: &OracleParams, case: SpecialCase) -> Result<OracleCoefficients> {
    let b = p.beta;
    match case {
        SpecialCase::AlphaUZero => {
            if p.alpha_u != 0.0 {
                return Err(MintError::InvalidInput(format!(
                    "alpha_u_zero case requires alphaU = 0, got {}",
                    p.alpha_u
                )));
            }
            Ok(OracleCoefficients {
                omega: DVector::from_vec(vec![p.alpha0, p.alpha_x]),
                gamma: DVector::from_vec(vec![
                    b[0] + p.beta_u * p.mu_u,
                    b[1],
                    b[2] + p.beta_au * p.mu_u,
                    b[3],
                    0.0,
                ]),
            })
        }
        SpecialCase::BetaUBetaAUZero => {
            if p.beta_u != 0.0 || p.beta_au != 0.0 {
                return Err(MintError::InvalidInput(format!(
                    "beta_u_beta_au_zero case requires betaU = betaAU = 0, got {} and {}",
                    p.beta_u, p.beta_au
                )));
            }
            Ok(OracleCoefficients {
                omega: DVector::from_vec(vec![p.alpha0 + p.alpha_u * p.mu_u, p.alpha_x]),
                gamma: DVector::from_vec(vec![b[0], b[1], b[2], b[3], 0.0]),
            })
        }
    }
}

/// Dispatches to the confounded formula or the matching special case.
pub fn oracle_coefficients(p: &OracleParams) -> Result<OracleCoefficients> {
    if p.alpha_u == 0.0 {
        special_case_closed_form(p, SpecialCase::AlphaUZero)
    } else if p.beta_u == 0.0 && p.beta_au == 0.0 {
        special_case_closed_form(p, SpecialCase::BetaUBetaAUZero)
    } else {
        lemma1_closed_form(p)
    }
}

/// The working-model feature specs that are well specified for the linear
/// example: `[1, X]` and `[1, X, A, AX, A^2]`.
pub fn linear_example_specs() -> (FeatureSpec, FeatureSpec) {
    (FeatureSpec::treatment(1), FeatureSpec::outcome_full_linear())
}

struct LinearEnv {
    params: OracleParams,
    mu_x: f64,
    sigma_x: f64,
    beta_a_noise: f64,
}

fn draw_linear_env<R: Rng + ?Sized>(cfg: &LinearExampleConfig, rng: &mut R) -> LinearEnv {
    let mut values = [
        cfg.alpha0,
        cfg.alpha_x,
        cfg.alpha_u(),
        cfg.beta0,
        cfg.beta_x,
        cfg.beta_a,
        cfg.beta_ax,
        cfg.beta_u(),
        cfg.beta_au(),
        cfg.mu_x,
        cfg.mu_u,
        cfg.sigma_x,
        cfg.sigma_u,
    ];
    let [lo, hi] = cfg.varying_range;
    let uni = Uniform::new(lo, hi).expect("validated range");
    for (slot, name) in values.iter_mut().zip(LINEAR_PARAMETERS) {
        if cfg.varying.contains(name) {
            *slot = uni.sample(rng);
        }
    }
    let [a0, ax, au, b0, bx, ba, bax, bu, bau, mu_x, mu_u, sigma_x, sigma_u] = values;
    LinearEnv {
        params: OracleParams {
            alpha0: a0,
            alpha_x: ax,
            alpha_u: au,
            mu_u,
            sigma_u,
            sigma_a: cfg.noise_var_a.sqrt(),
            beta: [b0, bx, ba, bax],
            beta_u: bu,
            beta_au: bau,
        },
        mu_x,
        sigma_x,
        beta_a_noise: cfg.noise_var_y.sqrt(),
    }
}

/// Draws a dataset from the linear example.
pub fn generate_linear_example<R: Rng + ?Sized>(cfg: &LinearExampleConfig, rng: &mut R) -> Result<Generated> {
    cfg.validate()?;
    let mut blocks = Vec::with_capacity(cfg.k);
    let mut env_params = Vec::with_capacity(cfg.k);
    for s in 0..cfg.k {
        let env = draw_linear_env(cfg, rng);
        let p = env.params;
        let n = cfg.n;
        let mut x = DMatrix::zeros(n, 1);
        let mut a = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let xi = env.mu_x + env.sigma_x * rng.sample::<f64, _>(StandardNormal);
            let ui = p.mu_u + p.sigma_u * rng.sample::<f64, _>(StandardNormal);
            let ea = p.sigma_a * rng.sample::<f64, _>(StandardNormal);
            let ey = env.beta_a_noise * rng.sample::<f64, _>(StandardNormal);
            let ai = p.alpha0 + p.alpha_x * xi + p.alpha_u * ui + ea;
            let [b0, bx, ba, bax] = p.beta;
            x[(i, 0)] = xi;
            a[i] = ai;
            y[i] = b0 + bx * xi + ba * ai + bax * ai * xi + (p.beta_u + ai * p.beta_au) * ui + ey;
        }
        blocks.push(EnvironmentBlock::new(format!("env{s}"), x, a, y)?);
        env_params.push(p);
    }
    let confounded = env_params.iter().any(OracleParams::is_confounded);
    Ok(Generated {
        dataset: MultiEnvDataset::new(blocks)?,
        truth: GroundTruth {
            confounded,
            varied: cfg.varying.iter().cloned().collect(),
            unmeasured_confounders: usize::from(confounded),
            env_params,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialConfig {
    pub k: usize,
    pub n: usize,
    #[serde(default = "one_usize")]
    pub d: usize,
    #[serde(default = "one_usize")]
    pub degree: usize,
    #[serde(default)]
    pub confounded: bool,
    /// Draw a fresh outcome intercept per environment, which breaks
    /// transportability without creating confounding.
    #[serde(default = "default_true")]
    pub resample_outcome_intercept: bool,
}

fn one_usize() -> usize {
    1
}

pub const POLY_NOISE_SD: f64 = 0.5;
pub const POLY_COV_DIAG: f64 = 2.0;
pub const POLY_COV_OFFDIAG: f64 = 0.1;
pub const POLY_ENV_MEAN_VAR: f64 = 0.25;
pub const POLY_CONFOUNDER_VAR: f64 = 2.0;

impl PolynomialConfig {
    pub fn new(k: usize, n: usize, d: usize, degree: usize, confounded: bool) -> Self {
        Self { k, n, d, degree, confounded, resample_outcome_intercept: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(MintError::TooFewEnvironments(self.k));
        }
        if self.n == 0 || self.d == 0 || self.degree == 0 {
            return Err(MintError::InvalidConfig("N, d and degree must be positive".into()));
        }
        Ok(())
    }

    /// Feature specs that are well specified for this generator.
    pub fn specs(&self) -> (FeatureSpec, FeatureSpec) {
        (FeatureSpec::treatment(self.degree), FeatureSpec::outcome(self.degree))
    }
}

/// Fixed (non-intercept) coefficients of the polynomial mechanisms over the
/// basis `[X_1..X_d, X_1^p..X_d^p]` (the second half is absent when `p = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMechanism {
    pub degree: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl PolyMechanism {
    pub fn draw<R: Rng + ?Sized>(d: usize, degree: usize, rng: &mut R) -> Self {
        let m = if degree == 1 { d } else { 2 * d };
        let alpha = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Self { degree, alpha, beta: vec![1.0; m] }
    }

    fn basis_value(&self, x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        let d = x.ncols();
        if j < d {
            x[(i, j)]
        } else {
            x[(i, j - d)].powi(self.degree as i32)
        }
    }

    /// Emits `(A, Y)` for one environment. `u` is added to both.
    pub fn emit<R: Rng + ?Sized>(
        &self,
        x: &DMatrix<f64>,
        alpha0: f64,
        beta0: f64,
        u: Option<&DVector<f64>>,
        rng: &mut R,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = x.nrows();
        let noise = Normal::new(0.0, POLY_NOISE_SD).expect("valid sd");
        let mut a = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut ta = alpha0;
            let mut ty = beta0;
            for j in 0..self.alpha.len() {
                let b = self.basis_value(x, i, j);
                ta += self.alpha[j] * b;
                ty += self.beta[j] * b;
            }
            let ui = u.map_or(0.0, |u| u[i]);
            let ai = ta + ui + noise.sample(rng);
            a[i] = ai;
            y[i] = ty + ai + ui + noise.sample(rng);
        }
        (a, y)
    }
}

/// Draws a dataset from the polynomial generator.
pub fn generate_polynomial<R: Rng + ?Sized>(cfg: &PolynomialConfig, rng: &mut R) -> Result<Generated> {
    cfg.validate()?;
    let d = cfg.d;
    let mech = PolyMechanism::draw(d, cfg.degree, rng);
    let scale = 1.0 / (d as f64).sqrt();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        scale * if i == j { POLY_COV_DIAG } else { POLY_COV_OFFDIAG }
    });
    let chol = cov
        .cholesky()
        .ok_or_else(|| MintError::Numerical("covariate covariance not positive definite".into()))?
        .unpack();
    let env_sd = POLY_ENV_MEAN_VAR.sqrt();
    let u_sd = POLY_CONFOUNDER_VAR.sqrt();
    let beta0_fixed: f64 = rng.sample(StandardNormal);
    let mut blocks = Vec::with_capacity(cfg.k);
    for s in 0..cfg.k {
        let mu = DVector::from_fn(d, |_, _| env_sd * rng.sample::<f64, _>(StandardNormal));
        let alpha0: f64 = rng.sample(StandardNormal);
        let beta0 = if cfg.resample_outcome_intercept {
            rng.sample(StandardNormal)
        } else {
            beta0_fixed
        };
        let z = DMatrix::from_fn(cfg.n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = z * chol.transpose();
        for mut row in x.row_iter_mut() {
            row += mu.transpose();
        }
        let u = cfg.confounded.then(|| {
            let mu_u: f64 = rng.sample(StandardNormal);
            DVector::from_fn(cfg.n, |_, _| mu_u + u_sd * rng.sample::<f64, _>(StandardNormal))
        });
        let (a, y) = mech.emit(&x, alpha0, beta0, u.as_ref(), rng);
        blocks.push(EnvironmentBlock::new(format!("env{s}"), x, a, y)?);
    }
    let mut varied = vec!["alpha0".to_string()];
    if cfg.resample_outcome_intercept {
        varied.push("beta0".to_string());
    }
    if cfg.confounded {
        varied.push("muU".to_string());
    }
    Ok(Generated {
        dataset: MultiEnvDataset::new(blocks)?,
        truth: GroundTruth {
            confounded: cfg.confounded,
            varied,
            unmeasured_confounders: usize::from(cfg.confounded),
            env_params: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::fit_mechanisms;
    use crate::rng;

    fn params() -> OracleParams {
        OracleParams {
            alpha0: 0.0,
            alpha_x: 1.0,
            alpha_u: 1.0,
            mu_u: 0.0,
            sigma_u: 1.0,
            sigma_a: 1.0,
            beta: [0.0; 4],
            beta_u: 1.0,
            beta_au: 0.0,
        }
    }

    #[test]
    fn lemma1_example() {
        let o = lemma1_closed_form(&params()).unwrap();
        assert_eq!(o.omega.as_slice(), &[0.0, 1.0]);
        assert_eq!(o.gamma.as_slice(), &[0.0, -0.5, 0.5, 0.0, 0.0]);
        let mut p = params();
        p.alpha_u = 0.0;
        assert!(lemma1_closed_form(&p).is_err());
    }

    #[test]
    fn lemma1_without_outcome_confounding_is_beta() {
        let p = OracleParams { beta: [1.0, 2.0, 3.0, 4.0], beta_u: 0.0, beta_au: 0.0, alpha0: 0.7, mu_u: 2.0, ..params() };
        let o = lemma1_closed_form(&p).unwrap();
        assert_eq!(o.gamma.as_slice(), &[1.0, 2.0, 3.0, 4.0, 0.0]);
        assert_eq!(o.omega.as_slice(), &[2.7, 1.0]);
    }

    #[test]
    fn lemma1_limit_large_alpha_u() {
        let mut p = OracleParams { beta_au: 0.7, sigma_u: 1.3, ..params() };
        let mut prev = f64::INFINITY;
        for au in [1.0, 10.0, 100.0, 1e3, 1e4] {
            p.alpha_u = au;
            let delta = 1.0 / (p.sigma_u.powi(2) + (p.sigma_a / au).powi(2));
            let last = lemma1_closed_form(&p).unwrap().gamma[4];
            assert!((last - delta * p.beta_au * p.sigma_u.powi(2) / au).abs() < 1e-15);
            assert!(last.abs() < prev);
            prev = last.abs();
        }
        assert!((1.0 / (p.sigma_u.powi(2) + (p.sigma_a / p.alpha_u).powi(2)) - 1.0 / p.sigma_u.powi(2)).abs() < 1e-7);
        assert!(prev < 1e-4);
    }

    #[test]
    fn special_cases() {
        let p = OracleParams { alpha_u: 0.0, beta: [1.0; 4], beta_u: 2.0, mu_u: 3.0, beta_au: 0.0, ..params() };
        let o = special_case_closed_form(&p, SpecialCase::AlphaUZero).unwrap();
        assert_eq!(o.gamma.as_slice(), &[7.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(special_case_closed_form(&p, SpecialCase::BetaUBetaAUZero).is_err());

        let z = OracleParams { alpha_u: 0.0, beta_u: 0.0, beta_au: 0.0, alpha0: 0.4, beta: [1.0, 2.0, 3.0, 4.0], ..params() };
        let a = special_case_closed_form(&z, SpecialCase::AlphaUZero).unwrap();
        let b = special_case_closed_form(&z, SpecialCase::BetaUBetaAUZero).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.omega.as_slice(), &[0.4, 1.0]);
        assert_eq!(a.gamma.as_slice(), &[1.0, 2.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn linear_shapes_and_config() {
        let cfg = LinearExampleConfig::new(3, 10, true);
        let g = generate_linear_example(&cfg, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(g.dataset.k(), 3);
        for b in g.dataset.blocks() {
            assert_eq!(b.x().shape(), (10, 1));
        }
        assert!(g.truth.confounded);
        assert!(LinearExampleConfig::new(1, 10, true).validate().is_err());
        assert!(LinearExampleConfig::new(2, 10, true).vary("gamma").validate().is_err());
        let bad: std::result::Result<LinearExampleConfig, _> =
            serde_json::from_str(r#"{"k": 2, "n": 3, "typo": 1}"#);
        assert!(bad.is_err());
        let ok: LinearExampleConfig = serde_json::from_str(r#"{"k": 2, "n": 3, "varying": ["alpha0"]}"#).unwrap();
        assert_eq!(ok.alpha_u(), 0.25);
        assert_eq!(ok, LinearExampleConfig::new(2, 3, true).vary("alpha0"));
    }

    #[test]
    fn linear_treatment_mean() {
        let cfg = LinearExampleConfig::new(2, 500_000, true);
        let g = generate_linear_example(&cfg, &mut rng::stream(2, &[])).unwrap();
        let (sum, n) = g.dataset.blocks().iter().fold((0.0, 0), |(s, n), b| (s + b.a().sum(), n + b.n()));
        let mean = sum / n as f64;
        assert!((mean - (0.5 + 1.0 / 3.0 + 0.25)).abs() < 0.003, "{mean}");
    }

    #[test]
    fn linear_unconfounded_residuals_uncorrelated() {
        let cfg = LinearExampleConfig::new(2, 200_000, false);
        assert_eq!(cfg.alpha_u(), 0.0);
        let g = generate_linear_example(&cfg, &mut rng::stream(3, &[])).unwrap();
        assert!(!g.truth.confounded);
        let b = &g.dataset.blocks()[0];
        let n = b.n() as f64;
        let mut cov = 0.0;
        for i in 0..b.n() {
            let x = b.x()[(i, 0)];
            let a = b.a()[i];
            let ra = a - 0.5 - x / 3.0;
            let ry = b.y()[i] - (0.5 + x / 3.0 + 0.5 * a + a * x / 3.0);
            cov += ra * ry;
        }
        assert!((cov / n).abs() < 0.003);
    }

    #[test]
    fn linear_varying_recorded_and_in_range() {
        let cfg = LinearExampleConfig::new(20, 2, true).vary("muU").vary("alpha0");
        let g = generate_linear_example(&cfg, &mut rng::stream(4, &[])).unwrap();
        assert_eq!(g.truth.varied, vec!["alpha0".to_string(), "muU".to_string()]);
        for p in &g.truth.env_params {
            assert!((0.1..3.0).contains(&p.alpha0) && (0.1..3.0).contains(&p.mu_u));
            assert_eq!(p.alpha_x, 1.0 / 3.0);
        }
        let distinct: BTreeSet<u64> = g.truth.env_params.iter().map(|p| p.alpha0.to_bits()).collect();
        assert_eq!(distinct.len(), 20);
    }

    #[test]
    fn linear_deterministic() {
        let cfg = LinearExampleConfig::new(3, 5, true).vary("betaA");
        let a = generate_linear_example(&cfg, &mut rng::stream(9, &[1])).unwrap();
        let b = generate_linear_example(&cfg, &mut rng::stream(9, &[1])).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn lemma1_matches_large_sample_fit() {
        let cfg = LinearExampleConfig::new(2, 500_000, true).vary("alphaX").vary("betaX");
        let g = generate_linear_example(&cfg, &mut rng::stream(5, &[])).unwrap();
        let (psi, phi) = linear_example_specs();
        let est = fit_mechanisms(&g.dataset, &psi, &phi, 0.0).unwrap();
        for (s, p) in g.truth.env_params.iter().enumerate() {
            let o = lemma1_closed_form(p).unwrap();
            let w = est.omegas.row(s).transpose();
            let gm = est.gammas.row(s).transpose();
            assert!((&w - &o.omega).norm() / o.omega.norm() < 0.02);
            assert!((&gm - &o.gamma).norm() / o.gamma.norm() < 0.02);
        }
    }

    #[test]
    fn beta_branch_matches_large_sample_fit() {
        let mut cfg = LinearExampleConfig::new(2, 300_000, true);
        cfg.beta_u = Some(0.0);
        cfg.beta_au = Some(0.0);
        let g = generate_linear_example(&cfg, &mut rng::stream(6, &[])).unwrap();
        assert!(!g.truth.confounded);
        let (psi, phi) = linear_example_specs();
        let est = fit_mechanisms(&g.dataset, &psi, &phi, 0.0).unwrap();
        let o = special_case_closed_form(&g.truth.env_params[0], SpecialCase::BetaUBetaAUZero).unwrap();
        let gm = est.gammas.row(0).transpose();
        assert!((&gm - &o.gamma).norm() / o.gamma.norm() < 0.02);
        let w = est.omegas.row(0).transpose();
        assert!((&w - &o.omega).norm() / o.omega.norm() < 0.02);
    }

    #[test]
    fn oracle_omega_constant_when_only_outcome_side_varies() {
        let cfg = LinearExampleConfig::new(200, 1, true).vary("betaA").vary("betaU");
        let g = generate_linear_example(&cfg, &mut rng::stream(7, &[])).unwrap();
        let first = lemma1_closed_form(&g.truth.env_params[0]).unwrap().omega;
        for p in &g.truth.env_params {
            assert_eq!(lemma1_closed_form(p).unwrap().omega, first);
        }
    }

    #[test]
    fn oracle_dependence_when_treatment_side_varies() {
        for name in ["alpha0", "alphaX", "alphaU", "muU"] {
            let cfg = LinearExampleConfig::new(1000, 1, true).vary(name);
            let g = generate_linear_example(&cfg, &mut rng::stream(8, &[])).unwrap();
            let coefs: Vec<_> = g.truth.env_params.iter().map(|p| lemma1_closed_form(p).unwrap()).collect();
            let k = coefs.len() as f64;
            let wbar = coefs.iter().fold(DVector::zeros(2), |acc, c| acc + &c.omega) / k;
            let gbar = coefs.iter().fold(DVector::zeros(5), |acc, c| acc + &c.gamma) / k;
            let cov = coefs
                .iter()
                .fold(DMatrix::zeros(2, 5), |acc, c| acc + (&c.omega - &wbar) * (&c.gamma - &gbar).transpose())
                / k;
            assert!(cov.norm() > 1e-3, "{name}: {}", cov.norm());
        }
    }

    #[test]
    fn polynomial_feature_dimension() {
        let cfg = PolynomialConfig::new(3, 20, 2, 2, false);
        let (psi, phi) = cfg.specs();
        assert_eq!(psi.dim(2), 5);
        assert_eq!(phi.dim(2), 6);
        let g = generate_polynomial(&cfg, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(g.dataset.d(), 2);
        assert!(!g.truth.confounded);
    }

    #[test]
    fn polynomial_residual_sd() {
        let cfg = PolynomialConfig::new(4, 50_000, 2, 2, false);
        let g = generate_polynomial(&cfg, &mut rng::stream(2, &[])).unwrap();
        let (psi, phi) = cfg.specs();
        let est = fit_mechanisms(&g.dataset, &psi, &phi, 0.0).unwrap();
        for diag in &est.diagnostics {
            assert!((diag.outcome.residual_variance.sqrt() - POLY_NOISE_SD).abs() < 0.01);
            assert!((diag.treatment.residual_variance.sqrt() - POLY_NOISE_SD).abs() < 0.01);
        }
    }

    #[test]
    fn polynomial_fixed_outcome_intercept() {
        let mut cfg = PolynomialConfig::new(5, 20_000, 1, 1, false);
        cfg.resample_outcome_intercept = false;
        let g = generate_polynomial(&cfg, &mut rng::stream(3, &[])).unwrap();
        let (psi, phi) = cfg.specs();
        let est = fit_mechanisms(&g.dataset, &psi, &phi, 0.0).unwrap();
        let g0 = est.gammas.column(0);
        assert!(g0.max() - g0.min() < 0.05);
        let w0 = est.omegas.column(0);
        assert!(w0.max() - w0.min() > 0.05);
    }

    #[test]
    fn polynomial_deterministic() {
        let cfg = PolynomialConfig::new(3, 7, 3, 3, true);
        let a = generate_polynomial(&cfg, &mut rng::stream(5, &[])).unwrap();
        let b = generate_polynomial(&cfg, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert!(a.truth.confounded);
    }
}
