//! Experiment configuration and falsification-rate sweeps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{load_covariates, CovariateData};
use super::semisynth::{semi_synthetic_generate, SemiSyntheticOptions};
use crate::baselines::{transportability_test, TransportVariant};
use crate::dataset::MultiEnvDataset;
use crate::dgp::{self, Generated, LinearExampleConfig, PolynomialConfig};
use crate::error::{MintError, Result};
use crate::features::FeatureSpec;
use crate::format::fmt17;
use crate::kernel_mint::{kernel_mint_test, KernelSpec};
use crate::mint::{mint_test, MintConfig, TestMethod, TestResult, DEFAULT_RESAMPLES, DEFAULT_RIDGE_JITTER};
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;

fn default_env_column() -> String {
    "env".into()
}
fn five() -> usize {
    5
}
fn two() -> usize {
    2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSyntheticConfig {
    /// Covariate CSV; relative paths are resolved against the config file.
    pub covariates_path: PathBuf,
    #[serde(default = "default_env_column")]
    pub env_column: String,
    #[serde(default)]
    pub covariate_columns: Vec<String>,
    #[serde(default = "five")]
    pub n_confounders: usize,
    #[serde(default = "two")]
    pub degree: usize,
    /// Defaults to `n_confounders`.
    #[serde(default)]
    pub observed: Option<usize>,
    #[serde(default = "default_true")]
    pub confounded: bool,
}

impl SemiSyntheticConfig {
    pub fn options(&self) -> SemiSyntheticOptions {
        SemiSyntheticOptions {
            n_confounders: self.n_confounders,
            degree: self.degree,
            observed: self.observed.unwrap_or(self.n_confounders),
            confounded: self.confounded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    LinearExample(LinearExampleConfig),
    Polynomial(PolynomialConfig),
    SemiSynthetic(SemiSyntheticConfig),
}

/// A generator with any external data already loaded.
#[derive(Debug, Clone)]
pub enum Generator {
    LinearExample(LinearExampleConfig),
    Polynomial(PolynomialConfig),
    SemiSynthetic(SemiSyntheticConfig, Arc<CovariateData>),
}

impl GeneratorConfig {
    pub fn load(&self, base_dir: &Path) -> Result<Generator> {
        Ok(match self {
            GeneratorConfig::LinearExample(c) => Generator::LinearExample(c.clone()),
            GeneratorConfig::Polynomial(c) => Generator::Polynomial(c.clone()),
            GeneratorConfig::SemiSynthetic(c) => {
                let path = base_dir.join(&c.covariates_path);
                let data = load_covariates(&path, &c.env_column, &c.covariate_columns)?;
                Generator::SemiSynthetic(c.clone(), Arc::new(data))
            }
        })
    }
}

impl Generator {
    pub fn generate(&self, seed: u64) -> Result<Generated> {
        let mut r = rng::stream(seed, &[]);
        match self {
            Generator::LinearExample(c) => dgp::generate_linear_example(c, &mut r),
            Generator::Polynomial(c) => dgp::generate_polynomial(c, &mut r),
            Generator::SemiSynthetic(c, data) => semi_synthetic_generate(data, &c.options(), &mut r),
        }
    }

    /// Feature specs for a working-model degree (`None` = the generator's
    /// own, well-specified degree).
    pub fn specs(&self, degree: Option<usize>) -> (FeatureSpec, FeatureSpec) {
        match self {
            Generator::LinearExample(_) => {
                let (psi, phi) = dgp::linear_example_specs();
                match degree {
                    Some(p) => (psi.with_degree(p), phi.with_degree(p)),
                    None => (psi, phi),
                }
            }
            Generator::Polynomial(c) => {
                let p = degree.unwrap_or(c.degree);
                (FeatureSpec::treatment(p), FeatureSpec::outcome(p))
            }
            Generator::SemiSynthetic(c, _) => {
                let p = degree.unwrap_or(c.degree);
                (FeatureSpec::treatment(p), FeatureSpec::outcome(p))
            }
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}
fn default_jitter() -> f64 {
    DEFAULT_RIDGE_JITTER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: TestMethod,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    /// Polynomial degree of the working models; defaults to the generator's.
    #[serde(default)]
    pub degree: Option<usize>,
    /// Explicit feature specs override `degree`.
    #[serde(default)]
    pub psi: Option<FeatureSpec>,
    #[serde(default)]
    pub phi: Option<FeatureSpec>,
    #[serde(default = "default_jitter")]
    pub ridge_jitter: f64,
    #[serde(default)]
    pub variant: TransportVariant,
    #[serde(default)]
    pub kernel_treatment: Option<KernelSpec>,
    #[serde(default)]
    pub kernel_outcome: Option<KernelSpec>,
}

impl MethodConfig {
    pub fn new(name: TestMethod) -> Self {
        Self {
            name,
            alpha: 0.05,
            resamples: DEFAULT_RESAMPLES,
            degree: None,
            psi: None,
            phi: None,
            ridge_jitter: DEFAULT_RIDGE_JITTER,
            variant: TransportVariant::default(),
            kernel_treatment: None,
            kernel_outcome: None,
        }
    }
}

/// Default kernel when none is configured.
pub const DEFAULT_KERNEL_LAMBDA: f64 = 1e-3;

/// Runs one test method on a dataset.
pub fn run_method(
    dataset: &MultiEnvDataset,
    method: &MethodConfig,
    psi: &FeatureSpec,
    phi: &FeatureSpec,
    seed: u64,
    keep_null: bool,
) -> Result<TestResult> {
    match method.name {
        TestMethod::Mint | TestMethod::MintNoBootstrap => {
            let cfg = MintConfig {
                alpha: method.alpha,
                resamples: method.resamples,
                seed,
                use_bootstrap: method.name == TestMethod::Mint,
                ridge_jitter: method.ridge_jitter,
                keep_null_samples: keep_null,
            };
            mint_test(dataset, psi, phi, &cfg)
        }
        TestMethod::Transportability => transportability_test(dataset, phi, method.variant, method.alpha),
        TestMethod::KernelMint => {
            let k = method.kernel_treatment.unwrap_or(KernelSpec::linear(DEFAULT_KERNEL_LAMBDA));
            let h = method.kernel_outcome.unwrap_or(k);
            let mut r = kernel_mint_test(dataset, &k, &h, method.alpha, method.resamples, seed)?;
            if !keep_null {
                r.null_samples = None;
            }
            Ok(r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    K,
    N,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "degree")]
    Degree,
    #[serde(rename = "varied")]
    Varied,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "K",
            SweepAxis::N => "N",
            SweepAxis::D => "d",
            SweepAxis::Degree => "degree",
            SweepAxis::Varied => "varied",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(usize),
    Name(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Int(v) => write!(f, "{v}"),
            SweepValue::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub generator: GeneratorConfig,
    pub method: MethodConfig,
    pub sweep: SweepConfig,
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MintError::from(e).context(path.display().to_string()))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(MintError::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.repetitions == 0 {
            return Err(MintError::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(MintError::InvalidConfig("sweep has no values".into()));
        }
        if self.method.resamples == 0 {
            return Err(MintError::InvalidConfig("resamples must be positive".into()));
        }
        crate::mint::check_alpha(self.method.alpha)?;
        for v in &self.sweep.values {
            self.apply(v)?;
        }
        Ok(())
    }

    /// The generator and method configs of one sweep cell.
    pub fn apply(&self, value: &SweepValue) -> Result<(GeneratorConfig, MethodConfig)> {
        let mut gen = self.generator.clone();
        let mut method = self.method.clone();
        let axis = self.sweep.axis;
        let bad = |why: &str| MintError::InvalidConfig(format!("sweep axis '{}': {why}", axis.name()));
        match (axis, value) {
            (SweepAxis::Varied, SweepValue::Name(name)) => match &mut gen {
                GeneratorConfig::LinearExample(c) => {
                    c.varying = std::iter::once(name.clone()).collect();
                }
                _ => return Err(bad("only the linear_example generator has named parameters")),
            },
            (SweepAxis::Varied, _) => return Err(bad("values must be parameter names")),
            (_, SweepValue::Name(_)) => return Err(bad("values must be integers")),
            (SweepAxis::Degree, SweepValue::Int(p)) => method.degree = Some(*p),
            (SweepAxis::K, SweepValue::Int(v)) => match &mut gen {
                GeneratorConfig::LinearExample(c) => c.k = *v,
                GeneratorConfig::Polynomial(c) => c.k = *v,
                GeneratorConfig::SemiSynthetic(_) => return Err(bad("environments come from the covariate file")),
            },
            (SweepAxis::N, SweepValue::Int(v)) => match &mut gen {
                GeneratorConfig::LinearExample(c) => c.n = *v,
                GeneratorConfig::Polynomial(c) => c.n = *v,
                GeneratorConfig::SemiSynthetic(_) => return Err(bad("sample sizes come from the covariate file")),
            },
            (SweepAxis::D, SweepValue::Int(v)) => match &mut gen {
                GeneratorConfig::Polynomial(c) => c.d = *v,
                GeneratorConfig::SemiSynthetic(c) => c.observed = Some(*v),
                GeneratorConfig::LinearExample(_) => return Err(bad("the linear example has a single covariate")),
            },
        }
        match &gen {
            GeneratorConfig::LinearExample(c) => c.validate()?,
            GeneratorConfig::Polynomial(c) => c.validate()?,
            GeneratorConfig::SemiSynthetic(c) => {
                let o = c.options();
                if o.observed == 0 || o.observed > o.n_confounders || o.degree == 0 {
                    return Err(MintError::InvalidConfig(
                        "semi_synthetic needs 1 <= observed <= n_confounders and degree >= 1".into(),
                    ));
                }
            }
        }
        if method.degree == Some(0) {
            return Err(bad("degree must be positive"));
        }
        Ok((gen, method))
    }

    /// Seed of repetition `rep` in sweep cell `axis_index`.
    pub fn repetition_seed(&self, axis_index: usize, rep: usize) -> u64 {
        rng::derive_seed(self.seed, &[axis_index as u64, rep as u64])
    }
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub axis: SweepAxis,
    pub value: SweepValue,
    pub rate: f64,
    pub standard_error: f64,
    pub repetitions: usize,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkOptions {
    /// Worker threads; `None` uses all available cores.
    pub threads: Option<usize>,
    /// Record wall time per row. Off by default so output is reproducible.
    pub timing: bool,
}

fn run_cell(
    cfg: &ExperimentConfig,
    axis_index: usize,
    value: &SweepValue,
    base_dir: &Path,
    timing: bool,
) -> Result<BenchmarkRow> {
    let start = Instant::now();
    let (gen_cfg, method) = cfg.apply(value)?;
    let generator = gen_cfg.load(base_dir)?;
    let (psi, phi) = match (&method.psi, &method.phi) {
        (Some(p), Some(f)) => (p.clone(), f.clone()),
        (p, f) => {
            let (dp, df) = generator.specs(method.degree);
            (p.clone().unwrap_or(dp), f.clone().unwrap_or(df))
        }
    };
    let rejections: Vec<bool> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.repetition_seed(axis_index, r);
            let ctx = |e: MintError| {
                e.context(format!("{}={value}, repetition {r}, seed {seed}", cfg.sweep.axis.name()))
            };
            let data = generator.generate(rng::derive_seed(seed, &[0])).map_err(ctx)?;
            let res = run_method(&data.dataset, &method, &psi, &phi, rng::derive_seed(seed, &[1]), false)
                .map_err(ctx)?;
            Ok(res.reject)
        })
        .collect::<Result<_>>()?;
    let reps = rejections.len();
    let rate = rejections.iter().filter(|&&r| r).count() as f64 / reps as f64;
    Ok(BenchmarkRow {
        axis: cfg.sweep.axis,
        value: value.clone(),
        rate,
        standard_error: (rate * (1.0 - rate) / reps as f64).sqrt(),
        repetitions: reps,
        seconds: timing.then(|| start.elapsed().as_secs_f64()),
    })
}

/// Runs every sweep cell. Rows come back in sweep order.
pub fn run_benchmark(cfg: &ExperimentConfig, base_dir: &Path, opts: BenchmarkOptions) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        if t == 0 {
            return Err(MintError::InvalidConfig("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| MintError::InvalidConfig(format!("cannot start thread pool: {e}")))?;
    pool.install(|| {
        cfg.sweep
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| run_cell(cfg, i, v, base_dir, opts.timing))
            .collect()
    })
}

/// Writes `axis,value,rate,se,reps,seconds`.
pub fn write_benchmark_csv<W: Write>(rows: &[BenchmarkRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["axis", "value", "rate", "se", "reps", "seconds"])?;
    for r in rows {
        w.write_record([
            r.axis.name().to_string(),
            r.value.to_string(),
            fmt17(r.rate),
            fmt17(r.standard_error),
            r.repetitions.to_string(),
            r.seconds.map(fmt17).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    const CONFIG: &str = r#"{
        "schema_version": 1,
        "generator": {"kind": "polynomial", "k": 5, "n": 30},
        "method": {"name": "mint", "resamples": 20},
        "sweep": {"axis": "K", "values": [3, 5]},
        "repetitions": 4,
        "seed": 11
    }"#;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let cfg = ExperimentConfig::from_json(CONFIG).unwrap();
        assert_eq!(cfg.sweep.values, vec![SweepValue::Int(3), SweepValue::Int(5)]);
        let typo = CONFIG.replace("\"repetitions\"", "\"repetitons\"");
        assert!(ExperimentConfig::from_json(&typo).is_err());
        let inner = CONFIG.replace("\"n\": 30", "\"n\": 30, \"noise\": 1");
        assert!(ExperimentConfig::from_json(&inner).is_err());
        let version = CONFIG.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(ExperimentConfig::from_json(&version).is_err());
        let zero = CONFIG.replace("\"repetitions\": 4", "\"repetitions\": 0");
        assert!(ExperimentConfig::from_json(&zero).is_err());
        let axis = CONFIG.replace("\"axis\": \"K\"", "\"axis\": \"varied\"");
        assert!(ExperimentConfig::from_json(&axis).is_err());
    }

    #[test]
    fn varied_axis_on_linear_example() {
        let text = r#"{
            "schema_version": 1,
            "generator": {"kind": "linear_example", "k": 4, "n": 20},
            "method": {"name": "transportability"},
            "sweep": {"axis": "varied", "values": ["alpha0", "betaA"]},
            "repetitions": 2
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let (gen, _) = cfg.apply(&SweepValue::Name("betaA".into())).unwrap();
        match gen {
            GeneratorConfig::LinearExample(c) => assert!(c.varying.contains("betaA") && c.varying.len() == 1),
            _ => unreachable!(),
        }
        let bad = text.replace("\"betaA\"]", "\"nope\"]");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn seeds_do_not_collide() {
        let mut cfg = ExperimentConfig::from_json(CONFIG).unwrap();
        cfg.repetitions = 500;
        cfg.sweep.values = (2..40).map(SweepValue::Int).collect();
        let mut seen = HashSet::new();
        for i in 0..cfg.sweep.values.len() {
            for r in 0..cfg.repetitions {
                let s = cfg.repetition_seed(i, r);
                assert!(seen.insert(s));
                assert!(seen.insert(rng::derive_seed(s, &[0])));
                assert!(seen.insert(rng::derive_seed(s, &[1])));
            }
        }
    }

    #[test]
    fn benchmark_rows_and_determinism() {
        let cfg = ExperimentConfig::from_json(CONFIG).unwrap();
        let run = |threads| {
            let rows = run_benchmark(&cfg, Path::new("."), BenchmarkOptions { threads: Some(threads), timing: false }).unwrap();
            let mut out = Vec::new();
            write_benchmark_csv(&rows, &mut out).unwrap();
            (rows, String::from_utf8(out).unwrap())
        };
        let (rows, a) = run(1);
        let (_, b) = run(4);
        assert_eq!(a, b);
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.standard_error, (r.rate * (1.0 - r.rate) / r.repetitions as f64).sqrt());
            assert_eq!(r.seconds, None);
        }
        assert!(a.starts_with("axis,value,rate,se,reps,seconds\nK,3,"));
    }

    #[test]
    fn single_repetition_rate_is_binary() {
        let mut cfg = ExperimentConfig::from_json(CONFIG).unwrap();
        cfg.repetitions = 1;
        let rows = run_benchmark(&cfg, Path::new("."), BenchmarkOptions::default()).unwrap();
        for r in rows {
            assert!(r.rate == 0.0 || r.rate == 1.0);
            assert_eq!(r.standard_error, 0.0);
        }
    }

    #[test]
    fn failure_carries_context() {
        let text = CONFIG.replace("\"n\": 30", "\"n\": 2").replace("\"K\", \"values\": [3, 5]", "\"degree\", \"values\": [3]");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let err = run_benchmark(&cfg, Path::new("."), BenchmarkOptions::default()).unwrap_err().to_string();
        assert!(err.contains("degree=3, repetition"), "{err}");
        assert!(err.contains("seed"), "{err}");
    }
}
