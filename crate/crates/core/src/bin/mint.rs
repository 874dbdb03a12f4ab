use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mint_core::baselines::TransportVariant;
use mint_core::dgp::GroundTruth;
use mint_core::harness::{
    self, BenchmarkOptions, CsvSchema, ExperimentConfig, GeneratorConfig, MethodConfig, SemiSyntheticOptions,
};
use mint_core::kernel_mint::{Bandwidth, KernelKind, KernelSpec};
use mint_core::{rng, FeatureSpec, MintError, Result, TestMethod};

/// Falsification tests for unmeasured confounding on multi-environment data.
#[derive(Parser)]
#[command(name = "mint", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Significance level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Number of resamples for the threshold.
    #[arg(long, global = true)]
    resamples: Option<usize>,
    /// mint, mint_no_bootstrap, transportability or kernel_mint.
    #[arg(long, global = true)]
    method: Option<TestMethod>,
    /// Permutation-only calibration (same as --method mint_no_bootstrap).
    #[arg(long, global = true)]
    no_bootstrap: bool,
    /// Output file (stdout if omitted).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a generator config and write it as CSV.
    Simulate {
        /// JSON generator config (linear_example or polynomial).
        #[arg(long)]
        config: PathBuf,
        /// Also write the ground truth as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run a test on a dataset CSV and print the result as JSON.
    Test {
        /// Dataset CSV with columns env, a, y, x1..xd.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run a benchmark sweep and write the falsification-rate table.
    Benchmark {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Fill the seconds column (makes output machine dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Semi-synthetic pipeline on a covariate CSV: generate and test.
    Semisynth {
        /// Covariate CSV with an environment column.
        #[arg(long)]
        covariates: PathBuf,
        #[arg(long, default_value = "env")]
        env_column: String,
        #[arg(long, default_value_t = 5)]
        n_confounders: usize,
        /// Number of the selected confounders kept as covariates.
        #[arg(long)]
        observed: Option<usize>,
        /// Leave the hidden columns out of the generating equations.
        #[arg(long)]
        unconfounded: bool,
        /// Also write the generated dataset.
        #[arg(long)]
        dataset_out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Polynomial degree of both working models.
    #[arg(long, default_value_t = 1)]
    degree: usize,
    /// Add A*X terms to the outcome model.
    #[arg(long)]
    interactions: bool,
    /// Add an A^2 term to the outcome model.
    #[arg(long)]
    square: bool,
    /// Transportability variant: full_interaction or intercept_shift.
    #[arg(long, default_value = "full_interaction")]
    variant: String,
    /// Kernel for kernel_mint: linear or rbf.
    #[arg(long, default_value = "linear")]
    kernel: String,
    /// RBF bandwidth (median heuristic if omitted).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Kernel ridge penalty.
    #[arg(long, default_value_t = harness::DEFAULT_KERNEL_LAMBDA)]
    lambda: f64,
    /// Keep the null samples in the JSON result.
    #[arg(long)]
    keep_null: bool,
}

impl ModelArgs {
    fn specs(&self, degree: usize) -> (FeatureSpec, FeatureSpec) {
        (
            FeatureSpec::treatment(degree),
            FeatureSpec::outcome(degree).with_interactions(self.interactions).with_square(self.square),
        )
    }

    fn method(&self, g: &Global) -> Result<MethodConfig> {
        let mut m = MethodConfig::new(method_name(g));
        if let Some(a) = g.alpha {
            m.alpha = a;
        }
        if let Some(r) = g.resamples {
            m.resamples = r;
        }
        m.variant = match self.variant.as_str() {
            "full_interaction" => TransportVariant::FullInteraction,
            "intercept_shift" => TransportVariant::InterceptShift,
            other => return Err(MintError::InvalidConfig(format!("unknown variant '{other}'"))),
        };
        let kind = match self.kernel.as_str() {
            "linear" => KernelKind::Linear,
            "rbf" => KernelKind::Rbf,
            other => return Err(MintError::InvalidConfig(format!("unknown kernel '{other}'"))),
        };
        let bandwidth = self.bandwidth.map_or(Bandwidth::MedianHeuristic, Bandwidth::Value);
        m.kernel_treatment = Some(KernelSpec { kind, bandwidth, ridge_lambda: self.lambda });
        Ok(m)
    }
}

fn method_name(g: &Global) -> TestMethod {
    match (g.method, g.no_bootstrap) {
        (Some(TestMethod::Mint) | None, true) => TestMethod::MintNoBootstrap,
        (Some(m), _) => m,
        (None, false) => TestMethod::Mint,
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| MintError::from(e).context(p.display().to_string()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: &Option<PathBuf>) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Serialize)]
struct SemisynthReport<'a> {
    truth: &'a GroundTruth,
    result: &'a mint_core::TestResult,
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let seed = g.seed.unwrap_or(0);
    match &cli.command {
        Command::Simulate { config, truth } => {
            let text = std::fs::read_to_string(config).map_err(|e| MintError::from(e).context(config.display().to_string()))?;
            let gen: GeneratorConfig = serde_json::from_str(&text)?;
            let generated = gen.load(&parent_dir(config))?.generate(seed)?;
            let mut w = output(&g.output)?;
            harness::write_csv_dataset(&generated.dataset, &mut w)?;
            w.flush()?;
            if let Some(p) = truth {
                write_json(&generated.truth, &Some(p.clone()))?;
            }
        }
        Command::Test { data, model } => {
            let dataset = harness::load_csv_dataset(data, &CsvSchema::default())?;
            let (psi, phi) = model.specs(model.degree);
            let method = model.method(g)?;
            let result = harness::run_method(&dataset, &method, &psi, &phi, seed, model.keep_null)?;
            write_json(&result, &g.output)?;
        }
        Command::Benchmark { config, timing } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(a) = g.alpha {
                cfg.method.alpha = a;
            }
            if let Some(r) = g.resamples {
                cfg.method.resamples = r;
            }
            if g.method.is_some() || g.no_bootstrap {
                cfg.method.name = method_name(g);
            }
            let opts = BenchmarkOptions { threads: g.threads, timing: *timing };
            let rows = harness::run_benchmark(&cfg, &parent_dir(config), opts)?;
            let mut w = output(&g.output)?;
            harness::write_benchmark_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Semisynth { covariates, env_column, n_confounders, observed, unconfounded, dataset_out, model } => {
            let data = harness::load_covariates(covariates, env_column, &[])?;
            let opts = SemiSyntheticOptions {
                n_confounders: *n_confounders,
                degree: model.degree,
                observed: observed.unwrap_or(*n_confounders),
                confounded: !unconfounded,
            };
            let mut r = rng::stream(rng::derive_seed(seed, &[0]), &[]);
            let generated = harness::semi_synthetic_generate(&data, &opts, &mut r)?;
            if let Some(p) = dataset_out {
                let mut w = output(&Some(p.clone()))?;
                harness::write_csv_dataset(&generated.dataset, &mut w)?;
                w.flush()?;
            }
            let (psi, phi) = model.specs(model.degree);
            let method = model.method(g)?;
            let result = harness::run_method(
                &generated.dataset,
                &method,
                &psi,
                &phi,
                rng::derive_seed(seed, &[1]),
                model.keep_null,
            )?;
            write_json(&SemisynthReport { truth: &generated.truth, result: &result }, &g.output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.global.threads {
        if t > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
