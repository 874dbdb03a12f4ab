//! Dataset files, semi-synthetic data, experiment configs and benchmark
//! sweeps. The `mint` binary is a thin layer over this module.

mod experiment;
mod io;
mod semisynth;

pub use experiment::{
    run_benchmark, run_method, write_benchmark_csv, BenchmarkOptions, BenchmarkRow, ExperimentConfig, Generator,
    GeneratorConfig, MethodConfig, SemiSyntheticConfig, SweepAxis, SweepConfig, SweepValue, DEFAULT_KERNEL_LAMBDA,
    SCHEMA_VERSION,
};
pub use io::{
    load_covariates, load_csv_dataset, read_covariates, read_csv_dataset, standardize_covariate_data,
    standardize_covariates, write_csv_dataset, CovariateData, CsvSchema,
};
pub use semisynth::{semi_synthetic_generate, SemiSyntheticOptions};
