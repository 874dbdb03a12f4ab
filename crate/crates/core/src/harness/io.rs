//! Dataset CSV reading and writing.
//!
//! The canonical layout is a header row followed by `env,a,y,x1..xd`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{EnvironmentBlock, MultiEnvDataset};
use crate::error::{MintError, Result};
use crate::format::fmt17;

/// Column roles in a dataset CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub env_column: String,
    pub treatment_column: String,
    pub outcome_column: String,
    /// Empty means every column not named above, in header order.
    pub covariate_columns: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            env_column: "env".into(),
            treatment_column: "a".into(),
            outcome_column: "y".into(),
            covariate_columns: Vec::new(),
        }
    }
}

/// Covariates grouped by environment, without treatment or outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateData {
    pub names: Vec<String>,
    pub env_ids: Vec<String>,
    pub blocks: Vec<DMatrix<f64>>,
}

impl CovariateData {
    pub fn d(&self) -> usize {
        self.names.len()
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| MintError::InvalidInput(format!("column '{name}' not found in header")))
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Err(MintError::Parse { row, column: column.into(), message: "missing value".into() });
    }
    let v: f64 = raw.parse().map_err(|_| MintError::Parse {
        row,
        column: column.into(),
        message: format!("'{raw}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(MintError::Parse { row, column: column.into(), message: format!("'{raw}' is not finite") });
    }
    Ok(v)
}

/// Rows grouped by environment in order of first appearance. Each row holds
/// the requested numeric columns.
fn read_grouped<R: Read>(
    reader: R,
    env_column: &str,
    numeric: impl FnOnce(&csv::StringRecord) -> Result<Vec<String>>,
) -> Result<(Vec<String>, Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(MintError::InvalidInput("missing header row".into()));
    }
    let env_idx = column_index(&headers, env_column)?;
    let names = numeric(&headers)?;
    let idx: Vec<usize> = names.iter().map(|n| column_index(&headers, n)).collect::<Result<_>>()?;

    let mut env_ids: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let env = record.get(env_idx).unwrap_or("").trim();
        if env.is_empty() {
            return Err(MintError::Parse { row, column: env_column.into(), message: "missing value".into() });
        }
        let values = idx
            .iter()
            .zip(&names)
            .map(|(&j, name)| parse_cell(&record, j, row, name))
            .collect::<Result<Vec<f64>>>()?;
        let g = match env_ids.iter().position(|e| e == env) {
            Some(g) => g,
            None => {
                env_ids.push(env.to_string());
                groups.push(Vec::new());
                env_ids.len() - 1
            }
        };
        groups[g].push(values);
    }
    if env_ids.len() < 2 {
        return Err(MintError::TooFewEnvironments(env_ids.len()));
    }
    Ok((names, env_ids, groups))
}

fn covariate_names(headers: &csv::StringRecord, explicit: &[String], exclude: &[&str]) -> Vec<String> {
    if explicit.is_empty() {
        headers.iter().filter(|h| !exclude.contains(h)).map(str::to_string).collect()
    } else {
        explicit.to_vec()
    }
}

/// Reads a dataset from CSV text.
pub fn read_csv_dataset<R: Read>(reader: R, schema: &CsvSchema) -> Result<MultiEnvDataset> {
    let roles = [
        schema.env_column.as_str(),
        schema.treatment_column.as_str(),
        schema.outcome_column.as_str(),
    ];
    let (names, env_ids, groups) = read_grouped(reader, &schema.env_column, |h| {
        let mut cols = vec![schema.treatment_column.clone(), schema.outcome_column.clone()];
        let covs = covariate_names(h, &schema.covariate_columns, &roles);
        if covs.is_empty() {
            return Err(MintError::InvalidInput("no covariate columns".into()));
        }
        cols.extend(covs);
        Ok(cols)
    })?;
    let d = names.len() - 2;
    let blocks = env_ids
        .into_iter()
        .zip(groups)
        .map(|(env, rows)| {
            let n = rows.len();
            let a = DVector::from_fn(n, |i, _| rows[i][0]);
            let y = DVector::from_fn(n, |i, _| rows[i][1]);
            let x = DMatrix::from_fn(n, d, |i, j| rows[i][j + 2]);
            EnvironmentBlock::new(env, x, a, y)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiEnvDataset::new(blocks)
}

pub fn load_csv_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MultiEnvDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| MintError::from(e).context(path.display().to_string()))?;
    read_csv_dataset(file, schema).map_err(|e| e.context(path.display().to_string()))
}

/// Reads a covariate-only CSV (an environment column plus covariates).
pub fn read_covariates<R: Read>(reader: R, env_column: &str, covariate_columns: &[String]) -> Result<CovariateData> {
    let (names, env_ids, groups) = read_grouped(reader, env_column, |h| {
        let covs = covariate_names(h, covariate_columns, &[env_column]);
        if covs.is_empty() {
            return Err(MintError::InvalidInput("no covariate columns".into()));
        }
        Ok(covs)
    })?;
    let d = names.len();
    let blocks = groups
        .into_iter()
        .map(|rows| DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
        .collect();
    Ok(CovariateData { names, env_ids, blocks })
}

pub fn load_covariates(path: impl AsRef<Path>, env_column: &str, covariate_columns: &[String]) -> Result<CovariateData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| MintError::from(e).context(path.display().to_string()))?;
    read_covariates(file, env_column, covariate_columns).map_err(|e| e.context(path.display().to_string()))
}

/// Writes `env,a,y,x1..xd` with 17 significant digits.
pub fn write_csv_dataset<W: Write>(dataset: &MultiEnvDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["env".to_string(), "a".into(), "y".into()];
    header.extend((1..=dataset.d()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for b in dataset.blocks() {
        for i in 0..b.n() {
            let mut rec = vec![b.env_id().to_string(), fmt17(b.a()[i]), fmt17(b.y()[i])];
            rec.extend(b.x().row(i).iter().map(|&v| fmt17(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pooled mean and population standard deviation of every column.
fn pooled_moments<'a>(blocks: impl Iterator<Item = &'a DMatrix<f64>> + Clone, names: &[String]) -> Result<Vec<(f64, f64)>> {
    let d = names.len();
    let n: usize = blocks.clone().map(|b| b.nrows()).sum();
    let mut out = Vec::with_capacity(d);
    for (j, name) in names.iter().enumerate() {
        let mean = blocks.clone().map(|b| b.column(j).sum()).sum::<f64>() / n as f64;
        let var = blocks
            .clone()
            .map(|b| b.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        if !(var > 1e-300) {
            return Err(MintError::InvalidInput(format!("covariate '{name}' has zero variance")));
        }
        out.push((mean, var.sqrt()));
    }
    Ok(out)
}

fn apply_moments(x: &DMatrix<f64>, moments: &[(f64, f64)]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - moments[j].0) / moments[j].1)
}

/// Rescales every covariate to pooled mean 0 and variance 1.
pub fn standardize_covariates(dataset: &MultiEnvDataset) -> Result<MultiEnvDataset> {
    let names: Vec<String> = (1..=dataset.d()).map(|j| format!("x{j}")).collect();
    let moments = pooled_moments(dataset.blocks().iter().map(|b| b.x()), &names)?;
    dataset.map_blocks(|b| b.with_x(apply_moments(b.x(), &moments)))
}

pub fn standardize_covariate_data(data: &CovariateData) -> Result<CovariateData> {
    let moments = pooled_moments(data.blocks.iter(), &data.names)?;
    Ok(CovariateData {
        names: data.names.clone(),
        env_ids: data.env_ids.clone(),
        blocks: data.blocks.iter().map(|b| apply_moments(b, &moments)).collect(),
    })
}
