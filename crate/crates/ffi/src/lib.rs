//! C interface to `mint-core`.
//!
//! Every function returns a [`MintStatus`]. On failure the message is
//! available from [`mint_last_error_message`] on the same thread until the
//! next call into the library. Datasets are opaque handles created by
//! [`mint_dataset_new`] or [`mint_dataset_load_csv`] and released with
//! [`mint_dataset_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;

use mint_core::harness::{self, CsvSchema, MethodConfig};
use mint_core::nalgebra::{DMatrix, DVector};
use mint_core::{EnvironmentBlock, FeatureSpec, MintError, MultiEnvDataset, TestMethod};

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MintStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Inputs or options were rejected.
    Invalid = 2,
    /// Rank deficiency or another numerical failure.
    Numerical = 3,
    /// File could not be read or parsed.
    Io = 4,
    /// Internal panic; the library state is unaffected.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MintMethod {
    Mint = 0,
    MintNoBootstrap = 1,
    Transportability = 2,
    KernelMint = 3,
}

/// Test options. Obtain defaults from [`mint_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MintOptions {
    pub method: MintMethod,
    /// Polynomial degree of both working models.
    pub degree: u32,
    pub alpha: f64,
    pub resamples: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MintTestOutput {
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    /// 1 if the null was rejected.
    pub reject: u8,
}

/// Opaque dataset handle.
pub struct MintDataset {
    inner: MultiEnvDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &MintError) -> MintStatus {
    let mut inner = e;
    while let MintError::Context { source, .. } = inner {
        inner = source;
    }
    match inner {
        MintError::Io(_) | MintError::Csv(_) | MintError::Parse { .. } => MintStatus::Io,
        _ if e.is_numerical() => MintStatus::Numerical,
        _ => MintStatus::Invalid,
    }
}

struct Failure(MintStatus, String);

impl From<MintError> for Failure {
    fn from(e: MintError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(MintStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MintStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MintStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MintStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_handle(ds: MultiEnvDataset, out: *mut *mut MintDataset) {
    let handle = Box::into_raw(Box::new(MintDataset { inner: ds }));
    // SAFETY: callers check `out` before doing any work
    unsafe { *out = handle };
}

/// Builds a dataset from row-major arrays. Rows sharing an environment
/// label form one environment; environments are ordered by label.
///
/// # Safety
/// `env`, `a` and `y` must point to `n_rows` values and `x` to
/// `n_rows * d` values. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mint_dataset_new(
    env: *const u32,
    x: *const f64,
    a: *const f64,
    y: *const f64,
    n_rows: usize,
    d: usize,
    out: *mut *mut MintDataset,
) -> MintStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let env = slice(env, n_rows, "env")?;
        let x = slice(x, n_rows * d, "x")?;
        let a = slice(a, n_rows, "a")?;
        let y = slice(y, n_rows, "y")?;
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &e) in env.iter().enumerate() {
            groups.entry(e).or_default().push(i);
        }
        let blocks = groups
            .into_iter()
            .map(|(label, rows)| {
                let xm = DMatrix::from_fn(rows.len(), d, |r, j| x[rows[r] * d + j]);
                let av = DVector::from_iterator(rows.len(), rows.iter().map(|&r| a[r]));
                let yv = DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]));
                EnvironmentBlock::new(label.to_string(), xm, av, yv)
            })
            .collect::<Result<Vec<_>, _>>()?;
        into_handle(MultiEnvDataset::new(blocks)?, out);
        Ok(())
    })
}

/// Reads a CSV file with columns `env`, `a`, `y` and covariates.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mint_dataset_load_csv(path: *const c_char, out: *mut *mut MintDataset) -> MintStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(MintStatus::Invalid, "path is not valid UTF-8".into()))?;
        into_handle(harness::load_csv_dataset(path, &CsvSchema::default())?, out);
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mint_dataset_free(dataset: *mut MintDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of environments, or 0 for null.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mint_dataset_environments(dataset: *const MintDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.k())
}

/// Number of covariates, or 0 for null.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mint_dataset_covariates(dataset: *const MintDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.d())
}

#[no_mangle]
pub extern "C" fn mint_options_default() -> MintOptions {
    MintOptions {
        method: MintMethod::Mint,
        degree: 1,
        alpha: 0.05,
        resamples: 1000,
        seed: 0,
    }
}

/// Runs a test on the dataset.
///
/// # Safety
/// `dataset` must be a live handle, `options` readable (null means
/// defaults) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mint_run_test(
    dataset: *const MintDataset,
    options: *const MintOptions,
    out: *mut MintTestOutput,
) -> MintStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = options.as_ref().copied().unwrap_or_else(|| mint_options_default());
        if opts.degree == 0 {
            return Err(Failure(MintStatus::Invalid, "degree must be at least 1".into()));
        }
        let name = match opts.method {
            MintMethod::Mint => TestMethod::Mint,
            MintMethod::MintNoBootstrap => TestMethod::MintNoBootstrap,
            MintMethod::Transportability => TestMethod::Transportability,
            MintMethod::KernelMint => TestMethod::KernelMint,
        };
        let mut method = MethodConfig::new(name);
        method.alpha = opts.alpha;
        method.resamples = opts.resamples as usize;
        let degree = opts.degree as usize;
        let (psi, phi) = (FeatureSpec::treatment(degree), FeatureSpec::outcome(degree));
        let r = harness::run_method(&ds.inner, &method, &psi, &phi, opts.seed, false)?;
        *out = MintTestOutput {
            statistic: r.statistic,
            threshold: r.threshold,
            p_value: r.p_value,
            reject: r.reject as u8,
        };
        Ok(())
    })
}

/// Frobenius statistic of row-major `k x z` and `k x z2` coefficient
/// matrices.
///
/// # Safety
/// `omegas` must hold `k * z` values, `gammas` `k * z2` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mint_frobenius_statistic(
    omegas: *const f64,
    gammas: *const f64,
    k: usize,
    z: usize,
    z2: usize,
    out: *mut f64,
) -> MintStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = slice(omegas, k * z, "omegas")?;
        let g = slice(gammas, k * z2, "gammas")?;
        let wm = DMatrix::from_row_slice(k, z, w);
        let gm = DMatrix::from_row_slice(k, z2, g);
        *out = mint_core::frobenius_statistic(&wm, &gm)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn mint_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mint_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
