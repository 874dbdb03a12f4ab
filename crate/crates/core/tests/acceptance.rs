//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Statistical criteria use 200 repetitions and 200 resamples per test.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use mint_core::baselines::special::{chi2_survival, f_survival};
use mint_core::baselines::{combine_fisher, combine_tippett, CombineMethod, PValueBundle};
use mint_core::dgp::{generate_linear_example, lemma1_closed_form, linear_example_specs, LinearExampleConfig};
use mint_core::harness::{run_benchmark, BenchmarkOptions, BenchmarkRow, ExperimentConfig};
use mint_core::kernel_mint::{kernel_statistic, KernelSpec};
use mint_core::mint::centered_gram_statistic;
use mint_core::{fit_mechanisms, frobenius_statistic, rng, EnvironmentBlock, FeatureSpec, MultiEnvDataset};

type Outcome = Result<String, String>;

const REPS: usize = 200;
const RESAMPLES: usize = 200;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn benchmark(generator: &str, method: &str, sweep: &str, seed: u64) -> Vec<BenchmarkRow> {
    let text = format!(
        r#"{{"schema_version":1,"generator":{generator},"method":{method},"sweep":{sweep},"repetitions":{REPS},"seed":{seed}}}"#
    );
    let cfg = ExperimentConfig::from_json(&text).expect("config");
    run_benchmark(&cfg, Path::new("."), BenchmarkOptions::default()).expect("benchmark")
}

fn mint_method(name: &str) -> String {
    format!(r#"{{"name":"{name}","resamples":{RESAMPLES}}}"#)
}

fn rate(rows: &[BenchmarkRow], i: usize) -> f64 {
    rows[i].rate
}

// 1

fn statistic_exactness() -> Outcome {
    let start = Instant::now();
    let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, v);
    let t1 = frobenius_statistic(&m(2, 1, &[1.0, 3.0]), &m(2, 1, &[2.0, 6.0])).map_err(|e| e.to_string())?;
    let t2 = frobenius_statistic(&m(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]), &m(3, 1, &[5.0, -1.0, 7.0]))
        .map_err(|e| e.to_string())?;
    let t3 = frobenius_statistic(&m(3, 1, &[0.0, 1.0, 2.0]), &m(3, 1, &[2.0, 1.0, 0.0])).map_err(|e| e.to_string())?;
    if t1 != 2.0 || t2 != 0.0 || t3 != 2.0 / 3.0 {
        return Err(format!("hand examples gave {t1}, {t2}, {t3}"));
    }

    let mut r = rng::stream(101, &[]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = r.random_range(2..=20);
        let z = r.random_range(1..=6);
        let z2 = r.random_range(1..=6);
        let w = DMatrix::from_fn(k, z, |_, _| r.sample::<f64, _>(StandardNormal));
        let g = DMatrix::from_fn(k, z2, |_, _| r.sample::<f64, _>(StandardNormal));
        let direct = naive_frobenius(&w, &g);
        let bridge = centered_gram_statistic(&(&w * w.transpose()), &(&g * g.transpose())).map_err(|e| e.to_string())?;
        let library = frobenius_statistic(&w, &g).map_err(|e| e.to_string())?;
        worst = worst.max((bridge - direct).abs()).max((library - direct).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && secs < 1.0,
        format!("hand examples exact, bridge max error {worst:.1e}, {secs:.3} s"),
    )
}

/// Explicit cross-covariance matrix, then its Frobenius norm.
fn naive_frobenius(w: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let k = w.nrows() as f64;
    let wc = DMatrix::from_fn(w.nrows(), w.ncols(), |s, i| w[(s, i)] - w.column(i).mean());
    let gc = DMatrix::from_fn(g.nrows(), g.ncols(), |s, j| g[(s, j)] - g.column(j).mean());
    (wc.transpose() * gc).norm() / k
}

// 2

fn type_one_control() -> Outcome {
    let rows = benchmark(
        r#"{"kind":"polynomial","k":20,"n":200,"d":1,"degree":1,"confounded":false}"#,
        &mint_method("mint"),
        r#"{"axis":"K","values":[20]}"#,
        2,
    );
    let r = rate(&rows, 0);
    check(r <= 0.10, format!("rate {r:.3} (<= 0.10)"))
}

// 3

fn power_trend() -> Outcome {
    let rows = benchmark(
        r#"{"kind":"polynomial","k":50,"n":200,"d":1,"degree":1,"confounded":true}"#,
        &mint_method("mint"),
        r#"{"axis":"K","values":[10,50]}"#,
        3,
    );
    let (r10, r50) = (rate(&rows, 0), rate(&rows, 1));
    check(
        r50 >= 0.7 && r50 >= r10,
        format!("rate K=50 {r50:.3} (>= 0.7), K=10 {r10:.3}"),
    )
}

// 4

fn mechanism_selectivity() -> Outcome {
    let rows = benchmark(
        r#"{"kind":"linear_example","k":50,"n":1000,"confounded":true}"#,
        &mint_method("mint"),
        r#"{"axis":"varied","values":["alpha0","betaA"]}"#,
        4,
    );
    let (ra, rb) = (rate(&rows, 0), rate(&rows, 1));
    check(
        ra >= 0.8 && rb <= 0.10,
        format!("alpha0 varied {ra:.3} (>= 0.8), betaA varied {rb:.3} (<= 0.10); K=50, N=1000"),
    )
}

// 5

fn transportability_false_positives() -> Outcome {
    let gen = r#"{"kind":"polynomial","k":50,"n":100,"d":1,"degree":1,"confounded":false,"resample_outcome_intercept":true}"#;
    let sweep = r#"{"axis":"N","values":[100]}"#;
    let transport = benchmark(gen, r#"{"name":"transportability"}"#, sweep, 5);
    let mint = benchmark(gen, &mint_method("mint"), sweep, 5);
    let (rt, rm) = (rate(&transport, 0), rate(&mint, 0));
    check(
        rt >= 0.5 && rm <= 0.10,
        format!("transportability {rt:.3} (>= 0.5), MINT {rm:.3} (<= 0.10)"),
    )
}

// 6

fn misspecification() -> Outcome {
    let null = benchmark(
        r#"{"kind":"polynomial","k":100,"n":100,"d":1,"degree":2,"confounded":false}"#,
        &mint_method("mint"),
        r#"{"axis":"degree","values":[1,2]}"#,
        6,
    );
    let confounded = benchmark(
        r#"{"kind":"polynomial","k":100,"n":100,"d":1,"degree":2,"confounded":true}"#,
        &mint_method("mint"),
        r#"{"axis":"degree","values":[2]}"#,
        6,
    );
    let (r1, r2, rc) = (rate(&null, 0), rate(&null, 1), rate(&confounded, 0));
    check(
        r1 >= 0.3 && r2 <= 0.10 && rc >= 0.9,
        format!("degree 1 null {r1:.3} (>= 0.3), degree 2 null {r2:.3} (<= 0.10), degree 2 confounded {rc:.3} (>= 0.9); K=100, N=100"),
    )
}

// 7

fn bootstrap_ablation() -> Outcome {
    let gen = r#"{"kind":"polynomial","k":50,"n":100,"d":5,"degree":2,"confounded":false}"#;
    let sweep = r#"{"axis":"degree","values":[4]}"#;
    let plain = benchmark(gen, &mint_method("mint_no_bootstrap"), sweep, 7);
    let boot = benchmark(gen, &mint_method("mint"), sweep, 7);
    let (rp, rb) = (rate(&plain, 0), rate(&boot, 0));
    check(
        rp > rb && rb <= 0.12,
        format!("without bootstrap {rp:.3} > with bootstrap {rb:.3} (<= 0.12); d=5, method degree 4"),
    )
}

// 8

fn oracle_errors(n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let cfg = LinearExampleConfig::new(3, n, true).vary("alphaX").vary("betaX");
    let g = generate_linear_example(&cfg, &mut rng::stream(seed, &[])).map_err(|e| e.to_string())?;
    let (psi, phi) = linear_example_specs();
    let est = fit_mechanisms(&g.dataset, &psi, &phi, 0.0).map_err(|e| e.to_string())?;
    g.truth
        .env_params
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let o = lemma1_closed_form(p).map_err(|e| e.to_string())?;
            let fitted = DVector::from_iterator(
                o.omega.len() + o.gamma.len(),
                est.omegas.row(s).iter().chain(est.gammas.row(s).iter()).copied(),
            );
            let truth = DVector::from_iterator(fitted.len(), o.omega.iter().chain(o.gamma.iter()).copied());
            Ok((fitted - &truth).norm() / truth.norm())
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..10u64 {
        worst = oracle_errors(50_000, 800 + seed)?.into_iter().fold(worst, f64::max);
        small += oracle_errors(5_000, 900 + seed)?.iter().sum::<f64>();
        large += oracle_errors(500_000, 900 + seed)?.iter().sum::<f64>();
    }
    check(
        worst <= 0.05 && large < small,
        format!("worst error at 50k {worst:.4} (<= 0.05); total error 5k {small:.4} > 500k {large:.4}"),
    )
}

// 9

fn kernel_primal_equivalence() -> Outcome {
    let psi = FeatureSpec::treatment(1).with_intercept(false);
    let phi = FeatureSpec::outcome(1).with_intercept(false);
    let spec = KernelSpec::linear(1e-8);
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let mut r = rng::stream(900, &[i]);
        let k = r.random_range(3..=10);
        let n = r.random_range(20..=60);
        let d = r.random_range(1..=3);
        let blocks = (0..k)
            .map(|s| {
                let shift: f64 = r.random_range(-1.0..1.0);
                let x = DMatrix::from_fn(n, d, |_, _| shift + r.sample::<f64, _>(StandardNormal));
                let a = DVector::from_fn(n, |j, _| x.row(j).sum() * shift + r.sample::<f64, _>(StandardNormal));
                let y = DVector::from_fn(n, |j, _| a[j] * shift - x[(j, 0)] + r.sample::<f64, _>(StandardNormal));
                EnvironmentBlock::new(format!("e{s}"), x, a, y).unwrap()
            })
            .collect();
        let ds = MultiEnvDataset::new(blocks).map_err(|e| e.to_string())?;
        let est = fit_mechanisms(&ds, &psi, &phi, 0.0).map_err(|e| e.to_string())?;
        let primal = frobenius_statistic(&est.omegas, &est.gammas).map_err(|e| e.to_string())?;
        let dual = kernel_statistic(&ds, &spec, &spec).map_err(|e| e.to_string())?;
        worst = worst.max((dual - primal).abs() / primal);
    }
    check(worst <= 1e-6, format!("max relative difference {worst:.2e} over 50 datasets"))
}

// 10

/// Tanh-sinh rule on [0, 1]. `f` receives the node and its distance to 1.
fn tanh_sinh<F: Fn(f64, f64) -> f64>(f: F) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let h = 1.0 / 64.0;
    let mut total = 0.0;
    let mut j = 0i64;
    loop {
        let t = j as f64 * h;
        let u = half_pi * t.sinh();
        let w = half_pi * t.cosh() / u.cosh().powi(2);
        // distance of the mirrored nodes 0.5 +- 0.5 tanh(u) to the nearer endpoint
        let gap = 0.5 * 2.0 / (1.0 + (2.0 * u).exp());
        if gap < 1e-300 || w < 1e-300 {
            break;
        }
        let hi = f(1.0 - gap, gap);
        let term = if j == 0 { hi } else { hi + f(gap, 1.0 - gap) };
        total += 0.5 * w * term;
        j += 1;
    }
    total * h
}

/// `int_a^inf g` through `x = a + s / (1 - s)`.
fn integrate_tail<G: Fn(f64) -> f64>(a: f64, g: G) -> f64 {
    tanh_sinh(|s, one_minus_s| {
        let v = g(a + s / one_minus_s);
        if v == 0.0 {
            0.0
        } else {
            v / (one_minus_s * one_minus_s)
        }
    })
}

fn f_density_kernel(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((0.5 * d1 - 1.0) * x.ln() - 0.5 * (d1 + d2) * (d1 * x / d2).ln_1p()).exp()
}

fn chi2_density_kernel(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((0.5 * k - 1.0) * x.ln() - 0.5 * x).exp()
}

fn special_functions() -> Outcome {
    let mut worst = 0.0f64;
    let mut points = 0;
    let dofs = [(1u32, 1u32), (1, 10), (2, 5), (3, 30), (5, 2), (10, 10), (20, 100)];
    for &(d1, d2) in &dofs {
        let (a, b) = (d1 as f64, d2 as f64);
        let norm = integrate_tail(0.0, |x| f_density_kernel(x, a, b));
        for &f in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let oracle = integrate_tail(f, |x| f_density_kernel(x, a, b)) / norm;
            let got = f_survival(f, d1, d2).map_err(|e| e.to_string())?;
            worst = worst.max((got - oracle).abs());
            points += 1;
        }
    }
    for &k in &[1u32, 2, 3, 5, 10, 30] {
        let kf = k as f64;
        let norm = integrate_tail(0.0, |x| chi2_density_kernel(x, kf));
        for &x in &[0.1, 0.5, 1.0, 3.0, 10.0, 30.0] {
            let oracle = integrate_tail(x, |t| chi2_density_kernel(t, kf)) / norm;
            let got = chi2_survival(x, k).map_err(|e| e.to_string())?;
            worst = worst.max((got - oracle).abs());
            points += 1;
        }
    }

    let bundle = |v: &[f64], m| PValueBundle::new(v.to_vec(), m).unwrap();
    let tippett = [
        (vec![0.5, 0.5], 0.75),
        (vec![1.0, 1.0, 1.0], 1.0),
        (vec![0.01], 0.01),
    ];
    for (p, expected) in &tippett {
        let got = combine_tippett(&bundle(p, CombineMethod::Tippett)).map_err(|e| e.to_string())?;
        let closed = 1.0 - (1.0 - p.iter().copied().fold(1.0, f64::min)).powi(p.len() as i32);
        if got != closed || (got - expected).abs() > 1e-15 {
            return Err(format!("tippett {p:?} gave {got}, closed form {closed}"));
        }
    }
    let fisher_ones = combine_fisher(&bundle(&[1.0, 1.0], CombineMethod::Fisher)).map_err(|e| e.to_string())?;
    let fisher_single = combine_fisher(&bundle(&[0.1], CombineMethod::Fisher)).map_err(|e| e.to_string())?;
    let fisher_pair = combine_fisher(&bundle(&[0.05, 0.05], CombineMethod::Fisher)).map_err(|e| e.to_string())?;
    // chi-square with 4 degrees of freedom: exp(-x/2) (1 + x/2)
    let x = -4.0 * 0.05f64.ln();
    let pair_closed = (-0.5 * x).exp() * (1.0 + 0.5 * x);
    let fisher_err = (fisher_ones - 1.0)
        .abs()
        .max((fisher_single - 0.1).abs())
        .max((fisher_pair - pair_closed).abs());
    check(
        points >= 60 && worst <= 1e-6 && fisher_err <= 1e-12,
        format!("{points} grid points, max quadrature error {worst:.1e}; combiner error {fisher_err:.1e}"),
    )
}

// 11

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("bench.json");
    std::fs::write(
        &config,
        r#"{"schema_version":1,"generator":{"kind":"polynomial","k":12,"n":60,"confounded":true},
            "method":{"name":"mint","resamples":100},"sweep":{"axis":"K","values":[6,12]},"repetitions":8,"seed":11}"#,
    )
    .map_err(|e| e.to_string())?;
    let max_threads = std::thread::available_parallelism().map_or(1, |n| n.get()).max(2);
    let run = |threads: Option<usize>| -> Result<Vec<u8>, String> {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mint"));
        cmd.arg("benchmark").arg("--config").arg(&config);
        if let Some(t) = threads {
            cmd.arg("--threads").arg(t.to_string());
        }
        let out = cmd.output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        Ok(out.stdout)
    };
    let first = run(None)?;
    let second = run(None)?;
    let single = run(Some(1))?;
    let wide = run(Some(max_threads))?;
    check(
        !first.is_empty() && first == second && first == single && first == wide,
        format!("{} bytes identical across default, 1 and {max_threads} threads", first.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("statistic exactness", statistic_exactness),
        ("type I control", type_one_control),
        ("power trend", power_trend),
        ("mechanism selectivity", mechanism_selectivity),
        ("transportability false positives", transportability_false_positives),
        ("misspecification", misspecification),
        ("bootstrap ablation", bootstrap_ablation),
        ("oracle equivalence", oracle_equivalence),
        ("kernel-primal equivalence", kernel_primal_equivalence),
        ("special functions", special_functions),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !filter.is_empty() && !filter.iter().any(|s| s == &number.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {number:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {number:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
