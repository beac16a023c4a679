//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the criteria execute in order
//! and report their measured values.
//!
//! `cargo test --test acceptance -- 3 9` runs only criteria 3 and 9
//! (`stress` selects the 10-D smoke test).

mod common;

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use ganatt::att::{
    run_pipeline, run_with_source, AugmentConfig, OracleSource, PipelineConfig, PipelineOutput,
};
use ganatt::baselines::{
    att_from_matches, fit_propensity, match_cem, match_kernel, match_nn, CemBins,
};
use ganatt::datasets::{
    generate_linear, generate_nonlinear, load_csv, monte_carlo_ground_truth, subsample_group,
    BenchmarkSpec, CsvSchema, Group, LinearBenchmarkSpec, NoiseScale, NonlinearBenchmarkSpec,
    ObservationalDataset,
};
use ganatt::gan::{ColumnEncoding, RowCodec, TrainConfig};
use ganatt::metrics::{continuous_kl, inverted_ks};
use ganatt::numerics::{HiddenActivation, Matrix, OutputActivation};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
/// Id, description and body of one criterion.
type Criterion = (&'static str, &'static str, fn() -> Outcome);

const ORACLE_TOLERANCE: f64 = 0.02;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(60);
const LINEAR_DESK_TOLERANCE: f64 = 0.08;
const LINEAR_FULL_TOLERANCE: f64 = 0.05;
const NONLINEAR_REL_TOLERANCE: f64 = 0.08;
const SCARCE_REL_TOLERANCE: f64 = 0.10;
const SCARCE_MIN_WINS: usize = 4;
const SCARCE_REPS: u64 = 5;
const NULL_EFFECT_SE_MULTIPLE: f64 = 3.0;
const KL_TOLERANCE: f64 = 0.1;
const SUPPORT_DRIFT_SHARE: f64 = 0.01;
const MC_DRAWS: usize = 1_000_000;

/// Support accounting of every pipeline run, checked by criterion 9.
static ACCOUNTING: Mutex<Vec<(String, usize, usize, usize)>> = Mutex::new(Vec::new());

fn record(label: &str, out: &PipelineOutput, n1: usize) {
    let e = &out.estimate;
    ACCOUNTING
        .lock()
        .unwrap()
        .push((label.to_owned(), e.n_used, e.n_dropped, n1));
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> String + '_ {
    move |e| format!("{what}: {e}")
}

fn treated_count(data: &ObservationalDataset) -> usize {
    data.group_size(Group::Treated)
}

fn oracle_linear() -> Outcome {
    let spec = LinearBenchmarkSpec::default();
    let data = generate_linear(&spec).map_err(fail("generate"))?;
    let config = PipelineConfig {
        synth_n: 100_000,
        ..PipelineConfig::default()
    };
    let started = Instant::now();
    let out = run_with_source(
        &data,
        &OracleSource(BenchmarkSpec::Linear(spec.clone())),
        &config,
        None,
    )
    .map_err(fail("pipeline"))?;
    let elapsed = started.elapsed();
    record("oracle linear", &out, treated_count(&data));
    let err = (out.estimate.att - spec.gamma).abs();
    check(
        err <= ORACLE_TOLERANCE && elapsed <= ORACLE_TIME_LIMIT,
        format!(
            "att {:.4}, |att - 1| = {err:.4} (limit {ORACLE_TOLERANCE}), {:.1} s (limit {} s)",
            out.estimate.att,
            elapsed.as_secs_f64(),
            ORACLE_TIME_LIMIT.as_secs()
        ),
    )
}

fn linear_end_to_end() -> Outcome {
    let mut detail = String::new();
    let mut ok = true;
    for (label, n, synth_n, restarts, tolerance) in [
        ("desk", 10_000, 50_000, 3, LINEAR_DESK_TOLERANCE),
        ("full", 50_000, 200_000, 1, LINEAR_FULL_TOLERANCE),
    ] {
        let spec = LinearBenchmarkSpec {
            n0: n,
            n1: n,
            ..LinearBenchmarkSpec::default()
        };
        let data = generate_linear(&spec).map_err(fail("generate"))?;
        let mut config = PipelineConfig {
            synth_n,
            ..PipelineConfig::default()
        };
        config.train.restarts = restarts;
        let started = Instant::now();
        let out = run_pipeline(&data, &config, None).map_err(fail(label))?;
        record(&format!("linear {label}"), &out, n);
        let err = (out.estimate.att - spec.gamma).abs();
        ok &= err <= tolerance;
        let _ = write!(
            detail,
            "{label} att {:.4} (|err| {err:.4}, limit {tolerance}, used {}/{n}, {:.0} s); ",
            out.estimate.att,
            out.estimate.n_used,
            started.elapsed().as_secs_f64()
        );
    }
    check(ok, detail.trim_end_matches("; ").to_owned())
}

struct NonlinearDesk {
    spec: NonlinearBenchmarkSpec,
    data: ObservationalDataset,
    config: PipelineConfig,
    out: PipelineOutput,
    seconds: f64,
}

/// The default-config run on the 20k/20k nonlinear benchmark, shared by the
/// end-to-end and support criteria.
fn nonlinear_desk() -> Result<&'static NonlinearDesk, String> {
    static RUN: OnceLock<Result<NonlinearDesk, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut spec = NonlinearBenchmarkSpec::standard(0);
        spec.n0 = 20_000;
        spec.n1 = 20_000;
        let data = generate_nonlinear(&spec).map_err(fail("generate"))?;
        let config = PipelineConfig {
            synth_n: 100_000,
            ..PipelineConfig::default()
        };
        let started = Instant::now();
        let out = run_pipeline(&data, &config, None).map_err(fail("pipeline"))?;
        record("nonlinear desk", &out, spec.n1);
        Ok(NonlinearDesk {
            spec,
            data,
            config,
            out,
            seconds: started.elapsed().as_secs_f64(),
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn nonlinear_end_to_end() -> Outcome {
    let run = nonlinear_desk()?;
    let truth = monte_carlo_ground_truth(&run.spec, MC_DRAWS)
        .map_err(fail("ground truth"))?
        .att;
    let att = run.out.estimate.att;
    let rel = (att - truth).abs() / truth.abs();
    check(
        rel <= NONLINEAR_REL_TOLERANCE,
        format!(
            "att {att:.4} vs truth {truth:.4}, relative error {rel:.4} (limit {NONLINEAR_REL_TOLERANCE}), {:.0} s",
            run.seconds
        ),
    )
}

fn scarce_treated() -> Outcome {
    let base = NonlinearBenchmarkSpec::standard(0);
    let truth = monte_carlo_ground_truth(&base, MC_DRAWS)
        .map_err(fail("ground truth"))?
        .att;
    let rel = |x: f64| (x - truth).abs() / truth.abs();
    let mut wins = 0;
    let mut ok = true;
    let mut detail = format!("truth {truth:.4}; ");
    for r in 0..SCARCE_REPS {
        let mut spec = base.clone();
        spec.n0 = 20_000;
        spec.n1 = 20_000;
        spec.seed = 100 + r;
        let full = generate_nonlinear(&spec).map_err(fail("generate"))?;
        let data = subsample_group(&full, Group::Treated, 1_000, r).map_err(fail("subsample"))?;
        let mut config = PipelineConfig {
            synth_n: 100_000,
            seed: r,
            ..PipelineConfig::default()
        };
        config.train = TrainConfig {
            epochs: 1_000,
            max_steps: Some(15_000),
            seed: r,
            ..TrainConfig::default()
        };
        config.augment = Some(AugmentConfig {
            factor: 100,
            noise: NoiseScale::default(),
            treated_only: true,
            seed: r,
        });
        let out = run_pipeline(&data, &config, None).map_err(fail("pipeline"))?;
        record(&format!("scarce rep {r}"), &out, 1_000);
        let scores = fit_propensity(&data)
            .map_err(fail("propensity"))?
            .scores(&data)
            .map_err(fail("scores"))?;
        let kernel = att_from_matches(
            &match_kernel(&scores, &data, None).map_err(fail("kernel"))?,
            &data,
        )
        .map_err(fail("kernel att"))?;
        let (g, k) = (rel(out.estimate.att), rel(kernel.att));
        ok &= g <= SCARCE_REL_TOLERANCE;
        wins += usize::from(g <= k);
        let _ = write!(detail, "rep {r} gan {g:.3} kernel {k:.3}; ");
    }
    ok &= wins >= SCARCE_MIN_WINS;
    let _ = write!(
        detail,
        "gan <= kernel in {wins}/{SCARCE_REPS} (need {SCARCE_MIN_WINS}), gan limit {SCARCE_REL_TOLERANCE}"
    );
    check(ok, detail)
}

fn null_effect() -> Outcome {
    let spec = LinearBenchmarkSpec {
        gamma: 0.0,
        n0: 10_000,
        n1: 10_000,
        ..LinearBenchmarkSpec::default()
    };
    let data = generate_linear(&spec).map_err(fail("generate"))?;
    let config = PipelineConfig {
        synth_n: 50_000,
        ..PipelineConfig::default()
    };
    let gan = run_pipeline(&data, &config, None).map_err(fail("pipeline"))?;
    record("null effect", &gan, spec.n1);
    let scores = fit_propensity(&data)
        .map_err(fail("propensity"))?
        .scores(&data)
        .map_err(fail("scores"))?;
    let estimates = [
        ("GAN-ATT", Ok(gan.estimate.clone())),
        (
            "PSM-NN",
            match_nn(&scores, &data, 3, None).and_then(|m| att_from_matches(&m, &data)),
        ),
        (
            "PSM-Kernel",
            match_kernel(&scores, &data, None).and_then(|m| att_from_matches(&m, &data)),
        ),
        (
            "CEM",
            match_cem(&data, &CemBins::Sturges).and_then(|m| att_from_matches(&m, &data)),
        ),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, est) in estimates {
        let est = est.map_err(fail(name))?;
        let z = est.att.abs() / est.std_err;
        ok &= z <= NULL_EFFECT_SE_MULTIPLE;
        let _ = write!(detail, "{name} {:+.4} ({z:.2} se); ", est.att);
    }
    let _ = write!(detail, "limit {NULL_EFFECT_SE_MULTIPLE} se");
    check(ok, detail)
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let hidden = if seed % 2 == 0 {
            HiddenActivation::Relu
        } else {
            HiddenActivation::Tanh
        };
        let dims = [3, 2 + (seed % 5) as usize, 2 + (seed % 3) as usize, 2];
        let batch = normal_matrix(4, 3, &mut r);
        let upstream = normal_matrix(4, 2, &mut r);
        let linear = random_net(&dims, hidden, OutputActivation::Linear, seed);
        let sigmoid = random_net(&[3, dims[1], 1], hidden, OutputActivation::Sigmoid, seed);
        // rows straddling a ReLU kink measure the kink, not the backprop
        if hidden_margin(&linear, &batch) > 1e-3 {
            worst = worst.max(net_gradient_error(&linear, &batch, &upstream));
            checked += 1;
        }
        if hidden_margin(&sigmoid, &batch) > 1e-3 {
            worst = worst.max(net_gradient_error(
                &sigmoid,
                &batch,
                &Matrix::column_vector(&upstream.column(0)),
            ));
            let labels: Vec<f64> = (0..4).map(|i| (i % 2) as f64).collect();
            worst = worst.max(log_loss_gradient_error(&sigmoid, &batch, &labels));
            checked += 2;
        }
        let codec = RowCodec {
            columns: vec![
                ColumnEncoding::Continuous {
                    mean: 0.5,
                    std: 2.0,
                },
                ColumnEncoding::Discrete {
                    levels: (0..2 + seed as usize % 4).map(|l| l as f64).collect(),
                },
                ColumnEncoding::Constant { value: 1.0 },
            ],
        };
        let w = codec.encoded_width();
        worst = worst.max(codec_gradient_error(
            &codec,
            &normal_matrix(3, w, &mut r),
            &normal_matrix(3, w, &mut r),
        ));
        checked += 1;
    }
    check(
        worst <= FD_TOLERANCE,
        format!("{checked} checks, worst relative error {worst:.2e} (limit {FD_TOLERANCE:.0e})"),
    )
}

fn metric_oracles() -> Outcome {
    let mut r = rng(7);
    let a: Vec<f64> = (0..100_000).map(|_| r.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..100_000)
        .map(|_| 1.0 + r.sample::<f64, _>(StandardNormal))
        .collect();
    let self_ks = inverted_ks(&a, &a).map_err(fail("ks"))?;
    // KL(N(1,1) ‖ N(0,1)) = 1/2
    let kl = continuous_kl(&a, &b, 100).map_err(fail("kl"))?;
    check(
        self_ks == 1.0 && (kl - 0.5).abs() <= KL_TOLERANCE,
        format!(
            "self inverted KS {self_ks}, Gaussian KL {kl:.4} vs 0.5 (tolerance {KL_TOLERANCE})"
        ),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let path = |p: &Path| p.to_str().unwrap().to_owned();
    let run = |args: &[String]| {
        ganatt::cli::run(
            ["ganatt", "-q"]
                .into_iter()
                .map(String::from)
                .chain(args.iter().cloned()),
        )
    };
    let bench = dir.path().join("bench");
    let gen = [
        "generate-benchmark",
        "--kind",
        "linear",
        "--n0",
        "2000",
        "--n1",
        "2000",
        "--out",
        &path(&bench),
    ];
    if run(&gen.map(String::from)) != 0 {
        return Err("generate-benchmark failed".into());
    }
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let args = [
            "estimate",
            "--seed",
            "42",
            "--epochs",
            "5",
            "--synth-n",
            "20000",
            "--data",
            &path(&bench.join("data.csv")),
            "--out",
            &path(&out),
        ];
        let code = run(&args.map(String::from));
        if code != 0 {
            return Err(format!("estimate exited with {code}"));
        }
        reports.push(std::fs::read(out.join("run_report.txt")).map_err(fail("report"))?);
    }
    check(
        reports[0] == reports[1],
        format!(
            "two run reports of {} bytes {}",
            reports[0].len(),
            if reports[0] == reports[1] {
                "identical"
            } else {
                "differ"
            }
        ),
    )
}

fn support_accounting() -> Outcome {
    let run = nonlinear_desk()?;
    let (data, config) = (&run.data, &run.config);
    let n1 = run.spec.n1;
    let limit = (SUPPORT_DRIFT_SHARE * n1 as f64).floor() as usize;
    let model = run
        .out
        .model
        .as_ref()
        .expect("trained pipeline keeps its model");
    let oracle = OracleSource(BenchmarkSpec::Nonlinear(run.spec.clone()));

    let mut detail = String::new();
    let mut ok = true;
    for (label, source) in [
        ("gan", model as &dyn ganatt::gan::SyntheticSource),
        ("oracle", &oracle),
    ] {
        let mut dropped = Vec::new();
        for synth_n in [config.synth_n, 2 * config.synth_n] {
            let c = PipelineConfig {
                synth_n,
                ..config.clone()
            };
            let out = run_with_source(data, source, &c, None).map_err(fail(label))?;
            record(&format!("support {label} {synth_n}"), &out, n1);
            dropped.push(out.estimate.n_dropped);
        }
        let growth = dropped[1].saturating_sub(dropped[0]);
        ok &= growth <= limit;
        let _ = write!(detail, "{label} dropped {} -> {}; ", dropped[0], dropped[1]);
    }

    let runs = ACCOUNTING.lock().unwrap();
    let broken: Vec<&str> = runs
        .iter()
        .filter(|(_, u, d, n)| u + d != *n)
        .map(|r| r.0.as_str())
        .collect();
    ok &= broken.is_empty();
    let _ = write!(
        detail,
        "growth limit {limit}; n_used + n_dropped = n1 in {}/{} runs",
        runs.len() - broken.len(),
        runs.len()
    );
    if !broken.is_empty() {
        let _ = write!(detail, " (broken: {})", broken.join(", "));
    }
    check(ok, detail)
}

/// Ten covariates, 1,250 treated and 240,000 control rows, written to CSV with
/// a few blank cells and read back through the loader.
fn stress_ten_dimensions() -> Outcome {
    const Q: usize = 10;
    let (n0, n1) = (240_000, 1_250);
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let csv = dir.path().join("firms.csv");
    let mut r = rng(2024);
    let mut text = String::with_capacity(200 * (n0 + n1));
    let names: Vec<String> = (1..=Q).map(|j| format!("x{j}")).collect();
    let _ = writeln!(text, "{},y,d", names.join(","));
    let mut blanks = 0;
    for i in 0..n0 + n1 {
        let treated = i >= n0;
        let mut y = if treated { 1.0 } else { 0.0 };
        for j in 0..Q {
            let shift = if treated { 0.25 } else { 0.0 };
            let x = shift + r.sample::<f64, _>(StandardNormal);
            y += 0.3 * x / (1 + j) as f64;
            // about 1% of the first covariate is missing
            if j == 0 && r.gen::<f64>() < 0.01 {
                text.push(',');
                blanks += 1;
            } else {
                let _ = write!(text, "{x:.6},");
            }
        }
        y += 0.5 * r.sample::<f64, _>(StandardNormal);
        let _ = writeln!(text, "{y:.6},{}", u8::from(treated));
    }
    std::fs::write(&csv, text).map_err(fail("write"))?;

    let started = Instant::now();
    let (data, report) = load_csv(&csv, &CsvSchema::default()).map_err(fail("load"))?;
    if data.dim() != Q || report.imputed_cells != blanks {
        return Err(format!(
            "loaded {} covariates with {} imputed cells, expected {Q} and {blanks}",
            data.dim(),
            report.imputed_cells
        ));
    }
    let mut config = PipelineConfig {
        synth_n: 250_000,
        ..PipelineConfig::default()
    };
    config.train.max_steps = Some(2_000);
    let out =
        run_pipeline(&data, &config, Some(&dir.path().join("run"))).map_err(fail("pipeline"))?;
    record("stress", &out, n1);
    let e = &out.estimate;
    check(
        e.att.is_finite() && e.n_used + e.n_dropped == n1,
        format!(
            "att {:.4}, used {}/{n1}, {} cells imputed, {:.0} s",
            e.att,
            e.n_used,
            report.imputed_cells,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 10] = [
        (
            "1",
            "oracle histogram on the linear benchmark",
            oracle_linear,
        ),
        ("2", "linear benchmark end to end", linear_end_to_end),
        ("3", "nonlinear benchmark end to end", nonlinear_end_to_end),
        ("4", "1,000 treated rows augmented x100", scarce_treated),
        ("5", "null effect, all four estimators", null_effect),
        ("6", "finite-difference gradients", gradients),
        ("7", "metric oracles", metric_oracles),
        ("8", "estimate --seed 42 determinism", cli_determinism),
        (
            "stress",
            "10-D CSV stress smoke test",
            stress_ten_dimensions,
        ),
        ("9", "support accounting", support_accounting),
    ];
    let mut failures = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS [{id}] {name}: {d} [{secs:.0} s]"),
            Err(d) => {
                failures += 1;
                println!("FAIL [{id}] {name}: {d} [{secs:.0} s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
