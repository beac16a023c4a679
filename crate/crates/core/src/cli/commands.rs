use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::settings::Layered;
use super::{
    AugmentArgs, BenchmarkKind, Cli, Command, CompareArgs, DataArgs, EstimateArgs, GenerateArgs,
    GridArgs, GroupArg, ReportArgs, SynthesizeArgs, TrainArgs, TrainCmdArgs,
};
use crate::att::{
    run_pipeline, run_with_source, summary, AttEstimate, AugmentConfig, PipelineConfig,
    PipelineOutput,
};
use crate::baselines::{
    att_from_matches, fit_propensity, match_cem, match_kernel, match_nn, CemBins, MatchResult,
};
use crate::cate::{BinRule, BoundsPolicy, GridConfig, DEFAULT_MIN_COUNT};
use crate::datasets::{
    load_csv, monte_carlo_ground_truth, write_csv, BenchmarkSpec, CsvSchema, GroundTruth, Group,
    LinearBenchmarkSpec, LoadReport, NoiseScale, NonlinearBenchmarkSpec, ObservationalDataset,
};
use crate::error::{Error, Result};
use crate::gan::{load_model, save_model, train, TrainConfig};
use crate::kv::{join_list, KvFile};
use crate::numerics::HiddenActivation;

const MONTE_CARLO_DRAWS: usize = 1_000_000;

pub(super) fn dispatch(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::GenerateBenchmark(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Estimate(a) => estimate(a).map(|out| summary(&out)),
        Command::Compare(a) => compare(a),
        Command::Report(a) => report(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn generate(a: &GenerateArgs) -> Result<String> {
    let l = Layered::load(a.config.as_deref())?;
    let seed = l.pick(a.seed, "seed", 0)?;
    let spec = match a.kind {
        BenchmarkKind::Linear => {
            let d = LinearBenchmarkSpec::default();
            BenchmarkSpec::Linear(LinearBenchmarkSpec {
                alpha: l.pick(a.alpha, "alpha", d.alpha)?,
                beta: l.pick(a.beta, "beta", d.beta)?,
                gamma: l.pick(a.gamma, "gamma", d.gamma)?,
                mu0: l.pick(a.mu0, "mu0", d.mu0)?,
                mu1: l.pick(a.mu1, "mu1", d.mu1)?,
                sigma_x0: l.pick(a.sigma_x0, "sigma_x0", d.sigma_x0)?,
                sigma_x1: l.pick(a.sigma_x1, "sigma_x1", d.sigma_x1)?,
                sigma_eps: l.pick(a.sigma_eps, "sigma_eps", d.sigma_eps)?,
                n0: l.pick(a.n0, "n0", d.n0)?,
                n1: l.pick(a.n1, "n1", d.n1)?,
                seed,
            })
        }
        BenchmarkKind::Nonlinear => {
            let d = NonlinearBenchmarkSpec::standard(seed);
            BenchmarkSpec::Nonlinear(NonlinearBenchmarkSpec::with_random_draws(
                l.pick(a.alpha, "alpha", d.alpha)?,
                l.pick(a.beta, "beta", d.beta)?,
                l.pick(a.gamma, "gamma", d.gamma)?,
                l.pick(a.sigma, "sigma", d.sigma)?,
                l.pick(a.sigma_eps, "sigma_eps", d.sigma_eps)?,
                l.pick(a.n0, "n0", d.n0)?,
                l.pick(a.n1, "n1", d.n1)?,
                seed,
            ))
        }
    };
    let mc_draws = l.pick(a.mc_draws, "mc_draws", MONTE_CARLO_DRAWS)?;
    if a.kind == BenchmarkKind::Linear && (a.sigma.is_some() || a.mc_draws.is_some()) {
        return Err(Error::config(
            "--sigma and --mc-draws apply to nonlinear benchmarks only",
        ));
    }
    if a.kind == BenchmarkKind::Nonlinear
        && [a.mu0, a.mu1, a.sigma_x0, a.sigma_x1]
            .iter()
            .any(Option::is_some)
    {
        return Err(Error::config(
            "--mu0, --mu1, --sigma-x0 and --sigma-x1 apply to linear benchmarks only",
        ));
    }
    l.finish()?;

    let data = spec.generate()?;
    let truth = match &spec {
        BenchmarkSpec::Linear(s) => GroundTruth {
            att: s.gamma,
            std_err: 0.0,
            draws: 0,
        },
        BenchmarkSpec::Nonlinear(s) => monte_carlo_ground_truth(s, mc_draws)?,
    };
    create_dir(&a.out)?;
    write_csv(&data, &a.out.join("data.csv"))?;
    spec.to_kv().write(&a.out.join("spec.txt"))?;
    truth.to_kv().write(&a.out.join("truth.txt"))?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "wrote {} rows ({} control, {} treated) to {}",
        data.len(),
        data.group_size(Group::Control),
        data.group_size(Group::Treated),
        a.out.join("data.csv").display()
    );
    let _ = writeln!(
        s,
        "true ATT {:.6} (std. err. {:.2e})",
        truth.att, truth.std_err
    );
    Ok(s)
}

fn load_data(l: &Layered, a: &DataArgs) -> Result<(ObservationalDataset, LoadReport)> {
    let d = CsvSchema::default();
    let schema = CsvSchema {
        outcome: l.pick(a.outcome.clone(), "outcome", d.outcome)?,
        treatment: l.pick(a.treatment.clone(), "treatment", d.treatment)?,
        covariates: match (
            &a.covariates,
            l.list::<String>(None, "covariates", Vec::new())?,
        ) {
            (Some(c), _) => Some(c.clone()),
            (None, c) if !c.is_empty() => {
                Some(c.into_iter().map(|s| s.trim().to_string()).collect())
            }
            _ => None,
        },
        impute_threshold: l.pick(a.impute_threshold, "impute_threshold", d.impute_threshold)?,
    };
    load_csv(&a.data, &schema)
}

fn train_config(l: &Layered, a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let mut g_opt = d.generator_optimizer;
    let mut d_opt = d.discriminator_optimizer;
    g_opt.learning_rate = l.pick(a.generator_lr, "generator_lr", g_opt.learning_rate)?;
    d_opt.learning_rate = l.pick(a.discriminator_lr, "discriminator_lr", d_opt.learning_rate)?;
    let beta1 = l.pick(a.beta1, "beta1", g_opt.beta1)?;
    let beta2 = l.pick(a.beta2, "beta2", g_opt.beta2)?;
    for opt in [&mut g_opt, &mut d_opt] {
        opt.beta1 = beta1;
        opt.beta2 = beta2;
    }
    let activation = match l
        .opt(
            a.activation.map(|v| format!("{v:?}").to_lowercase()),
            "activation",
        )?
        .as_deref()
    {
        None | Some("relu") => HiddenActivation::Relu,
        Some("tanh") => HiddenActivation::Tanh,
        Some(other) => return Err(Error::config(format!("unknown activation '{other}'"))),
    };
    let averaging = l.pick(
        a.generator_averaging,
        "generator_averaging",
        d.generator_averaging.unwrap_or(0.0),
    )?;
    Ok(TrainConfig {
        epochs: l.pick(a.epochs, "epochs", d.epochs)?,
        max_steps: l.opt(a.max_steps, "max_steps")?,
        batch_size: l.pick(a.batch_size, "batch_size", d.batch_size)?,
        noise_dim: l.pick(a.noise_dim, "noise_dim", d.noise_dim)?,
        generator_hidden: l.list(
            a.generator_hidden.clone(),
            "generator_hidden",
            d.generator_hidden,
        )?,
        discriminator_hidden: l.list(
            a.discriminator_hidden.clone(),
            "discriminator_hidden",
            d.discriminator_hidden,
        )?,
        hidden_activation: activation,
        generator_optimizer: g_opt,
        discriminator_optimizer: d_opt,
        discriminator_steps: l.pick(
            a.discriminator_steps,
            "discriminator_steps",
            d.discriminator_steps,
        )?,
        seed: l.pick(a.train_seed, "train_seed", seed)?,
        snapshot_interval: l.pick(
            a.snapshot_interval,
            "snapshot_interval",
            d.snapshot_interval,
        )?,
        snapshot_rows: d.snapshot_rows,
        restarts: l.pick(a.restarts, "restarts", d.restarts)?,
        discrete_max_levels: l.pick(
            a.discrete_max_levels,
            "discrete_max_levels",
            d.discrete_max_levels,
        )?,
        early_stop_distance: l.opt(a.early_stop, "early_stop")?,
        generator_averaging: (averaging > 0.0).then_some(averaging),
    })
}

fn augment_config(l: &Layered, a: &AugmentArgs, seed: u64) -> Result<Option<AugmentConfig>> {
    let factor = l.pick(a.augment_factor, "augment_factor", 1)?;
    let scale = l.pick(a.augment_noise, "augment_noise", 0.1)?;
    let absolute = l.switch(a.augment_absolute, "augment_absolute")?;
    let all = l.switch(a.augment_all, "augment_all")?;
    if factor == 0 {
        return Err(Error::config("augmentation factor must be at least 1"));
    }
    Ok((factor > 1).then_some(AugmentConfig {
        factor,
        noise: if absolute {
            NoiseScale::Absolute(scale)
        } else {
            NoiseScale::RelativeToColumnStd(scale)
        },
        treated_only: !all,
        seed,
    }))
}

fn parse_bins(text: &str) -> Result<BinRule> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("auto") {
        return Ok(BinRule::Auto);
    }
    let counts = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| {
            Error::config(format!(
                "bins must be 'auto' or positive counts, got '{text}'"
            ))
        })?;
    Ok(match counts.as_slice() {
        [b] => BinRule::Uniform(*b),
        _ => BinRule::PerDimension(counts),
    })
}

fn pipeline_config(l: &Layered, a: &EstimateArgs) -> Result<PipelineConfig> {
    let d = PipelineConfig::default();
    let seed = l.pick(a.seed, "seed", d.seed)?;
    let g: &GridArgs = &a.grid;
    let expand = match d.grid.bounds {
        BoundsPolicy::PooledRange { expand } => expand,
        BoundsPolicy::Fixed { .. } => 0.0,
    };
    Ok(PipelineConfig {
        train: train_config(l, &a.train, seed)?,
        augment: augment_config(l, &a.augment, seed)?,
        synth_n: l.pick(g.synth_n, "synth_n", d.synth_n)?,
        grid: GridConfig {
            bins: match l.opt(g.bins.clone(), "bins")? {
                Some(text) => parse_bins(&text)?,
                None => d.grid.bins,
            },
            bounds: BoundsPolicy::PooledRange {
                expand: l.pick(g.bounds_expand, "bounds_expand", expand)?,
            },
            min_count: l.pick(g.min_count, "min_count", DEFAULT_MIN_COUNT)?,
        },
        seed,
        kl_bins: l.pick(g.kl_bins, "kl_bins", d.kl_bins)?,
        keep_per_sample: false,
    })
}

fn ingestion_keys(kv: &mut KvFile, data: &Path, load: &LoadReport) {
    kv.comment("ingestion");
    kv.set("input", data.display());
    kv.set("rows_read", load.rows_read);
    kv.set("rows_kept", load.rows_kept());
    kv.set("dropped_missing_outcome", load.dropped_missing_outcome);
    kv.set("dropped_missing_treatment", load.dropped_missing_treatment);
    kv.set("dropped_missing_covariate", load.dropped_missing_covariate);
    kv.set("imputed_cells", load.imputed_cells);
    if !load.imputed_columns.is_empty() {
        kv.set("imputed_columns", join_list(&load.imputed_columns));
    }
}

fn train_cmd(a: &TrainCmdArgs) -> Result<String> {
    let l = Layered::load(a.config.as_deref())?;
    let seed = l.pick(a.seed, "seed", 0)?;
    let config = train_config(&l, &a.train, seed)?;
    let augment = augment_config(&l, &a.augment, seed)?;
    let (data, _) = load_data(&l, &a.data)?;
    l.finish()?;
    let training = match augment {
        Some(aug) => aug.apply(&data)?,
        None => data,
    };
    let (model, log) = train(&training, &config)?;
    save_model(&model, &a.out)?;
    if let Some(p) = &a.log {
        log.write_loss_csv(p)?;
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "trained on {} rows; {} discriminator and {} generator updates",
        training.len(),
        log.discriminator_updates,
        log.generator_updates
    );
    if config.restarts > 1 {
        let _ = writeln!(
            s,
            "restart moment distances [{}]; kept restart {}",
            join_list(&log.restart_distances),
            log.selected_restart
        );
    }
    if let Some(e) = log.epochs.last() {
        let _ = writeln!(
            s,
            "final losses: discriminator {:.4}, generator {:.4}",
            e.discriminator_loss, e.generator_loss
        );
    }
    let _ = writeln!(s, "model written to {}", a.out.display());
    Ok(s)
}

fn synthesize(a: &SynthesizeArgs) -> Result<String> {
    let model = load_model(&a.model)?;
    let group = match a.group {
        GroupArg::Control => Group::Control,
        GroupArg::Treated => Group::Treated,
    };
    let rows = model.synthesize(group, a.n, a.seed)?;
    write_csv(&rows, &a.out)?;
    Ok(format!(
        "wrote {} synthetic {:?} rows to {}\n",
        rows.len(),
        a.group,
        a.out.display()
    )
    .to_lowercase())
}

fn estimate(a: &EstimateArgs) -> Result<PipelineOutput> {
    let l = Layered::load(a.config.as_deref())?;
    let config = pipeline_config(&l, a)?;
    let (data, load) = load_data(&l, &a.data)?;
    l.finish()?;
    run_estimate(a, &config, &data, &load)
}

/// Runs the pipeline and rewrites the run report with the ingestion block.
fn run_estimate(
    a: &EstimateArgs,
    config: &PipelineConfig,
    data: &ObservationalDataset,
    load: &LoadReport,
) -> Result<PipelineOutput> {
    let mut out = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            let mut out = run_with_source(data, &model, config, Some(&a.out))?;
            out.report.set("model_file", path.display());
            out.model = Some(model);
            out
        }
        None => run_pipeline(data, config, Some(&a.out))?,
    };
    ingestion_keys(&mut out.report, &a.data.data, load);
    if let Some(art) = &out.artifacts {
        out.report.write(&art.run_report)?;
    }
    Ok(out)
}

struct Row {
    name: &'static str,
    outcome: Result<(AttEstimate, usize)>,
}

fn baseline(
    data: &ObservationalDataset,
    result: Result<MatchResult>,
    dir: &Path,
) -> Result<(AttEstimate, usize)> {
    let r = result?;
    r.write_diagnostics(&dir.join(format!("matches_{}.csv", r.method.label())))?;
    let est = att_from_matches(&r, data)?;
    Ok((est, r.controls_used))
}

fn compare(a: &CompareArgs) -> Result<String> {
    let e = &a.estimate;
    let l = Layered::load(e.config.as_deref())?;
    let k = l.pick(a.nn_k, "nn_k", 3)?;
    let caliper = l.opt(a.caliper, "caliper")?;
    let bandwidth = l.opt(a.bandwidth, "bandwidth")?;
    let cem = match l.opt(a.cem_bins, "cem_bins")? {
        Some(b) => CemBins::Uniform(b),
        None => CemBins::Sturges,
    };
    let config = pipeline_config(&l, e)?;
    let (data, load) = load_data(&l, &e.data)?;
    l.finish()?;

    create_dir(&e.out)?;
    let gan = run_estimate(e, &config, &data, &load).map(|out| {
        let min = out.cate.min_count();
        let controls = out
            .cate
            .cubes()
            .iter()
            .filter(|(_, c)| c.supported(min))
            .map(|(_, c)| c.count[Group::Control.index()])
            .sum::<usize>();
        (out.estimate, controls)
    });
    let scores = fit_propensity(&data).and_then(|m| m.scores(&data));
    let with_scores = |f: &dyn Fn(&[f64]) -> Result<MatchResult>| match &scores {
        Ok(s) => f(s),
        Err(err) => Err(Error::Estimation(format!("propensity model: {err}"))),
    };
    let rows = vec![
        Row {
            name: "GAN-ATT",
            outcome: gan,
        },
        Row {
            name: "PSM-NN",
            outcome: baseline(
                &data,
                with_scores(&|s| match_nn(s, &data, k, caliper)),
                &e.out,
            ),
        },
        Row {
            name: "PSM-Kernel",
            outcome: baseline(
                &data,
                with_scores(&|s| match_kernel(s, &data, bandwidth)),
                &e.out,
            ),
        },
        Row {
            name: "CEM",
            outcome: baseline(&data, match_cem(&data, &cem), &e.out),
        },
    ];
    if rows.iter().all(|r| r.outcome.is_err()) {
        let Row {
            outcome: Err(err), ..
        } = rows.into_iter().next().expect("four rows")
        else {
            unreachable!()
        };
        return Err(err);
    }
    let table = comparison_table(&rows);
    write_comparison_csv(&rows, &e.out.join("comparison.csv"))?;
    let path = e.out.join("comparison.txt");
    fs::write(&path, &table).map_err(|err| Error::io(&path, err))?;
    Ok(table)
}

fn cells(row: &Row) -> [String; 6] {
    match &row.outcome {
        Ok((est, controls)) => [
            row.name.to_string(),
            format!("{:.6}", est.att),
            format!("{:.6}", est.std_err),
            est.n_used.to_string(),
            controls.to_string(),
            "ok".to_string(),
        ],
        Err(err) => [
            row.name.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            format!("failed: {err}"),
        ],
    }
}

const HEADER: [&str; 6] = [
    "estimator",
    "att",
    "std_err",
    "treated_used",
    "controls_used",
    "status",
];

fn comparison_table(rows: &[Row]) -> String {
    let all: Vec<[String; 6]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> = (0..5)
        .map(|c| {
            all.iter()
                .map(|r| r[c].len())
                .chain([HEADER[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |r: [&str; 6]| {
        let mut s = String::new();
        for c in 0..5 {
            let _ = write!(s, "{:<w$}  ", r[c], w = widths[c]);
        }
        s.push_str(r[5]);
        s.push('\n');
        s
    };
    let mut s = line(HEADER);
    for r in &all {
        s.push_str(&line([&r[0], &r[1], &r[2], &r[3], &r[4], &r[5]]));
    }
    s
}

fn write_comparison_csv(rows: &[Row], path: &Path) -> Result<()> {
    let to_err = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(HEADER).map_err(to_err)?;
    for r in rows {
        w.write_record(cells(r)).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn report(a: &ReportArgs) -> Result<String> {
    let kv = KvFile::read(&a.run.join("run_report.txt"))?;
    let mut s = String::new();
    let get = |k: &str| kv.get(k).unwrap_or("n/a");
    let _ = writeln!(s, "run {}", a.run.display());
    let _ = writeln!(s, "ATT        {}", get("att"));
    let _ = writeln!(s, "std. err.  {}", get("std_err"));
    let _ = writeln!(
        s,
        "95% CI     [{}, {}]",
        get("ci95_lower"),
        get("ci95_upper")
    );
    let _ = writeln!(
        s,
        "treated    {} used, {} dropped",
        get("n_used"),
        get("n_dropped")
    );
    let _ = writeln!(
        s,
        "grid       bins {}, {} of {} occupied cubes supported",
        get("grid_bins"),
        get("cubes_supported"),
        get("cubes_occupied")
    );
    for g in ["control", "treated"] {
        let _ = writeln!(
            s,
            "fidelity   {g}: inverted KS {}, KL {}",
            get(&format!("{g}_inverted_ks")),
            get(&format!("{g}_kl"))
        );
    }
    let n_warn: usize = kv.parse_opt("warnings")?.unwrap_or(0);
    for i in 1..=n_warn {
        let _ = writeln!(s, "warning: {}", get(&format!("warning_{i}")));
    }
    if let Ok(table) = fs::read_to_string(a.run.join("comparison.txt")) {
        s.push('\n');
        s.push_str(&table);
    }
    let _ = writeln!(s, "\nplot data:");
    for (file, what) in [
        ("cate_surface.csv", "CATE per grid cube"),
        ("fidelity.csv", "per-column inverted KS and KL"),
        ("training_log.csv", "loss curves per epoch"),
        ("synthetic_control.csv", "synthetic control rows"),
        ("synthetic_treated.csv", "synthetic treated rows"),
    ] {
        let path = a.run.join(file);
        if let Ok(text) = fs::read_to_string(&path) {
            let rows = text.lines().count().saturating_sub(1);
            let _ = writeln!(s, "  {file:<22} {rows:>8} rows  {what}");
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_parse() {
        assert_eq!(parse_bins("auto").unwrap(), BinRule::Auto);
        assert_eq!(parse_bins("12").unwrap(), BinRule::Uniform(12));
        assert_eq!(
            parse_bins("3, 4").unwrap(),
            BinRule::PerDimension(vec![3, 4])
        );
        assert!(parse_bins("many").is_err());
    }

    #[test]
    fn failed_rows_keep_their_place() {
        let ok = AttEstimate::from_effects(vec![1.0, 3.0], 0, false).unwrap();
        let rows = vec![
            Row {
                name: "GAN-ATT",
                outcome: Ok((ok, 7)),
            },
            Row {
                name: "CEM",
                outcome: Err(Error::Estimation("no strata".into())),
            },
        ];
        let t = comparison_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("GAN-ATT"));
        assert!(lines[1].contains("2.000000") && lines[1].contains("1.000000"));
        assert!(lines[2].contains("failed: estimation error: no strata"));
    }
}
