//! The four-step estimation run: train, synthesize, bin, average.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::{estimate_att, AttEstimate};
use crate::cate::{build_grid, export_cate_surface, CateFunction, GridConfig};
use crate::datasets::{
    augment_with_noise, write_csv, BenchmarkSpec, Group, NoiseScale, ObservationalDataset,
};
use crate::error::{Error, Result};
use crate::gan::{save_model, train, GanModel, SyntheticSource, TrainConfig, TrainingLog};
use crate::kv::{join_list, KvFile};
use crate::metrics::{FidelityReport, DEFAULT_KL_BINS};

/// Dropped share of the treated evaluation set above which the report warns.
pub const SUPPORT_WARNING_FRACTION: f64 = 0.05;

/// Noise augmentation of the GAN's training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Output rows per input row, the original included.
    pub factor: usize,
    pub noise: NoiseScale,
    /// Augment only the treated group, leaving control rows as they are.
    pub treated_only: bool,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn apply(&self, data: &ObservationalDataset) -> Result<ObservationalDataset> {
        if !self.treated_only {
            return augment_with_noise(data, self.factor, self.noise, self.seed);
        }
        let treated = augment_with_noise(
            &data.group(Group::Treated),
            self.factor,
            self.noise,
            self.seed,
        )?;
        data.group(Group::Control).concat(&treated)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// Applied to the training rows only; evaluation always uses the real treated rows.
    pub augment: Option<AugmentConfig>,
    /// Synthetic rows drawn per group.
    pub synth_n: usize,
    pub grid: GridConfig,
    /// Seed of the synthesis stage.
    pub seed: u64,
    pub kl_bins: usize,
    pub keep_per_sample: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            augment: None,
            synth_n: 200_000,
            grid: GridConfig::default(),
            seed: 0,
            kl_bins: DEFAULT_KL_BINS,
            keep_per_sample: false,
        }
    }
}

/// Draws rows straight from a benchmark's true model in place of a GAN.
#[derive(Debug, Clone)]
pub struct OracleSource(pub BenchmarkSpec);

impl SyntheticSource for OracleSource {
    fn synthesize(&self, group: Group, n: usize, seed: u64) -> Result<ObservationalDataset> {
        // offset keeps oracle draws independent of the benchmark's own data stream
        self.0
            .sample_group(group, n, seed.wrapping_add(0x0AC1_E000))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub train: Duration,
    pub synthesize: Duration,
    pub grid: Duration,
    pub estimate: Duration,
}

impl StageTimings {
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.comment("wall-clock seconds per stage");
        kv.set("train_seconds", format!("{:.3}", self.train.as_secs_f64()));
        kv.set(
            "synthesize_seconds",
            format!("{:.3}", self.synthesize.as_secs_f64()),
        );
        kv.set("grid_seconds", format!("{:.3}", self.grid.as_secs_f64()));
        kv.set(
            "estimate_seconds",
            format!("{:.3}", self.estimate.as_secs_f64()),
        );
        kv
    }
}

/// Files written by a run, when an output directory is given.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineArtifacts {
    pub model: Option<PathBuf>,
    pub synthetic_control: PathBuf,
    pub synthetic_treated: PathBuf,
    pub cate_surface: PathBuf,
    /// Per-column inverted KS and KL of each synthetic group.
    pub fidelity: PathBuf,
    pub run_report: PathBuf,
    pub training_log: Option<PathBuf>,
    pub timings: PathBuf,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub estimate: AttEstimate,
    pub cate: CateFunction,
    pub synthetic_control: ObservationalDataset,
    pub synthetic_treated: ObservationalDataset,
    pub fidelity: Vec<(Group, FidelityReport)>,
    pub model: Option<GanModel>,
    pub training_log: Option<TrainingLog>,
    pub warnings: Vec<String>,
    /// Deterministic summary; wall-clock timings live in [`StageTimings`].
    pub report: KvFile,
    pub timings: StageTimings,
    pub artifacts: Option<PipelineArtifacts>,
}

/// Trains a conditional GAN on `real`, then estimates the ATT from its
/// synthetic rows, evaluating on the real treated covariates.
///
/// The estimate is only meaningful under unconfoundedness and overlap; neither
/// can be checked from the data, so both are the caller's responsibility.
pub fn run_pipeline(
    real: &ObservationalDataset,
    config: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    check_real(real)?;
    let started = Instant::now();
    let augmented;
    let training = match &config.augment {
        Some(aug) => {
            augmented = aug.apply(real).map_err(Error::in_stage("augment"))?;
            &augmented
        }
        None => real,
    };
    let (model, log) = train(training, &config.train).map_err(Error::in_stage("train"))?;
    let train_time = started.elapsed();
    let mut out = run_with_source(real, &model, config, None)?;
    out.timings.train = train_time;
    out.report = report_with_training(out.report, &config.train, config.augment, &log);
    if let Some(dir) = out_dir {
        out.artifacts = Some(write_artifacts(&out, Some(&model), Some(&log), dir)?);
    }
    out.model = Some(model);
    out.training_log = Some(log);
    Ok(out)
}

/// Steps 2 to 4 with any synthetic source, such as an [`OracleSource`].
pub fn run_with_source(
    real: &ObservationalDataset,
    source: &dyn SyntheticSource,
    config: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    check_real(real)?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let synthesize = |group| {
        source
            .synthesize(group, config.synth_n, config.seed)
            .map_err(Error::in_stage("synthesize"))
    };
    let synthetic_control = synthesize(Group::Control)?;
    let synthetic_treated = synthesize(Group::Treated)?;
    timings.synthesize = t.elapsed();

    let t = Instant::now();
    let cate = build_grid(&synthetic_control, &synthetic_treated, &config.grid)
        .map_err(Error::in_stage("grid"))?;
    timings.grid = t.elapsed();

    let t = Instant::now();
    let treated = real.group(Group::Treated);
    let estimate = estimate_att(&cate, treated.covariates(), config.keep_per_sample)
        .map_err(Error::in_stage("estimate"))?;
    let fidelity = [
        (Group::Control, &synthetic_control),
        (Group::Treated, &synthetic_treated),
    ]
    .into_iter()
    .map(|(g, s)| {
        Ok((
            g,
            FidelityReport::compare(&real.group(g), s, config.kl_bins)?,
        ))
    })
    .collect::<Result<Vec<_>>>()
    .map_err(Error::in_stage("fidelity"))?;
    timings.estimate = t.elapsed();

    let warnings = support_warnings(&cate, &treated, &estimate, config);
    let report = base_report(real, config, &cate, &estimate, &fidelity, &warnings);
    let mut out = PipelineOutput {
        estimate,
        cate,
        synthetic_control,
        synthetic_treated,
        fidelity,
        model: None,
        training_log: None,
        warnings,
        report,
        timings,
        artifacts: None,
    };
    if let Some(dir) = out_dir {
        out.artifacts = Some(write_artifacts(&out, None, None, dir)?);
    }
    Ok(out)
}

fn check_real(real: &ObservationalDataset) -> Result<()> {
    if !real.has_both_groups() {
        return Err(Error::data(
            "estimation needs both treated and control rows",
        ));
    }
    Ok(())
}

fn support_warnings(
    cate: &CateFunction,
    treated: &ObservationalDataset,
    estimate: &AttEstimate,
    config: &PipelineConfig,
) -> Vec<String> {
    let mut warnings = Vec::new();
    let n1 = treated.len();
    if estimate.n_dropped as f64 > SUPPORT_WARNING_FRACTION * n1 as f64 {
        warnings.push(format!(
            "{} of {} treated samples lack common support; consider a larger synth_n or coarser bins",
            estimate.n_dropped, n1
        ));
    }
    let mut active: Vec<u64> = treated
        .covariates()
        .iter_rows()
        .filter_map(|r| cate.grid().cube_index(r).ok().flatten())
        .collect();
    active.sort_unstable();
    active.dedup();
    let needed = config.grid.min_count.saturating_mul(active.len());
    if config.synth_n < needed {
        warnings.push(format!(
            "synth_n {} is below min_count x active cubes ({} x {} = {needed}); support is starved",
            config.synth_n,
            config.grid.min_count,
            active.len()
        ));
    }
    warnings
}

fn base_report(
    real: &ObservationalDataset,
    config: &PipelineConfig,
    cate: &CateFunction,
    estimate: &AttEstimate,
    fidelity: &[(Group, FidelityReport)],
    warnings: &[String],
) -> KvFile {
    let mut kv = KvFile::new();
    kv.comment("ATT estimation run report");
    kv.set("att", estimate.att);
    kv.set("std_err", estimate.std_err);
    if let Ok((lo, hi)) = estimate.confidence_interval(0.95) {
        kv.set("ci95_lower", lo);
        kv.set("ci95_upper", hi);
    }
    kv.set("n_used", estimate.n_used);
    kv.set("n_dropped", estimate.n_dropped);
    kv.set("n_treated_eval", estimate.n_used + estimate.n_dropped);
    kv.comment("data");
    kv.set("real_rows_control", real.group_size(Group::Control));
    kv.set("real_rows_treated", real.group_size(Group::Treated));
    kv.set("covariates", join_list(real.column_names()));
    kv.set("synth_n", config.synth_n);
    kv.set("synthesis_seed", config.seed);
    kv.comment("grid");
    kv.set("grid_bins", join_list(cate.grid().bins()));
    kv.set("grid_lower", join_list(cate.grid().lower()));
    kv.set("grid_upper", join_list(cate.grid().upper()));
    kv.set("min_count", cate.min_count());
    kv.set("cubes_occupied", cate.cubes().len());
    kv.set("cubes_supported", cate.supported_cubes());
    kv.set("overflow_control", cate.overflow(Group::Control));
    kv.set("overflow_treated", cate.overflow(Group::Treated));
    kv.comment("fidelity of synthetic against real rows");
    for (group, report) in fidelity {
        let g = group_key(*group);
        kv.set(&format!("{g}_inverted_ks"), report.mean_inverted_ks());
        kv.set(&format!("{g}_kl"), report.mean_kl());
        for col in &report.columns {
            kv.set(&format!("{g}_inverted_ks.{}", col.name), col.inverted_ks);
            kv.set(&format!("{g}_kl.{}", col.name), col.kl);
        }
    }
    kv.set("warnings", warnings.len());
    for (i, w) in warnings.iter().enumerate() {
        kv.set(&format!("warning_{}", i + 1), w);
    }
    kv
}

fn report_with_training(
    mut kv: KvFile,
    config: &TrainConfig,
    config_augment: Option<AugmentConfig>,
    log: &TrainingLog,
) -> KvFile {
    kv.comment("training");
    if let Some(aug) = &config_augment {
        kv.set("augment_factor", aug.factor);
        kv.set(
            "augment_noise",
            match aug.noise {
                NoiseScale::Absolute(s) => format!("absolute {s}"),
                NoiseScale::RelativeToColumnStd(s) => format!("relative {s}"),
            },
        );
        kv.set("augment_treated_only", aug.treated_only);
        kv.set("augment_seed", aug.seed);
    }
    kv.set("epochs", config.epochs);
    kv.set(
        "max_steps",
        config
            .max_steps
            .map(|m| m.to_string())
            .unwrap_or_else(|| "none".into()),
    );
    kv.set("batch_size", config.batch_size);
    kv.set("noise_dim", config.noise_dim);
    kv.set("generator_hidden", join_list(&config.generator_hidden));
    kv.set(
        "discriminator_hidden",
        join_list(&config.discriminator_hidden),
    );
    kv.set(
        "generator_learning_rate",
        config.generator_optimizer.learning_rate,
    );
    kv.set(
        "discriminator_learning_rate",
        config.discriminator_optimizer.learning_rate,
    );
    kv.set("discriminator_steps", config.discriminator_steps);
    kv.set("training_seed", config.seed);
    kv.set("restarts", config.restarts);
    kv.set("selected_restart", log.selected_restart);
    kv.set("restart_distances", join_list(&log.restart_distances));
    kv.set("discriminator_updates", log.discriminator_updates);
    kv.set("generator_updates", log.generator_updates);
    if let Some(last) = log.epochs.last() {
        kv.set("final_discriminator_loss", last.discriminator_loss);
        kv.set("final_generator_loss", last.generator_loss);
    }
    kv
}

fn group_key(group: Group) -> &'static str {
    match group {
        Group::Control => "control",
        Group::Treated => "treated",
    }
}

/// `group,column,inverted_ks,kl`, one row per group and column.
pub fn fidelity_csv(fidelity: &[(Group, FidelityReport)]) -> String {
    let mut s = String::from("group,column,inverted_ks,kl\n");
    for (group, report) in fidelity {
        for c in &report.columns {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                group_key(*group),
                c.name,
                c.inverted_ks,
                c.kl
            );
        }
    }
    s
}

fn write_artifacts(
    out: &PipelineOutput,
    model: Option<&GanModel>,
    log: Option<&TrainingLog>,
    dir: &Path,
) -> Result<PipelineArtifacts> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let artifacts = PipelineArtifacts {
        model: model.map(|_| dir.join("model.bin")),
        synthetic_control: dir.join("synthetic_control.csv"),
        synthetic_treated: dir.join("synthetic_treated.csv"),
        cate_surface: dir.join("cate_surface.csv"),
        fidelity: dir.join("fidelity.csv"),
        run_report: dir.join("run_report.txt"),
        training_log: log.map(|_| dir.join("training_log.csv")),
        timings: dir.join("timings.txt"),
    };
    let write = || -> Result<()> {
        if let (Some(m), Some(p)) = (model, &artifacts.model) {
            save_model(m, p)?;
        }
        if let (Some(l), Some(p)) = (log, &artifacts.training_log) {
            l.write_loss_csv(p)?;
        }
        write_csv(&out.synthetic_control, &artifacts.synthetic_control)?;
        write_csv(&out.synthetic_treated, &artifacts.synthetic_treated)?;
        export_cate_surface(&out.cate, &artifacts.cate_surface)?;
        std::fs::write(&artifacts.fidelity, fidelity_csv(&out.fidelity))
            .map_err(|e| Error::io(&artifacts.fidelity, e))?;
        out.report.write(&artifacts.run_report)?;
        out.timings.to_kv().write(&artifacts.timings)
    };
    write().map_err(Error::in_stage("artifacts"))?;
    Ok(artifacts)
}

/// Human-readable one-screen summary of a run.
pub fn summary(out: &PipelineOutput) -> String {
    let e = &out.estimate;
    let mut s = String::new();
    let _ = writeln!(s, "ATT        {:.6}", e.att);
    let _ = writeln!(s, "std. err.  {:.6}", e.std_err);
    if let Ok((lo, hi)) = e.confidence_interval(0.95) {
        let _ = writeln!(s, "95% CI     [{lo:.6}, {hi:.6}]");
    }
    let _ = writeln!(s, "treated    {} used, {} dropped", e.n_used, e.n_dropped);
    for w in &out.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
