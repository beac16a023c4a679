//! Adversarial training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::encoding::RowCodec;
use super::{with_condition, GanModel, CONDITION_WIDTH};
use crate::datasets::{Group, ObservationalDataset};
use crate::error::{Error, Result};
use crate::metrics::{FidelityReport, DEFAULT_KL_BINS};
use crate::numerics::{
    AdamConfig, AdamState, FeedforwardNet, HiddenActivation, Matrix, OutputActivation,
    SIGMOID_CLAMP,
};
use crate::rng::seeded;

/// Hyperparameters of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Passes over the training rows.
    pub epochs: usize,
    /// Optional cap on discriminator updates across all epochs.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub generator_optimizer: AdamConfig,
    pub discriminator_optimizer: AdamConfig,
    /// Discriminator updates per generator update.
    pub discriminator_steps: usize,
    pub seed: u64,
    /// Epochs between fidelity snapshots; 0 disables them.
    pub snapshot_interval: usize,
    /// Rows per group generated for each snapshot and for restart selection.
    pub snapshot_rows: usize,
    /// Independent training runs; the one whose synthetic moments sit closest
    /// to the data is kept.
    pub restarts: usize,
    /// Columns with at most this many distinct values are one-hot encoded.
    pub discrete_max_levels: usize,
    /// Stop a run early once a snapshot's moment distance falls below this.
    pub early_stop_distance: Option<f64>,
    /// Decay of the running average of generator weights; the averaged
    /// generator is the one snapshotted and returned. `None` keeps the raw
    /// weights of the last step.
    pub generator_averaging: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            max_steps: None,
            batch_size: 256,
            noise_dim: 16,
            generator_hidden: vec![128, 128],
            discriminator_hidden: vec![128, 128],
            hidden_activation: HiddenActivation::Relu,
            generator_optimizer: AdamConfig::default(),
            discriminator_optimizer: AdamConfig::default(),
            discriminator_steps: 1,
            seed: 0,
            snapshot_interval: 0,
            snapshot_rows: 5_000,
            restarts: 1,
            discrete_max_levels: 10,
            early_stop_distance: None,
            generator_averaging: Some(0.999),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("noise_dim", self.noise_dim),
            ("discriminator_steps", self.discriminator_steps),
            ("restarts", self.restarts),
            ("snapshot_rows", self.snapshot_rows),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self
            .generator_hidden
            .iter()
            .chain(&self.discriminator_hidden)
            .any(|&w| w == 0)
        {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps must be positive when set"));
        }
        if let Some(d) = self.generator_averaging {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::config(format!(
                    "generator averaging decay {d} must lie in [0, 1)"
                )));
            }
        }
        self.generator_optimizer.validate()?;
        self.discriminator_optimizer.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub discriminator_loss: f64,
    pub generator_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub moment_distance: f64,
    /// Fidelity of generated rows against the training rows, per group present.
    pub fidelity: Vec<(Group, FidelityReport)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Loss curves of the selected run.
    pub epochs: Vec<EpochStats>,
    pub snapshots: Vec<Snapshot>,
    /// Final moment distance of every restart, in order.
    pub restart_distances: Vec<f64>,
    pub selected_restart: usize,
    pub discriminator_updates: usize,
    pub generator_updates: usize,
}

impl TrainingLog {
    /// Loss curve as CSV: `epoch,discriminator_loss,generator_loss`.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,discriminator_loss,generator_loss\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{}",
                e.epoch, e.discriminator_loss, e.generator_loss
            );
        }
        s
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.loss_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Trains on every row of `data`, conditioning on each row's treatment flag.
///
/// A dataset holding one group trains a model that only ever sees that group's code.
pub fn train(data: &ObservationalDataset, config: &TrainConfig) -> Result<(GanModel, TrainingLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Training("training data is empty".into()));
    }
    if config.batch_size > data.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the {} training rows",
            config.batch_size,
            data.len()
        )));
    }
    let codec = RowCodec::fit(data, config.discrete_max_levels)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let encoded = codec.encode(data, &all);
    let groups: Vec<Group> = all.iter().map(|&i| data.group_of(i)).collect();
    let snapshot_rows = config.snapshot_rows;

    let mut best: Option<(GanModel, TrainingLog, f64)> = None;
    let mut distances = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let (model, log) = train_run(data, &codec, &encoded, &groups, config, restart)?;
        let distance = if config.restarts > 1 {
            model.moment_distance(data, snapshot_rows, config.seed ^ 0x5EED)?
        } else {
            f64::NAN
        };
        distances.push(distance);
        let better = match &best {
            None => true,
            Some((_, _, d)) => distance < *d,
        };
        if better {
            best = Some((model, log, distance));
        }
    }
    let (model, mut log, _) = best.expect("at least one restart");
    log.selected_restart = distances
        .iter()
        .position(|d| d.is_nan() || Some(*d) == distances.iter().copied().reduce(f64::min))
        .unwrap_or(0);
    log.restart_distances = distances;
    Ok((model, log))
}

fn train_run(
    data: &ObservationalDataset,
    codec: &RowCodec,
    encoded: &Matrix,
    groups: &[Group],
    config: &TrainConfig,
    restart: usize,
) -> Result<(GanModel, TrainingLog)> {
    let mut rng = seeded(config.seed, 1_000 + restart as u64);
    let width = codec.encoded_width();
    let mut gdims = vec![config.noise_dim + CONDITION_WIDTH];
    gdims.extend(&config.generator_hidden);
    gdims.push(width);
    let mut ddims = vec![width + CONDITION_WIDTH];
    ddims.extend(&config.discriminator_hidden);
    ddims.push(1);
    let generator = FeedforwardNet::new(
        &gdims,
        config.hidden_activation,
        OutputActivation::Linear,
        &mut rng,
    )?;
    let discriminator = FeedforwardNet::new(
        &ddims,
        config.hidden_activation,
        OutputActivation::Sigmoid,
        &mut rng,
    )?;
    let mut model = GanModel::new(
        generator,
        discriminator,
        config.noise_dim,
        codec.clone(),
        data.data_column_names(),
        config.seed,
    )?;
    let mut adam_g = AdamState::new(
        config.generator_optimizer,
        &model.generator.parameter_shapes(),
    )?;
    let mut adam_d = AdamState::new(
        config.discriminator_optimizer,
        &model.discriminator.parameter_shapes(),
    )?;

    let mut average = config
        .generator_averaging
        .map(|decay| WeightAverage::new(decay, &model.generator));
    let mut log = TrainingLog::default();
    let batch = config.batch_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut d_updates = 0usize;
    let mut g_updates = 0usize;
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut d_loss_sum, mut g_loss_sum) = (0.0, 0.0);
        let (mut d_count, mut g_count) = (0usize, 0usize);
        for chunk in order.chunks_exact(batch) {
            if config.max_steps.is_some_and(|m| d_updates >= m) {
                break;
            }
            let labels: Vec<Group> = chunk.iter().map(|&i| groups[i]).collect();
            let real = encoded.select_rows(chunk);
            d_loss_sum += discriminator_step(&mut model, &mut adam_d, &real, &labels, &mut rng)?;
            d_count += 1;
            d_updates += 1;
            if d_updates.is_multiple_of(config.discriminator_steps) {
                g_loss_sum += generator_step(&mut model, &mut adam_g, &labels, &mut rng)?;
                if let Some(avg) = &mut average {
                    avg.update(&model.generator);
                }
                g_count += 1;
                g_updates += 1;
            }
        }
        if d_count == 0 {
            break;
        }
        log.epochs.push(EpochStats {
            epoch,
            discriminator_loss: d_loss_sum / d_count as f64,
            generator_loss: if g_count > 0 {
                g_loss_sum / g_count as f64
            } else {
                f64::NAN
            },
        });
        if config.snapshot_interval > 0 && epoch % config.snapshot_interval == 0 {
            let current = with_generator(&model, average.as_ref());
            let snap = snapshot(&current, data, epoch, config.snapshot_rows, config.seed)?;
            let stop = config
                .early_stop_distance
                .is_some_and(|limit| snap.moment_distance <= limit);
            log.snapshots.push(snap);
            if stop {
                break 'epochs;
            }
        }
    }
    log.discriminator_updates = d_updates;
    log.generator_updates = g_updates;
    Ok((with_generator(&model, average.as_ref()), log))
}

/// Running average of network weights, with the decay ramped up over the
/// first updates so early weights do not linger.
struct WeightAverage {
    decay: f64,
    updates: u64,
    net: FeedforwardNet,
}

impl WeightAverage {
    fn new(decay: f64, net: &FeedforwardNet) -> Self {
        WeightAverage {
            decay,
            updates: 0,
            net: net.clone(),
        }
    }

    fn update(&mut self, current: &FeedforwardNet) {
        self.updates += 1;
        let u = self.updates as f64;
        let d = self.decay.min((1.0 + u) / (10.0 + u));
        let sources = current
            .layers()
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]);
        for (avg, cur) in self.net.parameters_mut().into_iter().zip(sources) {
            for (a, &c) in avg.iter_mut().zip(cur) {
                *a = d * *a + (1.0 - d) * c;
            }
        }
    }
}

fn with_generator(model: &GanModel, average: Option<&WeightAverage>) -> GanModel {
    let mut m = model.clone();
    if let Some(avg) = average {
        m.generator = avg.net.clone();
    }
    m
}

fn snapshot(
    model: &GanModel,
    data: &ObservationalDataset,
    epoch: usize,
    rows: usize,
    seed: u64,
) -> Result<Snapshot> {
    let seed = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9);
    let mut fidelity = Vec::new();
    for group in Group::BOTH {
        let real = data.group(group);
        if real.is_empty() {
            continue;
        }
        let synth = model.synthesize(group, rows, seed)?;
        fidelity.push((
            group,
            FidelityReport::compare(&real, &synth, DEFAULT_KL_BINS)?,
        ));
    }
    Ok(Snapshot {
        epoch,
        moment_distance: model.moment_distance(data, rows, seed)?,
        fidelity,
    })
}

/// Generated rows after the discrete-segment softmax, with the generator trace.
fn generate(
    model: &GanModel,
    labels: &[Group],
    rng: &mut crate::rng::StreamRng,
) -> Result<(crate::numerics::ForwardTrace, Matrix)> {
    let input = model.generator_input(labels, rng);
    let trace = model.generator.forward_trace(&input)?;
    let mut fake = trace.output().clone();
    model.codec.activate(&mut fake);
    Ok((trace, fake))
}

/// One log-loss update of the discriminator on a real batch and an equally
/// sized generated batch with the same labels. Returns the loss before the update.
fn discriminator_step(
    model: &mut GanModel,
    adam: &mut AdamState,
    real: &Matrix,
    labels: &[Group],
    rng: &mut crate::rng::StreamRng,
) -> Result<f64> {
    let b = labels.len();
    let (_, fake) = generate(model, labels, rng)?;
    let input = with_condition(real, labels)?.vstack(&with_condition(&fake, labels)?)?;
    let trace = model.discriminator.forward_trace(&input)?;
    let logits = trace.output_preactivation();
    let probs = trace.output();
    let mut delta = Matrix::zeros(2 * b, 1);
    let mut loss = 0.0;
    for r in 0..2 * b {
        let target = if r < b { 1.0 } else { 0.0 };
        let z = logits.get(r, 0).clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
        loss += if r < b { softplus(-z) } else { softplus(z) };
        delta.set(r, 0, (probs.get(r, 0) - target) / b as f64);
    }
    let grads = model.discriminator.backward_output_delta(&trace, delta)?;
    adam.step(
        &mut model.discriminator.parameters_mut(),
        &grads.parameter_slices(),
    )?;
    Ok(loss / b as f64)
}

/// One update of the generator against the current discriminator, minimizing
/// `−log D(G(z, d̄))`. Returns the loss before the update.
fn generator_step(
    model: &mut GanModel,
    adam: &mut AdamState,
    labels: &[Group],
    rng: &mut crate::rng::StreamRng,
) -> Result<f64> {
    let b = labels.len();
    let width = model.codec.encoded_width();
    let (gtrace, fake) = generate(model, labels, rng)?;
    let dtrace = model
        .discriminator
        .forward_trace(&with_condition(&fake, labels)?)?;
    let logits = dtrace.output_preactivation();
    let probs = dtrace.output();
    let mut delta = Matrix::zeros(b, 1);
    let mut loss = 0.0;
    for r in 0..b {
        let z = logits.get(r, 0).clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
        loss += softplus(-z);
        delta.set(r, 0, (probs.get(r, 0) - 1.0) / b as f64);
    }
    let dgrads = model.discriminator.backward_output_delta(&dtrace, delta)?;
    let mut upstream = dgrads.input.column_range(0, width);
    model.codec.activate_backward(&fake, &mut upstream);
    let ggrads = model.generator.backward_from_trace(&gtrace, &upstream)?;
    adam.step(
        &mut model.generator.parameters_mut(),
        &ggrads.parameter_slices(),
    )?;
    Ok(loss / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    fn gaussian_rows(n: usize, shift: f64, seed: u64) -> ObservationalDataset {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = seeded(seed, 0);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                shift + z
            })
            .collect();
        ObservationalDataset::single_group(
            Matrix::from_vec(n, 1, x).unwrap(),
            vec![1.0; n],
            Group::Treated,
            vec!["x1".into()],
        )
        .unwrap()
    }

    #[test]
    fn discriminator_learns_to_separate() {
        let data = gaussian_rows(512, 0.0, 1);
        let config = TrainConfig {
            epochs: 0,
            batch_size: 128,
            ..Default::default()
        };
        let (mut model, _) = train(&data, &config).unwrap();
        let mut adam = AdamState::new(
            config.discriminator_optimizer,
            &model.discriminator.parameter_shapes(),
        )
        .unwrap();
        let real = model.codec.encode(&data, &(0..128).collect::<Vec<_>>());
        let labels = vec![Group::Treated; 128];
        let mut rng = seeded(0, 9);
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses
                .push(discriminator_step(&mut model, &mut adam, &real, &labels, &mut rng).unwrap());
        }
        assert!(losses[199] < losses[0]);
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.generator_hidden = vec![8, 0];
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
