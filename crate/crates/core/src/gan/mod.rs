//! Conditional GAN over tabular rows `(x, y)`, conditioned on a one-hot
//! treatment code (`10` treated, `01` control).
//!
//! A single generator/discriminator pair serves both groups. The discriminator
//! is trained on log-loss with real rows labelled 1 and generated rows 0; the
//! generator minimizes `−log D(G(z, d̄))` (the non-saturating form of the
//! adversarial objective).

mod encoding;
mod persist;
mod train;

pub use encoding::{ColumnEncoding, RowCodec};
pub use persist::{
    decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use train::{train, EpochStats, Snapshot, TrainConfig, TrainingLog};

use rand_distr::{Distribution, StandardNormal};

use crate::datasets::{mean_std, Group, ObservationalDataset};
use crate::error::{Error, Result};
use crate::numerics::{FeedforwardNet, Matrix};

/// Width of the treatment condition appended to noise and data rows.
pub const CONDITION_WIDTH: usize = 2;

/// One-hot treatment code: `[1, 0]` for treated, `[0, 1]` for control.
pub fn condition_code(group: Group) -> [f64; 2] {
    match group {
        Group::Treated => [1.0, 0.0],
        Group::Control => [0.0, 1.0],
    }
}

/// Anything that can produce synthetic rows for one treatment group.
pub trait SyntheticSource {
    fn synthesize(&self, group: Group, n: usize, seed: u64) -> Result<ObservationalDataset>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub(crate) generator: FeedforwardNet,
    pub(crate) discriminator: FeedforwardNet,
    pub(crate) noise_dim: usize,
    pub(crate) codec: RowCodec,
    /// Covariate names followed by the outcome name.
    pub(crate) column_names: Vec<String>,
    pub(crate) seed: u64,
}

const SYNTH_CHUNK: usize = 8192;

impl GanModel {
    pub(crate) fn new(
        generator: FeedforwardNet,
        discriminator: FeedforwardNet,
        noise_dim: usize,
        codec: RowCodec,
        column_names: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let model = GanModel {
            generator,
            discriminator,
            noise_dim,
            codec,
            column_names,
            seed,
        };
        model.check_dimensions()?;
        Ok(model)
    }

    pub(crate) fn check_dimensions(&self) -> Result<()> {
        let width = self.codec.encoded_width();
        let mismatch = |what: String| Err(Error::Model(format!("dimension mismatch: {what}")));
        if self.column_names.len() != self.codec.data_dim() {
            return mismatch(format!(
                "{} column names for {} data columns",
                self.column_names.len(),
                self.codec.data_dim()
            ));
        }
        if self.generator.input_dim() != self.noise_dim + CONDITION_WIDTH {
            return mismatch(format!(
                "generator takes {} inputs, noise_dim {} + condition {}",
                self.generator.input_dim(),
                self.noise_dim,
                CONDITION_WIDTH
            ));
        }
        if self.generator.output_dim() != width {
            return mismatch(format!(
                "generator emits {} values, encoded row width is {width}",
                self.generator.output_dim()
            ));
        }
        if self.discriminator.input_dim() != width + CONDITION_WIDTH
            || self.discriminator.output_dim() != 1
        {
            return mismatch(format!(
                "discriminator is {}→{}, expected {}→1",
                self.discriminator.input_dim(),
                self.discriminator.output_dim(),
                width + CONDITION_WIDTH
            ));
        }
        for enc in &self.codec.columns {
            if let ColumnEncoding::Continuous { std, .. } = enc {
                if !(*std > 0.0) {
                    return Err(Error::Model("normalization std must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn generator(&self) -> &FeedforwardNet {
        &self.generator
    }

    pub fn discriminator(&self) -> &FeedforwardNet {
        &self.discriminator
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Covariates plus outcome.
    pub fn data_dim(&self) -> usize {
        self.codec.data_dim()
    }

    pub fn covariate_dim(&self) -> usize {
        self.data_dim() - 1
    }

    pub fn codec(&self) -> &RowCodec {
        &self.codec
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn training_seed(&self) -> u64 {
        self.seed
    }

    /// Generator input rows `[z, d̄]` with fresh Gaussian noise.
    pub(crate) fn generator_input<R: rand::Rng>(&self, groups: &[Group], rng: &mut R) -> Matrix {
        let width = self.noise_dim + CONDITION_WIDTH;
        let mut m = Matrix::zeros(groups.len(), width);
        for (r, &g) in groups.iter().enumerate() {
            let row = m.row_mut(r);
            for v in &mut row[..self.noise_dim] {
                *v = StandardNormal.sample(rng);
            }
            row[self.noise_dim..].copy_from_slice(&condition_code(g));
        }
        m
    }

    /// Discriminator scores `D(row, d̄)` for already-encoded rows.
    pub fn discriminate(&self, encoded: &Matrix, groups: &[Group]) -> Result<Vec<f64>> {
        let input = with_condition(encoded, groups)?;
        Ok(self.discriminator.forward(&input)?.into_vec())
    }

    /// Draws `n` rows for `group` in data space.
    pub fn synthesize(&self, group: Group, n: usize, seed: u64) -> Result<ObservationalDataset> {
        if n == 0 {
            return Err(Error::config("cannot synthesize zero rows"));
        }
        let mut rng = crate::rng::seeded(seed, 200 + group.flag() as u64);
        let q = self.covariate_dim();
        let mut cov = Vec::with_capacity(n * q);
        let mut ys = Vec::with_capacity(n);
        let mut decoded = vec![0.0; q + 1];
        let mut done = 0;
        while done < n {
            let m = SYNTH_CHUNK.min(n - done);
            let input = self.generator_input(&vec![group; m], &mut rng);
            let raw = self.generator.forward(&input)?;
            for r in 0..m {
                self.codec.decode_row(raw.row(r), &mut decoded);
                cov.extend_from_slice(&decoded[..q]);
                ys.push(decoded[q]);
            }
            done += m;
        }
        let (names, outcome) = self.column_names.split_at(q);
        let data = ObservationalDataset::single_group(
            Matrix::from_vec(n, q, cov)?,
            ys,
            group,
            names.to_vec(),
        )
        .map_err(|e| Error::Training(format!("generator produced invalid rows: {e}")))?;
        Ok(data.with_outcome_name(outcome[0].clone()))
    }

    /// Distance between synthetic and real per-group column moments, in units
    /// of each column's real standard deviation: the L2 norm over groups and
    /// columns of the mean and standard-deviation gaps.
    pub fn moment_distance(
        &self,
        real: &ObservationalDataset,
        n_synth: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut total = 0.0;
        for group in Group::BOTH {
            let real_g = real.group(group);
            if real_g.is_empty() {
                continue;
            }
            let synth = self.synthesize(group, n_synth, seed)?;
            for c in 0..=real.dim() {
                let (rm, rs) = mean_std(&real_g.data_column(c));
                let (sm, ss) = mean_std(&synth.data_column(c));
                let scale = if rs > 0.0 { rs } else { 1.0 };
                total += ((sm - rm) / scale).powi(2) + ((ss - rs) / scale).powi(2);
            }
        }
        Ok(total.sqrt())
    }
}

impl SyntheticSource for GanModel {
    fn synthesize(&self, group: Group, n: usize, seed: u64) -> Result<ObservationalDataset> {
        GanModel::synthesize(self, group, n, seed)
    }
}

pub(crate) fn with_condition(encoded: &Matrix, groups: &[Group]) -> Result<Matrix> {
    if encoded.rows() != groups.len() {
        return Err(Error::shape(format!(
            "{} rows but {} group labels",
            encoded.rows(),
            groups.len()
        )));
    }
    let codes: Vec<f64> = groups.iter().flat_map(|&g| condition_code(g)).collect();
    encoded.hstack(&Matrix::from_vec(groups.len(), CONDITION_WIDTH, codes)?)
}
