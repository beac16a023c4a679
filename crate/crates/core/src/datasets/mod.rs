//! Observational datasets, benchmark generators with known treatment effects,
//! CSV ingestion and noise augmentation.

mod augment;
mod benchmark;
mod csv_io;

pub use augment::{augment_with_noise, subsample_group, NoiseScale};
pub use benchmark::{
    generate_linear, generate_nonlinear, monte_carlo_ground_truth, BenchmarkSpec, GroundTruth,
    LinearBenchmarkSpec, NonlinearBenchmarkSpec,
};
pub use csv_io::{load_csv, write_csv, CsvSchema, LoadReport};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Treatment group of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Control,
    Treated,
}

impl Group {
    pub fn flag(self) -> u8 {
        match self {
            Group::Control => 0,
            Group::Treated => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(Group::Control),
            1 => Ok(Group::Treated),
            other => Err(Error::data(format!("treatment flag {other} is not 0 or 1"))),
        }
    }

    pub fn index(self) -> usize {
        self.flag() as usize
    }

    pub const BOTH: [Group; 2] = [Group::Control, Group::Treated];
}

/// Rows of covariates `x`, outcome `y` and treatment flag `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    covariates: Matrix,
    outcomes: Vec<f64>,
    treatment: Vec<u8>,
    column_names: Vec<String>,
    outcome_name: String,
}

impl ObservationalDataset {
    pub fn new(
        covariates: Matrix,
        outcomes: Vec<f64>,
        treatment: Vec<u8>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.rows();
        if outcomes.len() != n || treatment.len() != n {
            return Err(Error::shape(format!(
                "{n} covariate rows, {} outcomes, {} treatment flags",
                outcomes.len(),
                treatment.len()
            )));
        }
        if column_names.len() != covariates.cols() {
            return Err(Error::shape(format!(
                "{} column names for {} covariates",
                column_names.len(),
                covariates.cols()
            )));
        }
        if let Some(i) = treatment.iter().position(|&d| d > 1) {
            return Err(Error::data(format!(
                "row {i}: treatment flag {} is not 0 or 1",
                treatment[i]
            )));
        }
        if let Some(i) = outcomes.iter().position(|y| !y.is_finite()) {
            return Err(Error::data(format!("row {i}: outcome is not finite")));
        }
        if !covariates.is_finite() {
            return Err(Error::data("covariates contain non-finite values"));
        }
        Ok(ObservationalDataset {
            covariates,
            outcomes,
            treatment,
            column_names,
            outcome_name: "y".into(),
        })
    }

    /// Dataset with generated column names `x1..xq`.
    pub fn with_default_names(
        covariates: Matrix,
        outcomes: Vec<f64>,
        treatment: Vec<u8>,
    ) -> Result<Self> {
        let names = default_names(covariates.cols());
        Self::new(covariates, outcomes, treatment, names)
    }

    /// Every row in one group.
    pub fn single_group(
        covariates: Matrix,
        outcomes: Vec<f64>,
        group: Group,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.rows();
        Self::new(covariates, outcomes, vec![group.flag(); n], column_names)
    }

    pub fn with_outcome_name(mut self, name: impl Into<String>) -> Self {
        self.outcome_name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Covariate dimension `q`.
    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn group_of(&self, row: usize) -> Group {
        if self.treatment[row] == 1 {
            Group::Treated
        } else {
            Group::Control
        }
    }

    pub fn group_indices(&self, group: Group) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.treatment[i] == group.flag())
            .collect()
    }

    pub fn group_size(&self, group: Group) -> usize {
        self.treatment
            .iter()
            .filter(|&&d| d == group.flag())
            .count()
    }

    pub fn has_both_groups(&self) -> bool {
        self.group_size(Group::Control) > 0 && self.group_size(Group::Treated) > 0
    }

    pub fn select(&self, rows: &[usize]) -> ObservationalDataset {
        ObservationalDataset {
            covariates: self.covariates.select_rows(rows),
            outcomes: rows.iter().map(|&i| self.outcomes[i]).collect(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            column_names: self.column_names.clone(),
            outcome_name: self.outcome_name.clone(),
        }
    }

    /// Rows belonging to `group`, in original order.
    pub fn group(&self, group: Group) -> ObservationalDataset {
        self.select(&self.group_indices(group))
    }

    /// Appends the rows of `other`, which must share the covariate layout.
    pub fn concat(&self, other: &ObservationalDataset) -> Result<ObservationalDataset> {
        if self.dim() != other.dim() {
            return Err(Error::shape(format!(
                "cannot concatenate {}-covariate and {}-covariate datasets",
                self.dim(),
                other.dim()
            )));
        }
        let mut outcomes = self.outcomes.clone();
        outcomes.extend_from_slice(&other.outcomes);
        let mut treatment = self.treatment.clone();
        treatment.extend_from_slice(&other.treatment);
        Ok(ObservationalDataset {
            covariates: self.covariates.vstack(&other.covariates)?,
            outcomes,
            treatment,
            column_names: self.column_names.clone(),
            outcome_name: self.outcome_name.clone(),
        })
    }

    /// Value of data column `c`, where columns `0..q` are covariates and `q` is the outcome.
    pub fn data_value(&self, row: usize, c: usize) -> f64 {
        if c < self.dim() {
            self.covariates.get(row, c)
        } else {
            self.outcomes[row]
        }
    }

    /// Data column `c` (covariates then outcome).
    pub fn data_column(&self, c: usize) -> Vec<f64> {
        if c < self.dim() {
            self.covariates.column(c)
        } else {
            self.outcomes.clone()
        }
    }

    /// Names of covariates followed by the outcome.
    pub fn data_column_names(&self) -> Vec<String> {
        let mut names = self.column_names.clone();
        names.push(self.outcome_name.clone());
        names
    }
}

pub(crate) fn default_names(q: usize) -> Vec<String> {
    (1..=q).map(|i| format!("x{i}")).collect()
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
