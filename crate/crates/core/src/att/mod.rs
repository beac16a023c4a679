//! Average treatment effect on the treated: `Δy(x)` averaged over the
//! treated covariates, plus the end-to-end pipeline driver.

mod pipeline;

pub use pipeline::{
    fidelity_csv, run_pipeline, run_with_source, summary, AugmentConfig, OracleSource,
    PipelineArtifacts, PipelineConfig, PipelineOutput, StageTimings, SUPPORT_WARNING_FRACTION,
};

use statrs::distribution::{ContinuousCDF, Normal};

use crate::cate::CateFunction;
use crate::datasets::mean_std;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AttEstimate {
    pub att: f64,
    /// Standard error of the mean of the per-sample effects.
    pub std_err: f64,
    /// Evaluation rows whose effect was defined.
    pub n_used: usize,
    /// Evaluation rows outside common support; excluded, never imputed.
    pub n_dropped: usize,
    pub per_sample: Option<Vec<f64>>,
}

impl AttEstimate {
    /// Summarizes per-sample effects; `dropped` rows had none.
    pub fn from_effects(effects: Vec<f64>, dropped: usize, keep: bool) -> Result<Self> {
        if effects.is_empty() {
            return Err(Error::Estimation(
                "no common support: every treated sample was dropped".into(),
            ));
        }
        let (att, sd) = mean_std(&effects);
        let n = effects.len();
        Ok(AttEstimate {
            att,
            std_err: if n > 1 { sd / (n as f64).sqrt() } else { 0.0 },
            n_used: n,
            n_dropped: dropped,
            per_sample: keep.then_some(effects),
        })
    }

    /// Two-sided Gaussian interval at `level` (e.g. 0.95).
    pub fn confidence_interval(&self, level: f64) -> Result<(f64, f64)> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::config(format!(
                "confidence level {level} must lie in (0, 1)"
            )));
        }
        let z = Normal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(0.5 + level / 2.0);
        Ok((self.att - z * self.std_err, self.att + z * self.std_err))
    }
}

/// Averages `Δy` over the rows of `treated_covariates`.
pub fn estimate_att(
    cate: &CateFunction,
    treated_covariates: &Matrix,
    keep_per_sample: bool,
) -> Result<AttEstimate> {
    let mut effects = Vec::with_capacity(treated_covariates.rows());
    let mut dropped = 0;
    for v in cate.evaluate_rows(treated_covariates)? {
        match v {
            Some(e) => effects.push(e),
            None => dropped += 1,
        }
    }
    AttEstimate::from_effects(effects, dropped, keep_per_sample)
}
