//! Marginal fidelity of synthetic data against real data.
//!
//! Two per-column scores: the inverted Kolmogorov–Smirnov statistic `1 − D`
//! (1 means identical empirical CDFs) and a histogram estimate of the
//! continuous KL divergence `KL(synthetic ‖ real)`.

use crate::datasets::ObservationalDataset;
use crate::error::{Error, Result};

/// Additive floor for empty histogram bins.
pub const KL_SMOOTHING: f64 = 1e-10;
pub const DEFAULT_KL_BINS: usize = 100;

fn sorted_finite(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::data(format!("{what} column is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("{what} column has non-finite values")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov–Smirnov distance `sup_t |F_a(t) − F_b(t)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted_finite(a, "first")?;
    let b = sorted_finite(b, "second")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        // step past every sample equal to t so ties are evaluated after the jump
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// `1 − D`, in `[0, 1]`.
pub fn inverted_ks(real: &[f64], synth: &[f64]) -> Result<f64> {
    Ok(1.0 - ks_statistic(real, synth)?)
}

/// `KL(p̂_synth ‖ p̂_real)` over `bins` equal-width bins spanning both samples.
///
/// Empty bins get probability [`KL_SMOOTHING`] before renormalization.
pub fn continuous_kl(real: &[f64], synth: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::config(format!(
            "KL needs at least 2 bins, got {bins}"
        )));
    }
    let real = sorted_finite(real, "real")?;
    let synth = sorted_finite(synth, "synthetic")?;
    let lo = real[0].min(synth[0]);
    let hi = real[real.len() - 1].max(synth[synth.len() - 1]);
    let p = histogram(&synth, lo, hi, bins);
    let q = histogram(&real, lo, hi, bins);
    let kl: f64 = p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum();
    Ok(kl.max(0.0))
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = hi - lo;
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width) * bins as f64).floor() as usize
        } else {
            0
        };
        counts[k.min(bins - 1)] += 1.0;
    }
    let n = values.len() as f64;
    for c in &mut counts {
        *c = if *c > 0.0 { *c / n } else { KL_SMOOTHING };
    }
    let total: f64 = counts.iter().sum();
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnFidelity {
    pub name: String,
    pub inverted_ks: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub columns: Vec<ColumnFidelity>,
    pub real_size: usize,
    pub synthetic_size: usize,
}

impl FidelityReport {
    /// Scores every covariate and the outcome.
    pub fn compare(
        real: &ObservationalDataset,
        synth: &ObservationalDataset,
        bins: usize,
    ) -> Result<Self> {
        if real.dim() != synth.dim() {
            return Err(Error::shape(format!(
                "real data has {} covariates, synthetic has {}",
                real.dim(),
                synth.dim()
            )));
        }
        let names = real.data_column_names();
        let columns = (0..=real.dim())
            .map(|c| {
                let r = real.data_column(c);
                let s = synth.data_column(c);
                Ok(ColumnFidelity {
                    name: names[c].clone(),
                    inverted_ks: inverted_ks(&r, &s)?,
                    kl: continuous_kl(&r, &s, bins)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FidelityReport {
            columns,
            real_size: real.len(),
            synthetic_size: synth.len(),
        })
    }

    /// Unweighted mean over columns.
    pub fn mean_inverted_ks(&self) -> f64 {
        self.columns.iter().map(|c| c.inverted_ks).sum::<f64>() / self.columns.len() as f64
    }

    pub fn mean_kl(&self) -> f64 {
        self.columns.iter().map(|c| c.kl).sum::<f64>() / self.columns.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ks_hand_example() {
        // ECDF gaps at each merged point:
        // t=1: |1/4 − 0|, t=1.5: |1/4 − 1/2|, t=2: |2/4 − 1/2|,
        // t=2.5: |2/4 − 1|, t=3: |3/4 − 1|, t=4: |1 − 1|  → sup = 1/2
        let d = ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5]).unwrap();
        assert_eq!(d, 0.5);
        assert_eq!(
            inverted_ks(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5]).unwrap(),
            0.5
        );
    }

    #[test]
    fn ks_self_and_disjoint() {
        let x = [0.3, -1.0, 2.0, 2.0, 5.5];
        assert_eq!(inverted_ks(&x, &x).unwrap(), 1.0);
        assert_eq!(inverted_ks(&[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn ks_ties_across_samples() {
        assert_eq!(
            ks_statistic(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(),
            1.0 / 3.0
        );
    }

    #[test]
    fn empty_columns_rejected() {
        assert!(inverted_ks(&[], &[1.0]).is_err());
        assert!(continuous_kl(&[1.0], &[], 10).is_err());
        assert!(continuous_kl(&[1.0], &[2.0], 1).is_err());
    }

    #[test]
    fn kl_self_is_zero_and_direction_matters() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(continuous_kl(&x, &x, 50).unwrap(), 0.0);
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let b: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(3)).collect();
        let ab = continuous_kl(&a, &b, 20).unwrap();
        let ba = continuous_kl(&b, &a, 20).unwrap();
        assert!((ab - ba).abs() > 1e-3, "{ab} vs {ba}");
    }

    #[test]
    fn kl_grows_with_separation() {
        let base: Vec<f64> = (0..2000)
            .map(|i| ((i as f64 + 0.5) / 2000.0 - 0.5) * 2.0)
            .collect();
        let shifted = |s: f64| base.iter().map(|v| v + s).collect::<Vec<_>>();
        let k1 = continuous_kl(&base, &shifted(0.5), 50).unwrap();
        let k2 = continuous_kl(&base, &shifted(1.0), 50).unwrap();
        let k3 = continuous_kl(&base, &shifted(10.0), 50).unwrap();
        assert!(k1 < k2 && k2 < k3, "{k1} {k2} {k3}");
    }

    proptest! {
        #[test]
        fn ks_invariant_under_monotone_maps(
            a in proptest::collection::vec(-50.0f64..50.0, 1..40),
            b in proptest::collection::vec(-50.0f64..50.0, 1..40),
        ) {
            let f = |v: &f64| (v / 10.0).exp() * 3.0 - 1.0;
            let d = ks_statistic(&a, &b).unwrap();
            let fa: Vec<f64> = a.iter().map(f).collect();
            let fb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(d, ks_statistic(&fa, &fb).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn kl_is_non_negative(
            a in proptest::collection::vec(-5.0f64..5.0, 1..60),
            b in proptest::collection::vec(-5.0f64..5.0, 1..60),
        ) {
            prop_assert!(continuous_kl(&a, &b, 10).unwrap() >= 0.0);
        }
    }
}
