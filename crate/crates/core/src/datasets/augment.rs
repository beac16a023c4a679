//! Input-noise augmentation and group subsampling.

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use super::{mean_std, Group, ObservationalDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::seeded as stream_rng;

/// Scale of the Gaussian noise added to every covariate and the outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseScale {
    /// The same standard deviation for every column.
    Absolute(f64),
    /// A multiple of each column's sample standard deviation.
    RelativeToColumnStd(f64),
}

impl Default for NoiseScale {
    fn default() -> Self {
        NoiseScale::RelativeToColumnStd(0.1)
    }
}

/// Returns `factor` copies of every row: the original, unperturbed, followed by
/// `factor − 1` copies with independent zero-mean Gaussian noise. Treatment
/// flags are preserved.
pub fn augment_with_noise(
    data: &ObservationalDataset,
    factor: usize,
    noise: NoiseScale,
    seed: u64,
) -> Result<ObservationalDataset> {
    if data.is_empty() {
        return Err(Error::data("cannot augment an empty dataset"));
    }
    if factor == 0 {
        return Err(Error::config("augmentation factor must be at least 1"));
    }
    let q = data.dim();
    let sigmas: Vec<f64> = match noise {
        NoiseScale::Absolute(s) => vec![s; q + 1],
        NoiseScale::RelativeToColumnStd(k) => (0..=q)
            .map(|c| k * mean_std(&data.data_column(c)).1)
            .collect(),
    };
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::config("noise scale must be finite and non-negative"));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = stream_rng(seed, 0);
    let n = data.len();
    let total = n * factor;
    let mut cov = Vec::with_capacity(total * q);
    let mut ys = Vec::with_capacity(total);
    let mut flags = Vec::with_capacity(total);
    for i in 0..n {
        let row = data.covariates().row(i);
        for copy in 0..factor {
            let perturb = copy > 0;
            for (c, &x) in row.iter().enumerate() {
                let e = if perturb {
                    sigmas[c] * unit.sample(&mut rng)
                } else {
                    0.0
                };
                cov.push(x + e);
            }
            let e = if perturb {
                sigmas[q] * unit.sample(&mut rng)
            } else {
                0.0
            };
            ys.push(data.outcomes()[i] + e);
            flags.push(data.treatment()[i]);
        }
    }
    Ok(ObservationalDataset::new(
        Matrix::from_vec(total, q, cov)?,
        ys,
        flags,
        data.column_names().to_vec(),
    )?
    .with_outcome_name(data.outcome_name()))
}

/// Keeps `n` randomly chosen rows of `group` and every row of the other group.
pub fn subsample_group(
    data: &ObservationalDataset,
    group: Group,
    n: usize,
    seed: u64,
) -> Result<ObservationalDataset> {
    let members = data.group_indices(group);
    if n > members.len() {
        return Err(Error::config(format!(
            "cannot keep {n} of {} rows in the {group:?} group",
            members.len()
        )));
    }
    let mut rng = stream_rng(seed, 3);
    let mut keep: Vec<usize> = sample(&mut rng, members.len(), n)
        .into_iter()
        .map(|k| members[k])
        .collect();
    keep.extend(data.group_indices(match group {
        Group::Control => Group::Treated,
        Group::Treated => Group::Control,
    }));
    keep.sort_unstable();
    Ok(data.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_linear, LinearBenchmarkSpec};

    fn data(n: usize) -> ObservationalDataset {
        generate_linear(&LinearBenchmarkSpec {
            n0: n,
            n1: n,
            seed: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn factor_one_is_identity() {
        let d = data(50);
        assert_eq!(
            augment_with_noise(&d, 1, NoiseScale::default(), 1).unwrap(),
            d
        );
    }

    #[test]
    fn zero_noise_makes_exact_copies() {
        let d = data(20);
        let a = augment_with_noise(&d, 3, NoiseScale::Absolute(0.0), 1).unwrap();
        assert_eq!(a.len(), 120);
        for i in 0..d.len() {
            for k in 0..3 {
                let j = 3 * i + k;
                assert_eq!(a.covariates().row(j), d.covariates().row(i));
                assert_eq!(a.outcomes()[j], d.outcomes()[i]);
                assert_eq!(a.treatment()[j], d.treatment()[i]);
            }
        }
    }

    #[test]
    fn originals_kept_and_flags_preserved() {
        let d = data(30);
        let a = augment_with_noise(&d, 4, NoiseScale::Absolute(0.5), 2).unwrap();
        for i in 0..d.len() {
            assert_eq!(a.outcomes()[4 * i], d.outcomes()[i]);
            assert_ne!(a.outcomes()[4 * i + 1], d.outcomes()[i]);
            assert!(a.treatment()[4 * i..4 * i + 4]
                .iter()
                .all(|&t| t == d.treatment()[i]));
        }
    }

    #[test]
    fn errors() {
        let d = data(5);
        assert!(matches!(
            augment_with_noise(&d.select(&[]), 2, NoiseScale::default(), 0),
            Err(Error::Data(_))
        ));
        assert!(augment_with_noise(&d, 0, NoiseScale::default(), 0).is_err());
        assert!(augment_with_noise(&d, 2, NoiseScale::Absolute(-1.0), 0).is_err());
    }

    #[test]
    fn large_augmentation_preserves_means() {
        let treated = data(1_000).group(Group::Treated);
        let a = augment_with_noise(&treated, 100, NoiseScale::default(), 7).unwrap();
        assert_eq!(a.len(), 100_000);
        for c in 0..=treated.dim() {
            let (m0, sd0) = mean_std(&treated.data_column(c));
            let (m1, _) = mean_std(&a.data_column(c));
            // noise is independent of the rows, so the augmented mean departs
            // from the original by noise alone: sd 0.1·sd0/√(99·1000)
            let se = 0.1 * sd0 / (99_000f64).sqrt();
            assert!(
                (m1 - m0).abs() <= 3.0 * se.max(1e-12),
                "column {c}: {m1} vs {m0}"
            );
        }
    }

    #[test]
    fn subsample_keeps_other_group() {
        let d = data(100);
        let s = subsample_group(&d, Group::Treated, 10, 1).unwrap();
        assert_eq!(s.group_size(Group::Treated), 10);
        assert_eq!(s.group_size(Group::Control), 100);
        assert!(subsample_group(&d, Group::Treated, 101, 1).is_err());
    }
}
