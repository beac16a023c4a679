//! Logistic propensity model fitted by Newton–Raphson (IRLS).

use nalgebra::{DMatrix, DVector};

use crate::datasets::ObservationalDataset;
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-10;
/// Fitted probabilities this close to 0 or 1 on every row signal separation.
const SEPARATION_MARGIN: f64 = 1e-8;
const MAX_COEFFICIENT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    /// Intercept followed by one slope per covariate.
    pub coefficients: Vec<f64>,
    /// Asymptotic standard errors from the inverse observed information.
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl PropensityModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    /// `P(d = 1 | x)`, strictly inside (0, 1).
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    pub fn scores(&self, data: &ObservationalDataset) -> Result<Vec<f64>> {
        if data.dim() + 1 != self.coefficients.len() {
            return Err(Error::shape(format!(
                "model has {} slopes, data has {} covariates",
                self.coefficients.len() - 1,
                data.dim()
            )));
        }
        Ok(data
            .covariates()
            .iter_rows()
            .map(|r| self.score(r))
            .collect())
    }
}

/// Maximum-likelihood logistic regression of treatment on covariates.
pub fn fit_propensity(data: &ObservationalDataset) -> Result<PropensityModel> {
    if !data.has_both_groups() {
        return Err(Error::Estimation(
            "propensity fit needs both treated and control rows".into(),
        ));
    }
    let p = data.dim() + 1;
    let rows: Vec<&[f64]> = data.covariates().iter_rows().collect();
    let d: Vec<f64> = data.treatment().iter().map(|&t| t as f64).collect();
    let share = d.iter().sum::<f64>() / d.len() as f64;
    let mut beta = DVector::<f64>::zeros(p);
    beta[0] = (share / (1.0 - share)).ln();

    let design = |r: &[f64], j: usize| if j == 0 { 1.0 } else { r[j - 1] };
    let mut log_lik = f64::NEG_INFINITY;
    for iteration in 1..=MAX_ITERATIONS {
        let mut info = DMatrix::<f64>::zeros(p, p);
        let mut grad = DVector::<f64>::zeros(p);
        let mut ll = 0.0;
        let mut separated = true;
        for (r, &y) in rows.iter().zip(&d) {
            let eta = beta[0] + (1..p).map(|j| beta[j] * r[j - 1]).sum::<f64>();
            let mu = sigmoid(eta);
            // log-likelihood via softplus for stability
            ll += y * eta
                - if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
            if (mu - y).abs() > SEPARATION_MARGIN {
                separated = false;
            }
            let w = mu * (1.0 - mu);
            for a in 0..p {
                let xa = design(r, a);
                grad[a] += (y - mu) * xa;
                for b in a..p {
                    info[(a, b)] += w * xa * design(r, b);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        if separated || beta.iter().any(|b| b.abs() > MAX_COEFFICIENT) {
            return Err(Error::Estimation(
                "propensity fit failed: treatment is perfectly separable by the covariates".into(),
            ));
        }
        let chol = info.clone().cholesky().ok_or_else(|| {
            Error::Estimation(
                "propensity fit failed: information matrix is singular (collinear covariates?)"
                    .into(),
            )
        })?;
        let step = chol.solve(&grad);
        beta += &step;
        let converged = step.amax() < TOLERANCE * (1.0 + beta.amax())
            || (ll - log_lik).abs() < 1e-12 * (1.0 + ll.abs());
        log_lik = ll;
        if converged {
            let cov = chol.inverse();
            let final_ll = rows
                .iter()
                .zip(&d)
                .map(|(r, &y)| {
                    let eta = beta[0] + (1..p).map(|j| beta[j] * r[j - 1]).sum::<f64>();
                    y * eta
                        - if eta > 0.0 {
                            eta + (-eta).exp().ln_1p()
                        } else {
                            eta.exp().ln_1p()
                        }
                })
                .sum();
            return Ok(PropensityModel {
                coefficients: beta.iter().copied().collect(),
                std_errors: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
                log_likelihood: final_ll,
                iterations: iteration,
            });
        }
    }
    Err(Error::Estimation(format!(
        "propensity fit did not converge in {MAX_ITERATIONS} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn logistic_data(b0: f64, b1: f64, n: usize, seed: u64) -> ObservationalDataset {
        let mut rng = seeded(seed, 0);
        let mut xs = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let p = sigmoid(b0 + b1 * x);
            xs.push(x);
            d.push(u8::from(rng.gen::<f64>() < p));
        }
        ObservationalDataset::with_default_names(Matrix::column_vector(&xs), vec![0.0; n], d)
            .unwrap()
    }

    #[test]
    fn recovers_known_coefficients() {
        let m = fit_propensity(&logistic_data(-0.5, 1.2, 20_000, 3)).unwrap();
        assert!(
            (m.coefficients[0] + 0.5).abs() < 3.0 * m.std_errors[0],
            "{m:?}"
        );
        assert!(
            (m.coefficients[1] - 1.2).abs() < 3.0 * m.std_errors[1],
            "{m:?}"
        );
    }

    #[test]
    fn independent_treatment_gives_flat_scores() {
        // every block of four rows shares one x and holds one treated row, so
        // treatment is exactly independent of x and the MLE slope is zero
        let n = 4_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| ((i / 4) as f64 * 0.37).sin() * 2.0)
            .collect();
        let d: Vec<u8> = (0..n).map(|i| u8::from(i % 4 == 0)).collect();
        let data =
            ObservationalDataset::with_default_names(Matrix::column_vector(&xs), vec![0.0; n], d)
                .unwrap();
        let m = fit_propensity(&data).unwrap();
        assert!(m.coefficients[1].abs() < 1e-9, "{m:?}");
        assert!((m.coefficients[0] - (1.0f64 / 3.0).ln()).abs() < 1e-9);
        for s in m.scores(&data).unwrap() {
            assert!((s - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn near_threshold_assignment_gives_large_slope() {
        let n = 2_000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 - 1000.0) / 100.0).collect();
        let mut d: Vec<u8> = xs.iter().map(|&x| u8::from(x > 0.0)).collect();
        // a little label noise keeps the likelihood bounded
        for i in [100, 700, 1300, 1900] {
            d[i] = 1 - d[i];
        }
        let data =
            ObservationalDataset::with_default_names(Matrix::column_vector(&xs), vec![0.0; n], d)
                .unwrap();
        let m = fit_propensity(&data).unwrap();
        assert!(m.coefficients[1] > 0.5, "{m:?}");
    }

    #[test]
    fn perfect_separation_is_an_error() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let d: Vec<u8> = xs.iter().map(|&x| u8::from(x >= 20.0)).collect();
        let data =
            ObservationalDataset::with_default_names(Matrix::column_vector(&xs), vec![0.0; 40], d)
                .unwrap();
        assert!(matches!(fit_propensity(&data), Err(Error::Estimation(_))));
    }
}
