//! Benchmark generators checked by regression and moment oracles.

mod common;

use ganatt::datasets::{generate_linear, mean_std, Group, LinearBenchmarkSpec};
use nalgebra::{Matrix3, Vector3};

#[test]
fn least_squares_recovers_the_linear_coefficients() {
    let spec = LinearBenchmarkSpec {
        alpha: 0.7,
        beta: -1.3,
        gamma: 2.0,
        sigma_eps: 0.5,
        n0: 20_000,
        n1: 20_000,
        seed: 31,
        ..LinearBenchmarkSpec::default()
    };
    let data = generate_linear(&spec).unwrap();
    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    for i in 0..data.len() {
        let row = Vector3::new(1.0, data.covariates().get(i, 0), data.treatment()[i] as f64);
        xtx += row * row.transpose();
        xty += row * data.outcomes()[i];
    }
    let inv = xtx.try_inverse().unwrap();
    let coef = inv * xty;
    let rss: f64 = (0..data.len())
        .map(|i| {
            let fit = coef[0]
                + coef[1] * data.covariates().get(i, 0)
                + coef[2] * data.treatment()[i] as f64;
            (data.outcomes()[i] - fit).powi(2)
        })
        .sum();
    let sigma2 = rss / (data.len() - 3) as f64;
    for (j, truth) in [spec.alpha, spec.beta, spec.gamma].into_iter().enumerate() {
        let se = (sigma2 * inv[(j, j)]).sqrt();
        assert!(
            (coef[j] - truth).abs() <= 3.0 * se,
            "coefficient {j}: {} vs {truth} (se {se})",
            coef[j]
        );
    }
    assert!((sigma2.sqrt() - spec.sigma_eps).abs() < 0.01);
}

#[test]
fn linear_covariate_moments() {
    let spec = LinearBenchmarkSpec {
        n0: 40_000,
        n1: 40_000,
        seed: 32,
        ..LinearBenchmarkSpec::default()
    };
    let data = generate_linear(&spec).unwrap();
    for (g, mu, sd) in [
        (Group::Control, spec.mu0, spec.sigma_x0),
        (Group::Treated, spec.mu1, spec.sigma_x1),
    ] {
        let x = data.group(g).covariates().column(0);
        let n = x.len() as f64;
        let (m, s) = mean_std(&x);
        assert!((m - mu).abs() <= 4.0 * sd / n.sqrt(), "{g:?} mean {m}");
        // variance of the sample variance of a normal: 2σ⁴/(n − 1)
        let var_se = (2.0 * sd.powi(4) / (n - 1.0)).sqrt();
        assert!(
            (s * s - sd * sd).abs() <= 4.0 * var_se,
            "{g:?} variance {}",
            s * s
        );
    }
}

#[test]
fn same_seed_same_bytes() {
    let spec = LinearBenchmarkSpec {
        n0: 500,
        n1: 700,
        seed: 3,
        ..LinearBenchmarkSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ganatt::datasets::write_csv(&generate_linear(&spec).unwrap(), &a).unwrap();
    ganatt::datasets::write_csv(&generate_linear(&spec).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
