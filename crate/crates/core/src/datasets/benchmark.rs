//! Data-generating processes with a known ATT.
//!
//! The linear process draws `x_d ~ N(μ_d, σ_xd²)` and
//! `y_d = α + β·x_d + γ·d + ε`, so the ATT is exactly `γ` however far apart the
//! two covariate laws are.
//!
//! The nonlinear process is two-dimensional:
//!
//! ```text
//! y0 = α·s(W·X0) + ε,   y1 = β·s(W·X1) + t(X1) + ε,
//! s(a) = (1 − e^(−a)) / (1 + e^(−a)),   t(X) = γ·exp(−‖X‖² / (2σ)),
//! X_d ~ N(μ_d, Σ·Σᵀ)
//! ```
//!
//! with `W`, `Σ` and `μ1` drawn once from `U(−1, 1)` and kept in the spec, so a
//! spec file fully determines the process. Its ATT has no closed form and is
//! estimated by Monte Carlo over the treated covariate law.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{default_names, Group, ObservationalDataset};
use crate::error::{Error, Result};
use crate::kv::{join_list, KvFile};
use crate::numerics::Matrix;
use crate::rng::seeded as stream_rng;

/// RNG streams; one seed drives several independent sequences.
const DATA_STREAM: u64 = 0;
const DRAW_STREAM: u64 = 1;
const MONTE_CARLO_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBenchmarkSpec {
    pub alpha: f64,
    pub beta: f64,
    /// The ATT of the process.
    pub gamma: f64,
    pub mu0: f64,
    pub mu1: f64,
    /// Standard deviation of the control covariate.
    pub sigma_x0: f64,
    /// Standard deviation of the treated covariate.
    pub sigma_x1: f64,
    /// Standard deviation of the outcome noise.
    pub sigma_eps: f64,
    pub n0: usize,
    pub n1: usize,
    pub seed: u64,
}

impl Default for LinearBenchmarkSpec {
    /// `x0 ~ N(0, 1)`, `x1 ~ N(1, 2²)`, `ε ~ N(0, 0.1²)`, `α = 0`, `β = 1.5`, `γ = 1`,
    /// 50,000 rows per group.
    fn default() -> Self {
        LinearBenchmarkSpec {
            alpha: 0.0,
            beta: 1.5,
            gamma: 1.0,
            mu0: 0.0,
            mu1: 1.0,
            sigma_x0: 1.0,
            sigma_x1: 2.0,
            sigma_eps: 0.1,
            n0: 50_000,
            n1: 50_000,
            seed: 0,
        }
    }
}

impl LinearBenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n1 == 0 {
            return Err(Error::config(format!(
                "group sizes must be positive (n0 = {}, n1 = {})",
                self.n0, self.n1
            )));
        }
        for (name, v) in [
            ("sigma_x0", self.sigma_x0),
            ("sigma_x1", self.sigma_x1),
            ("sigma_eps", self.sigma_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mu0", self.mu0),
            ("mu1", self.mu1),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// `E[y | x, d]`.
    pub fn conditional_mean(&self, x: f64, group: Group) -> f64 {
        self.alpha + self.beta * x + self.gamma * group.flag() as f64
    }

    /// Draws `n` rows of one group with the given seed, ignoring `n0`/`n1`/`seed`.
    pub fn sample_group(&self, group: Group, n: usize, seed: u64) -> Result<ObservationalDataset> {
        self.validate()?;
        let mut rng = stream_rng(seed, DATA_STREAM + 16 * group.flag() as u64);
        let (mu, sd) = match group {
            Group::Control => (self.mu0, self.sigma_x0),
            Group::Treated => (self.mu1, self.sigma_x1),
        };
        let xdist = Normal::new(mu, sd).map_err(|e| Error::config(e.to_string()))?;
        let edist = Normal::new(0.0, self.sigma_eps).map_err(|e| Error::config(e.to_string()))?;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = xdist.sample(&mut rng);
            let e = edist.sample(&mut rng);
            xs.push(x);
            ys.push(self.conditional_mean(x, group) + e);
        }
        ObservationalDataset::single_group(Matrix::column_vector(&xs), ys, group, default_names(1))
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("kind", "linear");
        kv.set("alpha", self.alpha);
        kv.set("beta", self.beta);
        kv.set("gamma", self.gamma);
        kv.set("mu0", self.mu0);
        kv.set("mu1", self.mu1);
        kv.set("sigma_x0", self.sigma_x0);
        kv.set("sigma_x1", self.sigma_x1);
        kv.set("sigma_eps", self.sigma_eps);
        kv.set("n0", self.n0);
        kv.set("n1", self.n1);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let spec = LinearBenchmarkSpec {
            alpha: kv.parse("alpha")?,
            beta: kv.parse("beta")?,
            gamma: kv.parse("gamma")?,
            mu0: kv.parse("mu0")?,
            mu1: kv.parse("mu1")?,
            sigma_x0: kv.parse("sigma_x0")?,
            sigma_x1: kv.parse("sigma_x1")?,
            sigma_eps: kv.parse("sigma_eps")?,
            n0: kv.parse("n0")?,
            n1: kv.parse("n1")?,
            seed: kv.parse("seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Control rows first, then treated rows.
pub fn generate_linear(spec: &LinearBenchmarkSpec) -> Result<ObservationalDataset> {
    spec.validate()?;
    let control = spec.sample_group(Group::Control, spec.n0, spec.seed)?;
    let treated = spec.sample_group(Group::Treated, spec.n1, spec.seed)?;
    control.concat(&treated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearBenchmarkSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Width of the Gaussian treatment-effect bump.
    pub sigma: f64,
    pub w: [f64; 2],
    /// Covariate mixing matrix; covariates have covariance `Σ·Σᵀ`.
    pub sigma_matrix: [[f64; 2]; 2],
    pub mu0: [f64; 2],
    pub mu1: [f64; 2],
    pub sigma_eps: f64,
    pub n0: usize,
    pub n1: usize,
    pub seed: u64,
}

impl NonlinearBenchmarkSpec {
    /// Draws `W`, `Σ` and `μ1` from `U(−1, 1)` with `seed` and sets `μ0 = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_random_draws(
        alpha: f64,
        beta: f64,
        gamma: f64,
        sigma: f64,
        sigma_eps: f64,
        n0: usize,
        n1: usize,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, DRAW_STREAM);
        let mut u = || rng.gen_range(-1.0..1.0);
        let w = [u(), u()];
        let sigma_matrix = [[u(), u()], [u(), u()]];
        let mu1 = [u(), u()];
        NonlinearBenchmarkSpec {
            alpha,
            beta,
            gamma,
            sigma,
            w,
            sigma_matrix,
            mu0: [0.0, 0.0],
            mu1,
            sigma_eps,
            n0,
            n1,
            seed,
        }
    }

    /// `α = β = 5`, `γ = 1.5`, `σ = 4`, `ε ~ N(0, 0.1²)`, 100,000 rows per group.
    pub fn standard(seed: u64) -> Self {
        Self::with_random_draws(5.0, 5.0, 1.5, 4.0, 0.1, 100_000, 100_000, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n1 == 0 {
            return Err(Error::config(format!(
                "group sizes must be positive (n0 = {}, n1 = {})",
                self.n0, self.n1
            )));
        }
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::config("sigma_eps must be positive"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config("sigma must be positive"));
        }
        if self.mu0 == self.mu1 {
            return Err(Error::config(
                "mu0 and mu1 must differ to create selection bias",
            ));
        }
        let finite = [self.alpha, self.beta, self.gamma]
            .iter()
            .chain(&self.w)
            .chain(self.sigma_matrix.iter().flatten())
            .chain(&self.mu0)
            .chain(&self.mu1)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("benchmark parameters must be finite"));
        }
        Ok(())
    }

    /// Treatment effect at `x`: `t(x) = γ·exp(−‖x‖²/(2σ))`.
    pub fn treatment_effect(&self, x: [f64; 2]) -> f64 {
        let norm2 = x[0] * x[0] + x[1] * x[1];
        self.gamma * (-norm2 / (2.0 * self.sigma)).exp()
    }

    fn squash(&self, x: [f64; 2]) -> f64 {
        let a = self.w[0] * x[0] + self.w[1] * x[1];
        // (1 − e^−a)/(1 + e^−a) = tanh(a/2), without overflow for large |a|
        (a / 2.0).tanh()
    }

    /// `E[y1 | x] − E[y0 | x]`; equals `t(x)` when `α = β`.
    pub fn cate(&self, x: [f64; 2]) -> f64 {
        (self.beta - self.alpha) * self.squash(x) + self.treatment_effect(x)
    }

    pub fn conditional_mean(&self, x: [f64; 2], group: Group) -> f64 {
        match group {
            Group::Control => self.alpha * self.squash(x),
            Group::Treated => self.beta * self.squash(x) + self.treatment_effect(x),
        }
    }

    fn draw_covariate<R: Rng>(&self, group: Group, rng: &mut R) -> [f64; 2] {
        let mu = match group {
            Group::Control => self.mu0,
            Group::Treated => self.mu1,
        };
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let s = &self.sigma_matrix;
        [
            mu[0] + s[0][0] * z0 + s[0][1] * z1,
            mu[1] + s[1][0] * z0 + s[1][1] * z1,
        ]
    }

    pub fn sample_group(&self, group: Group, n: usize, seed: u64) -> Result<ObservationalDataset> {
        self.validate()?;
        let mut rng = stream_rng(seed, DATA_STREAM + 16 * group.flag() as u64);
        let edist = Normal::new(0.0, self.sigma_eps).map_err(|e| Error::config(e.to_string()))?;
        let mut xs = Vec::with_capacity(2 * n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.draw_covariate(group, &mut rng);
            let e = edist.sample(&mut rng);
            xs.extend_from_slice(&x);
            ys.push(self.conditional_mean(x, group) + e);
        }
        ObservationalDataset::single_group(Matrix::from_vec(n, 2, xs)?, ys, group, default_names(2))
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("kind", "nonlinear");
        kv.set("alpha", self.alpha);
        kv.set("beta", self.beta);
        kv.set("gamma", self.gamma);
        kv.set("sigma", self.sigma);
        kv.set("w", join_list(&self.w));
        let flat: Vec<f64> = self.sigma_matrix.iter().flatten().copied().collect();
        kv.set("sigma_matrix", join_list(&flat));
        kv.set("mu0", join_list(&self.mu0));
        kv.set("mu1", join_list(&self.mu1));
        kv.set("sigma_eps", self.sigma_eps);
        kv.set("n0", self.n0);
        kv.set("n1", self.n1);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let pair = |key: &str| -> Result<[f64; 2]> {
            let v: Vec<f64> = kv.parse_list(key)?;
            v.try_into()
                .map_err(|_| Error::config(format!("key '{key}' needs 2 values")))
        };
        let flat: Vec<f64> = kv.parse_list("sigma_matrix")?;
        if flat.len() != 4 {
            return Err(Error::config(
                "key 'sigma_matrix' needs 4 values (row-major 2x2)",
            ));
        }
        let spec = NonlinearBenchmarkSpec {
            alpha: kv.parse("alpha")?,
            beta: kv.parse("beta")?,
            gamma: kv.parse("gamma")?,
            sigma: kv.parse("sigma")?,
            w: pair("w")?,
            sigma_matrix: [[flat[0], flat[1]], [flat[2], flat[3]]],
            mu0: pair("mu0")?,
            mu1: pair("mu1")?,
            sigma_eps: kv.parse("sigma_eps")?,
            n0: kv.parse("n0")?,
            n1: kv.parse("n1")?,
            seed: kv.parse("seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Control rows first, then treated rows.
pub fn generate_nonlinear(spec: &NonlinearBenchmarkSpec) -> Result<ObservationalDataset> {
    spec.validate()?;
    let control = spec.sample_group(Group::Control, spec.n0, spec.seed)?;
    let treated = spec.sample_group(Group::Treated, spec.n1, spec.seed)?;
    control.concat(&treated)
}

/// A Monte-Carlo ATT estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub att: f64,
    pub std_err: f64,
    pub draws: usize,
}

impl GroundTruth {
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("att_truth", self.att);
        kv.set("att_truth_std_err", self.std_err);
        kv.set("monte_carlo_draws", self.draws);
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        Ok(GroundTruth {
            att: kv.parse("att_truth")?,
            std_err: kv.parse("att_truth_std_err")?,
            draws: kv.parse("monte_carlo_draws")?,
        })
    }
}

/// Mean of the CATE over fresh draws from the treated covariate law.
pub fn monte_carlo_ground_truth(
    spec: &NonlinearBenchmarkSpec,
    n_draws: usize,
) -> Result<GroundTruth> {
    const MIN_DRAWS: usize = 1_000_000;
    spec.validate()?;
    if n_draws < MIN_DRAWS {
        return Err(Error::config(format!(
            "Monte-Carlo ground truth needs at least {MIN_DRAWS} draws, got {n_draws}"
        )));
    }
    let mut rng = stream_rng(spec.seed, MONTE_CARLO_STREAM);
    // Welford keeps the variance accurate over 10^7 terms
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 1..=n_draws {
        let x = spec.draw_covariate(Group::Treated, &mut rng);
        let v = spec.cate(x);
        let delta = v - mean;
        mean += delta / k as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n_draws - 1) as f64;
    Ok(GroundTruth {
        att: mean,
        std_err: (var / n_draws as f64).sqrt(),
        draws: n_draws,
    })
}

/// Either benchmark, as stored in a spec file.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkSpec {
    Linear(LinearBenchmarkSpec),
    Nonlinear(NonlinearBenchmarkSpec),
}

impl BenchmarkSpec {
    pub fn to_kv(&self) -> KvFile {
        match self {
            BenchmarkSpec::Linear(s) => s.to_kv(),
            BenchmarkSpec::Nonlinear(s) => s.to_kv(),
        }
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        match kv.require("kind")? {
            "linear" => Ok(BenchmarkSpec::Linear(LinearBenchmarkSpec::from_kv(kv)?)),
            "nonlinear" => Ok(BenchmarkSpec::Nonlinear(NonlinearBenchmarkSpec::from_kv(
                kv,
            )?)),
            other => Err(Error::config(format!("unknown benchmark kind '{other}'"))),
        }
    }

    pub fn generate(&self) -> Result<ObservationalDataset> {
        match self {
            BenchmarkSpec::Linear(s) => generate_linear(s),
            BenchmarkSpec::Nonlinear(s) => generate_nonlinear(s),
        }
    }

    /// Draws `n` fresh rows of one group from the true process.
    pub fn sample_group(&self, group: Group, n: usize, seed: u64) -> Result<ObservationalDataset> {
        match self {
            BenchmarkSpec::Linear(s) => s.sample_group(group, n, seed),
            BenchmarkSpec::Nonlinear(s) => s.sample_group(group, n, seed),
        }
    }
}
