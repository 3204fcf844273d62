//! Synthetic experiments with known CATEs.
//!
//! Both generators draw each variable from its own ChaCha8 stream keyed by
//! the seed: [`STREAM_X`] for covariates (row-major), [`STREAM_W`] for
//! treatment and [`STREAM_EPS`] for noise. Changing one variable's shape
//! leaves the other streams untouched.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const STREAM_X: u64 = 1;
pub const STREAM_W: u64 = 2;
pub const STREAM_EPS: u64 = 3;

pub const COVARIATE_LO: f64 = -1.0;
pub const COVARIATE_HI: f64 = 2.0;
/// Treatment probability of both experiments.
pub const PROPENSITY: f64 = 0.5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Noise standard deviation implied by a configured noise parameter.
/// With `variance_convention` the parameter is read as a variance.
pub fn noise_sd(param: f64, variance_convention: bool) -> f64 {
    if variance_convention {
        param.sqrt()
    } else {
        param
    }
}

/// A dataset together with its oracle effects.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub dataset: Dataset,
    pub tau_true: Vec<f64>,
}

impl LabeledSample {
    pub fn len(&self) -> usize {
        self.tau_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_true.is_empty()
    }

    /// Raw covariates.
    pub fn x(&self) -> &DMatrix<f64> {
        self.dataset.x()
    }
}

/// One covariate, quadratic effect: `τ0(x) = −x² + 2x + 1`,
/// `Y = 1 + X + W τ0(X) + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimpleDgp {
    pub noise_sd: f64,
    pub cost: f64,
    pub variance_convention: bool,
}

impl Default for SimpleDgp {
    fn default() -> Self {
        Self {
            noise_sd: 0.1,
            cost: 1.0,
            variance_convention: false,
        }
    }
}

impl SimpleDgp {
    pub fn tau(x: f64) -> f64 {
        -x * x + 2.0 * x + 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sd must be nonnegative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<LabeledSample> {
        self.validate()?;
        check_n(n)?;
        let sd = noise_sd(self.noise_sd, self.variance_convention);
        let (mut rx, mut rw, mut re) = (
            stream(seed, STREAM_X),
            stream(seed, STREAM_W),
            stream(seed, STREAM_EPS),
        );
        let mut x = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rx.random_range(COVARIATE_LO..COVARIATE_HI);
            let wi = rw.random_bool(PROPENSITY);
            let eps: f64 = re.sample::<f64, _>(StandardNormal) * sd;
            let t = Self::tau(xi);
            x.push(xi);
            w.push(wi);
            y.push(1.0 + xi + if wi { t } else { 0.0 } + eps);
            tau.push(t);
        }
        let dataset = Dataset::new(
            DMatrix::from_column_slice(n, 1, &x),
            w,
            y,
            vec![PROPENSITY; n],
        )?;
        Ok(LabeledSample {
            dataset,
            tau_true: tau,
        })
    }
}

/// Ten covariates, single-index sine effect:
/// `τ0(X) = z sin(2.3 z) + 1.3` with `z = ωᵀX`, `Y = W τ0(X) + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplexDgp {
    pub noise_sd: f64,
    pub cost: f64,
    pub variance_convention: bool,
}

impl Default for ComplexDgp {
    fn default() -> Self {
        Self {
            noise_sd: 0.1,
            cost: 1.0,
            variance_convention: false,
        }
    }
}

impl ComplexDgp {
    pub const DIM: usize = 10;

    /// `ω = (1, …, 1)/√10`.
    pub fn omega() -> [f64; Self::DIM] {
        [1.0 / (Self::DIM as f64).sqrt(); Self::DIM]
    }

    pub fn tau_from_index(z: f64) -> f64 {
        z * (2.3 * z).sin() + 1.3
    }

    pub fn tau(x: &[f64]) -> f64 {
        let z: f64 = Self::omega().iter().zip(x).map(|(o, v)| o * v).sum();
        Self::tau_from_index(z)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sd must be nonnegative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<LabeledSample> {
        self.validate()?;
        check_n(n)?;
        let sd = noise_sd(self.noise_sd, self.variance_convention);
        let (mut rx, mut rw, mut re) = (
            stream(seed, STREAM_X),
            stream(seed, STREAM_W),
            stream(seed, STREAM_EPS),
        );
        let d = Self::DIM;
        let mut xs = Vec::with_capacity(n * d);
        let mut w = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        let mut row = [0.0; Self::DIM];
        for _ in 0..n {
            for v in row.iter_mut() {
                *v = rx.random_range(COVARIATE_LO..COVARIATE_HI);
            }
            let wi = rw.random_bool(PROPENSITY);
            let eps: f64 = re.sample::<f64, _>(StandardNormal) * sd;
            let t = Self::tau(&row);
            xs.extend_from_slice(&row);
            w.push(wi);
            y.push(if wi { t } else { 0.0 } + eps);
            tau.push(t);
        }
        let dataset = Dataset::new(
            DMatrix::from_row_slice(n, d, &xs),
            w,
            y,
            vec![PROPENSITY; n],
        )?;
        Ok(LabeledSample {
            dataset,
            tau_true: tau,
        })
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    Ok(())
}

/// Either experiment, selected by name in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Dgp {
    Simple(SimpleDgp),
    Complex(ComplexDgp),
}

impl Dgp {
    pub fn generate(&self, n: usize, seed: u64) -> Result<LabeledSample> {
        match self {
            Dgp::Simple(d) => d.generate(n, seed),
            Dgp::Complex(d) => d.generate(n, seed),
        }
    }

    pub fn cost(&self) -> f64 {
        match self {
            Dgp::Simple(d) => d.cost,
            Dgp::Complex(d) => d.cost,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dgp::Simple(d) => d.validate(),
            Dgp::Complex(d) => d.validate(),
        }
    }

    /// Oracle effect for one raw covariate row.
    pub fn tau(&self, x: &[f64]) -> f64 {
        match self {
            Dgp::Simple(_) => SimpleDgp::tau(x[0]),
            Dgp::Complex(_) => ComplexDgp::tau(x),
        }
    }
}

/// `(1/n) Σ π_i (τ0_i − c)`: incremental profit over treating nobody.
pub fn oracle_policy_value(sample: &LabeledSample, policy: &[bool], c: f64) -> Result<f64> {
    if policy.len() != sample.len() {
        return Err(Error::Dimension {
            expected: sample.len(),
            got: policy.len(),
        });
    }
    let total: f64 = policy
        .iter()
        .zip(&sample.tau_true)
        .filter(|(p, _)| **p)
        .map(|(_, t)| t - c)
        .sum();
    Ok(total / sample.len() as f64)
}

/// `1{τ0 ≥ c}` for every row of `sample`.
pub fn oracle_policy(sample: &LabeledSample, c: f64) -> Vec<bool> {
    sample.tau_true.iter().map(|&t| t >= c).collect()
}
