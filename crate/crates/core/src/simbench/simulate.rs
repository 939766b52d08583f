use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{binomial_quantile, gamma_quantile, logistic, norm_cdf, poisson_quantile};
use crate::tabular::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marginal {
    /// N(0, 1)
    Normal,
    /// Binom(1, 0.5)
    Binom,
    /// Pois(2)
    Pois,
    /// Gamma(shape 2, rate 0.5)
    Gamma,
    /// U(−1, 1)
    Uniform,
}

impl Marginal {
    pub const ALL: [Marginal; 5] = [
        Marginal::Normal,
        Marginal::Binom,
        Marginal::Pois,
        Marginal::Gamma,
        Marginal::Uniform,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Marginal::Normal => "normal",
            Marginal::Binom => "binom",
            Marginal::Pois => "pois",
            Marginal::Gamma => "gamma",
            Marginal::Uniform => "uniform",
        }
    }

    /// Maps a standard normal draw onto this marginal through `Φ`.
    pub fn transform(&self, z: f64) -> f64 {
        if let Marginal::Normal = self {
            return z;
        }
        let u = norm_cdf(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        match self {
            Marginal::Normal => unreachable!(),
            Marginal::Binom => binomial_quantile(1, 0.5, u),
            Marginal::Pois => poisson_quantile(2.0, u),
            Marginal::Gamma => gamma_quantile(2.0, 0.5, u),
            Marginal::Uniform => 2.0 * u - 1.0,
        }
    }
}

impl fmt::Display for Marginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Marginal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Marginal::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown marginal '{s}' (normal, binom, pois, gamma, uniform)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Linear,
    Squared,
}

impl Effect {
    pub fn name(&self) -> &'static str {
        match self {
            Effect::Linear => "linear",
            Effect::Squared => "squared",
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Effect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Effect::Linear),
            "squared" => Ok(Effect::Squared),
            _ => Err(Error::Config(format!("unknown effect '{s}' (linear, squared)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub marginal: Marginal,
    pub effect: Effect,
    /// Correlation of neighbouring features; `Corr_ij = rho^|i−j|`.
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    0.5
}

impl SimSpec {
    pub fn new(n: usize, p: usize, marginal: Marginal, effect: Effect) -> Self {
        SimSpec {
            n,
            p,
            marginal,
            effect,
            rho: default_rho(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!("p must be ≥ 2, got {}", self.p)));
        }
        if self.n < 10 {
            return Err(Error::Config(format!("n must be ≥ 10, got {}", self.n)));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (−1, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

pub fn feature_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Gaussian-copula draw: latent rows from N(0, Toeplitz(rho)) pushed through
/// the marginal's quantile function.
pub fn simulate_features<R: Rng>(spec: &SimSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    // Corr = rho^|i−j| is the AR(1) correlation, so the recursion below
    // reproduces it exactly without a Cholesky factor.
    let innov = (1.0 - spec.rho * spec.rho).sqrt();
    let mut columns = vec![Vec::with_capacity(spec.n); spec.p];
    for _ in 0..spec.n {
        let mut z: f64 = rng.sample(StandardNormal);
        columns[0].push(spec.marginal.transform(z));
        for col in columns.iter_mut().skip(1) {
            let e: f64 = rng.sample(StandardNormal);
            z = spec.rho * z + innov * e;
            col.push(spec.marginal.transform(z));
        }
    }
    let names = feature_names(spec.p);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Dataset::from_numeric(&refs, columns)
}

/// `β_j = −0.5 + (j−1)/(p−1)`, evenly spaced from −0.5 to 0.5.
pub fn true_beta(p: usize) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::Config(format!("coefficients need p ≥ 2, got {p}")));
    }
    Ok((0..p).map(|j| -0.5 + j as f64 / (p - 1) as f64).collect())
}

pub fn outcome_probabilities(x: &Dataset, effect: Effect) -> Result<Vec<f64>> {
    let beta = true_beta(x.n_cols())?;
    let rows = x.to_matrix()?;
    Ok(rows
        .iter()
        .map(|r| {
            let eta: f64 = r
                .iter()
                .zip(&beta)
                .map(|(v, b)| match effect {
                    Effect::Linear => v * b,
                    Effect::Squared => v * v * b,
                })
                .sum();
            logistic(eta)
        })
        .collect())
}

/// Binary outcome `y_i ∼ Bernoulli(π_i)` coded 0/1.
pub fn simulate_outcome<R: Rng>(x: &Dataset, effect: Effect, rng: &mut R) -> Result<Vec<f64>> {
    Ok(outcome_probabilities(x, effect)?
        .into_iter()
        .map(|p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect())
}
