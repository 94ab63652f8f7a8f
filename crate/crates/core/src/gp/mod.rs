//! Preferential Gaussian process: probit likelihood with separate noise for
//! human and simulated comparisons, Laplace posterior and evidence-based
//! hyperparameter selection.
//!
//! Inputs are mapped to the unit box with an [`InputBox`] before they reach
//! the kernel, so lengthscales are in normalized units.

mod dataset;
mod hyper;
mod posterior;

pub use dataset::{Comparison, PreferenceDataset, Source};
pub use hyper::{fit_hyperparameters, HyperFit, HyperFitConfig, LogNormalPrior};
pub use posterior::{
    fit_map, log_evidence, log_likelihood, MapDiagnostics, MapObjective, PairPrediction,
    PosteriorModel, Prediction, PreparedPoint,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds used in evidence maximization (normalized input units).
pub const SIGNAL_STD_BOUNDS: (f64, f64) = (1e-2, 1e2);
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (0.05, 10.0);
pub const NOISE_BOUNDS: (f64, f64) = (1e-3, 1e1);

/// Relative diagonal jitter added to the prior covariance.
pub const JITTER: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Signal standard deviation σ_f; the kernel amplitude is σ_f².
    pub signal_std: f64,
    /// ARD lengthscales in normalized input units.
    pub lengthscales: Vec<f64>,
    /// Probit noise σ of human comparisons.
    pub noise: f64,
    /// Sim-noise factor β; simulated comparisons use β·σ.
    pub beta: f64,
}

impl Hyperparameters {
    pub fn defaults(dim: usize) -> Self {
        Self {
            signal_std: 1.0,
            lengthscales: vec![0.5; dim],
            noise: 0.1,
            beta: 10.0,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    pub fn noise_for(&self, source: Source) -> f64 {
        match source {
            Source::Human => self.noise,
            Source::Sim => self.beta * self.noise,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.lengthscales.len(),
            });
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.signal_std)
            || !positive(self.noise)
            || !self.lengthscales.iter().all(|&l| positive(l))
        {
            return Err(Error::InvalidArgument(format!(
                "hyperparameters must be finite and positive: {self:?}"
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 1.0) {
            return Err(Error::InvalidArgument(format!("beta = {} must be >= 1", self.beta)));
        }
        Ok(())
    }
}

/// Axis-aligned box mapped affinely onto `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("input box has no dimensions".into()));
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate bounds [{lo}, {hi}] in dimension {d}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[d], self.upper[d]);
        }
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .enumerate()
            .map(|(d, v)| (v - self.lower[d]) / (self.upper[d] - self.lower[d]))
            .collect())
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(d, v)| self.lower[d] + v * (self.upper[d] - self.lower[d]))
            .collect()
    }
}

/// Squared-exponential ARD kernel on standardized inputs.
pub fn kernel(a: &[f64], b: &[f64], hyp: &Hyperparameters) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if hyp.lengthscales.len() != a.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: hyp.lengthscales.len(),
        });
    }
    Ok(kernel_unchecked(a, b, hyp))
}

pub(crate) fn kernel_unchecked(a: &[f64], b: &[f64], hyp: &Hyperparameters) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&hyp.lengthscales)
        .map(|((x, y), l)| {
            let t = (x - y) / l;
            t * t
        })
        .sum();
    hyp.signal_variance() * (-0.5 * r2).exp()
}
