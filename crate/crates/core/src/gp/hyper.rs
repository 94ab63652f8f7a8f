//! Evidence maximization over `(σ_f, ℓ_1..ℓ_d, σ)` in log space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::posterior::log_evidence;
use super::{Hyperparameters, InputBox, PreferenceDataset, LENGTHSCALE_BOUNDS, NOISE_BOUNDS, SIGNAL_STD_BOUNDS};
use crate::error::{Error, Result};
use crate::optim::nelder_mead_box;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperFitConfig {
    pub starts: usize,
    pub evaluations_per_start: usize,
    pub seed: u64,
    /// Optional log-normal prior on the noise-to-signal ratio `σ / σ_f`,
    /// turning the search into a MAP estimate.
    pub noise_ratio_prior: Option<LogNormalPrior>,
    /// Optional log-normal prior on each normalized lengthscale.
    pub lengthscale_prior: Option<LogNormalPrior>,
}

impl Default for HyperFitConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            evaluations_per_start: 200,
            seed: 0,
            noise_ratio_prior: None,
            lengthscale_prior: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalPrior {
    pub median: f64,
    /// Standard deviation of the logarithm.
    pub log_sd: f64,
}

impl LogNormalPrior {
    /// Log density of `ln x` up to a constant.
    pub fn log_density(&self, x: f64) -> f64 {
        let z = (x.ln() - self.median.ln()) / self.log_sd;
        -0.5 * z * z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperFit {
    pub hyperparameters: Hyperparameters,
    /// Maximized objective: the log evidence plus the log prior, if any.
    pub log_evidence: f64,
    pub default_log_evidence: f64,
    pub failed_starts: usize,
}

fn log_bounds(dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![SIGNAL_STD_BOUNDS.0.ln()];
    let mut hi = vec![SIGNAL_STD_BOUNDS.1.ln()];
    lo.extend(std::iter::repeat_n(LENGTHSCALE_BOUNDS.0.ln(), dim));
    hi.extend(std::iter::repeat_n(LENGTHSCALE_BOUNDS.1.ln(), dim));
    lo.push(NOISE_BOUNDS.0.ln());
    hi.push(NOISE_BOUNDS.1.ln());
    (lo, hi)
}

fn decode(p: &[f64], beta: f64) -> Hyperparameters {
    let d = p.len() - 2;
    // exp(ln b) can land one ulp outside b
    let within = |v: f64, (lo, hi): (f64, f64)| v.exp().clamp(lo, hi);
    Hyperparameters {
        signal_std: within(p[0], SIGNAL_STD_BOUNDS),
        lengthscales: p[1..=d].iter().map(|v| within(*v, LENGTHSCALE_BOUNDS)).collect(),
        noise: within(p[d + 1], NOISE_BOUNDS),
        beta,
    }
}

fn encode(h: &Hyperparameters) -> Vec<f64> {
    std::iter::once(h.signal_std.ln())
        .chain(h.lengthscales.iter().map(|l| l.ln()))
        .chain(std::iter::once(h.noise.ln()))
        .collect()
}

/// Multi-start bounded Nelder–Mead on the Laplace evidence. The first start
/// is the default setting; the rest are uniform in the log box.
pub fn fit_hyperparameters(
    data: &PreferenceDataset,
    beta: f64,
    space: &InputBox,
    cfg: &HyperFitConfig,
) -> Result<HyperFit> {
    if data.is_empty() {
        return Err(Error::InvalidDataset("evidence maximization needs at least one comparison".into()));
    }
    let dim = data.dim();
    let defaults = Hyperparameters::defaults(dim).with_beta(beta);
    defaults.validate(dim)?;
    let penalty = |h: &Hyperparameters| {
        let ratio = cfg.noise_ratio_prior.map_or(0.0, |p| p.log_density(h.noise / h.signal_std));
        let ell = cfg
            .lengthscale_prior
            .map_or(0.0, |p| h.lengthscales.iter().map(|l| p.log_density(*l)).sum());
        ratio + ell
    };
    let default_log_evidence = log_evidence(data, &defaults, space)? + penalty(&defaults);

    let (lo, hi) = log_bounds(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Vec<f64>> = (0..cfg.starts.max(1))
        .map(|s| {
            if s == 0 {
                encode(&defaults)
            } else {
                lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect()
            }
        })
        .collect();

    let objective = |p: &[f64]| {
        let h = decode(p, beta);
        match log_evidence(data, &h, space) {
            Ok(v) if v.is_finite() => -(v + penalty(&h)),
            _ => f64::INFINITY,
        }
    };
    let results: Vec<_> = starts
        .par_iter()
        .map(|x0| nelder_mead_box(objective, x0, &lo, &hi, 0.1, cfg.evaluations_per_start))
        .collect();

    let failed_starts = results.iter().filter(|m| !m.f.is_finite()).count();
    let best = results
        .iter()
        .enumerate()
        .filter(|(_, m)| m.f.is_finite())
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)));
    match best {
        Some((_, m)) if -m.f >= default_log_evidence => Ok(HyperFit {
            hyperparameters: decode(&m.x, beta),
            log_evidence: -m.f,
            default_log_evidence,
            failed_starts,
        }),
        _ => {
            log::warn!("hyperparameter search failed on every start, keeping defaults");
            Ok(HyperFit {
                hyperparameters: defaults,
                log_evidence: default_log_evidence,
                default_log_evidence,
                failed_starts,
            })
        }
    }
}
