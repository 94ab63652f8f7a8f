//! Preferential Bayesian optimization: EUBO acquisition over a candidate
//! pool with coordinate refinement, dataset updates with scheduled
//! hyperparameter refits, and incumbent extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    fit_hyperparameters, fit_map, HyperFitConfig, Hyperparameters, InputBox, LogNormalPrior, PairPrediction, PosteriorModel,
    PreferenceDataset, PreparedPoint, Source,
};
use crate::optim::halton;
use crate::stats::{normal_cdf, normal_pdf};
use crate::trajectory::{PlannerParams, N_FEATURES};

const EUBO_TIE: f64 = 1e-12;

/// The searched subset of the five exponent parameters. Inactive exponents
/// stay at their pinned values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpace {
    pub active: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub pinned: [f64; N_FEATURES],
}

impl ParamSpace {
    pub fn new(active: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>, pinned: [f64; N_FEATURES]) -> Result<Self> {
        let s = Self {
            active,
            lower,
            upper,
            pinned,
        };
        s.validate()?;
        Ok(s)
    }

    /// `θ ∈ [-2, 2]` on the acceleration weights, jerk weights pinned at 0.
    pub fn desk() -> Self {
        Self {
            active: vec![0, 1, 2],
            lower: vec![PlannerParams::DEFAULT_LOWER; 3],
            upper: vec![PlannerParams::DEFAULT_UPPER; 3],
            pinned: [0.0; N_FEATURES],
        }
    }

    /// All five exponents in `[-2, 2]`.
    pub fn full() -> Self {
        Self {
            active: (0..N_FEATURES).collect(),
            lower: vec![PlannerParams::DEFAULT_LOWER; N_FEATURES],
            upper: vec![PlannerParams::DEFAULT_UPPER; N_FEATURES],
            pinned: [0.0; N_FEATURES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.active.len();
        if n == 0 || n > N_FEATURES {
            return Err(Error::InvalidArgument(format!("{n} active parameters")));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.lower.len().min(self.upper.len()),
            });
        }
        let mut seen = [false; N_FEATURES];
        for &a in &self.active {
            if a >= N_FEATURES || seen[a] {
                return Err(Error::InvalidArgument(format!("bad active index list {:?}", self.active)));
            }
            seen[a] = true;
        }
        InputBox::new(self.lower.clone(), self.upper.clone())?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn input_box(&self) -> InputBox {
        InputBox::new(self.lower.clone(), self.upper.clone()).expect("validated parameter space")
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        self.input_box().contains(xi)
    }

    /// Full exponent vector for a point of the search space.
    pub fn theta(&self, xi: &[f64]) -> Result<[f64; N_FEATURES]> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        let mut theta = self.pinned;
        for (k, &a) in self.active.iter().enumerate() {
            theta[a] = xi[k];
        }
        Ok(theta)
    }

    /// Active coordinates of a full exponent vector.
    pub fn project(&self, theta: &[f64; N_FEATURES]) -> Vec<f64> {
        self.active.iter().map(|&a| theta[a]).collect()
    }

    pub fn params(&self, xi: &[f64]) -> Result<PlannerParams> {
        let theta = self.theta(xi)?;
        let mut lo = self.pinned;
        let mut hi = self.pinned;
        for (k, &a) in self.active.iter().enumerate() {
            lo[a] = self.lower[k];
            hi[a] = self.upper[k];
        }
        PlannerParams::new(theta, lo, hi)
    }

    /// Full-factorial grid with `per_dim` evenly spaced values per active
    /// dimension, including the bounds; the last dimension varies fastest.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let axis = |k: usize, i: usize| {
            if per_dim == 1 {
                0.5 * (self.lower[k] + self.upper[k])
            } else {
                self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (per_dim - 1) as f64
            }
        };
        let total = per_dim.pow(d as u32);
        (0..total)
            .map(|mut g| {
                let mut x = vec![0.0; d];
                for k in (0..d).rev() {
                    x[k] = axis(k, g % per_dim);
                    g /= per_dim;
                }
                x
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PboConfig {
    /// Quasi-random candidates per acquisition step.
    pub candidates: usize,
    /// Candidates kept by posterior mean for pair scoring.
    pub top_by_mean: usize,
    /// Uniform random points added to the pair pool.
    pub random_points: usize,
    /// Coordinate-search sweeps applied to the best candidate.
    pub refine_steps: usize,
    /// Hyperparameters are refit every this many iterations (and at start).
    pub refit_every: usize,
    pub beta: f64,
    pub seed: u64,
    pub hyper: HyperFitConfig,
}

impl Default for PboConfig {
    fn default() -> Self {
        Self {
            candidates: 512,
            top_by_mean: 32,
            random_points: 32,
            refine_steps: 50,
            refit_every: 5,
            beta: 10.0,
            seed: 0,
            // Simulated and noise-free decision makers drive plain evidence
            // maximization to a saturated probit and degenerate lengthscales,
            // after which EUBO re-queries the same pair forever. Weak
            // hyperpriors keep the refits well posed.
            hyper: HyperFitConfig {
                noise_ratio_prior: Some(LogNormalPrior { median: 0.3, log_sd: 0.3 }),
                lengthscale_prior: Some(LogNormalPrior { median: 0.5, log_sd: 1.0 }),
                ..HyperFitConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
}

/// `E[max(X, Y)]` for the bivariate normal of a pair prediction.
pub fn eubo_of(p: &PairPrediction) -> f64 {
    let [ma, mb] = p.mean;
    let s2 = p.cov[0][0] + p.cov[1][1] - 2.0 * p.cov[0][1];
    if s2 <= 1e-24 {
        return ma.max(mb);
    }
    let s = s2.sqrt();
    let z = (ma - mb) / s;
    ma * normal_cdf(z) + mb * normal_cdf(-z) + s * normal_pdf(z)
}

pub fn eubo(model: &PosteriorModel, a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(eubo_of(&model.predict_pair(a, b)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub eubo: f64,
    /// Best EUBO among the unrefined candidate pairs.
    pub candidate_eubo: f64,
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Orders the members of a pair lexicographically.
fn canonical(a: Vec<f64>, b: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    if lex_less(&b, &a) {
        (b, a)
    } else {
        (a, b)
    }
}

/// Ascent on `f` by coordinate moves of `±step·width`, halving the step after
/// a sweep without improvement. Only strict improvements are accepted.
fn coordinate_search(
    mut x: Vec<f64>,
    mut fx: f64,
    lower: &[f64],
    upper: &[f64],
    sweeps: usize,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut step = 0.1;
    for _ in 0..sweeps {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut t = x.clone();
                t[i] = (x[i] + dir * step * (upper[i] - lower[i])).clamp(lower[i], upper[i]);
                if t[i] == x[i] {
                    continue;
                }
                let ft = f(&t)?;
                if ft > fx {
                    x = t;
                    fx = ft;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((x, fx))
}

/// Sequential PBO state: dataset, fitted model and schedule bookkeeping.
#[derive(Clone, Debug)]
pub struct PboState {
    config: PboConfig,
    space: ParamSpace,
    dataset: PreferenceDataset,
    hyp: Hyperparameters,
    model: PosteriorModel,
    iteration: usize,
}

impl PboState {
    /// Standard PBO start: no data, default hyperparameters.
    pub fn new(space: ParamSpace, config: PboConfig) -> Result<Self> {
        Self::initialize_with_prior(PreferenceDataset::new(space.dim()), space, config)
    }

    /// Starts from simulated comparisons; hyperparameters are fitted on them
    /// when there is at least one.
    pub fn initialize_with_prior(sim: PreferenceDataset, space: ParamSpace, config: PboConfig) -> Result<Self> {
        space.validate()?;
        if sim.dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: sim.dim(),
            });
        }
        if sim.comparisons().iter().any(|c| c.source != Source::Sim) {
            return Err(Error::InvalidDataset("prior data must only contain sim comparisons".into()));
        }
        if config.refit_every == 0 || config.candidates == 0 {
            return Err(Error::InvalidArgument("refit_every and candidates must be positive".into()));
        }
        let hyp = Hyperparameters::defaults(space.dim()).with_beta(config.beta);
        hyp.validate(space.dim())?;
        let model = fit_map(&sim, &hyp, &space.input_box())?;
        let mut state = Self {
            config,
            space,
            dataset: sim,
            hyp,
            model,
            iteration: 0,
        };
        state.refit(true)?;
        Ok(state)
    }

    pub fn config(&self) -> &PboConfig {
        &self.config
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn dataset(&self) -> &PreferenceDataset {
        &self.dataset
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyp
    }

    pub fn model(&self) -> &PosteriorModel {
        &self.model
    }

    /// Number of human comparisons added since initialization.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn refit(&mut self, hyper: bool) -> Result<()> {
        let bx = self.space.input_box();
        if hyper && !self.dataset.is_empty() {
            match fit_hyperparameters(&self.dataset, self.config.beta, &bx, &self.config.hyper) {
                Ok(fit) => {
                    log::debug!(
                        "iteration {}: hyperparameters {:?}, evidence {:.6}",
                        self.iteration,
                        fit.hyperparameters,
                        fit.log_evidence
                    );
                    self.hyp = fit.hyperparameters;
                }
                Err(e) => log::warn!("hyperparameter refit failed, keeping previous values: {e}"),
            }
        }
        self.model = fit_map(&self.dataset, &self.hyp, &bx)?;
        if !self.model.diagnostics().converged {
            log::warn!("MAP not converged: {:?}", self.model.diagnostics());
        }
        Ok(())
    }

    fn rng(&self, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(purpose + 4 * self.iteration as u64);
        rng
    }

    fn uniform_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.space.dim())
            .map(|k| rng.random_range(self.space.lower[k]..=self.space.upper[k]))
            .collect()
    }

    fn quasi_random(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let shift: Vec<f64> = (0..self.space.dim()).map(|_| rng.random::<f64>()).collect();
        let bx = self.space.input_box();
        halton(self.config.candidates, self.space.dim(), &shift)
            .into_iter()
            .map(|u| bx.from_unit(&u))
            .collect()
    }

    /// Posterior-mean maximizer; the box center when there are no comparisons.
    pub fn best_parameters(&self) -> Result<Vec<f64>> {
        if self.dataset.is_empty() {
            return Ok(self.space.input_box().center());
        }
        let mut rng = self.rng(1);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for x in self.quasi_random(&mut rng) {
            let m = self.model.predict_mean(&x)?;
            let better = match &best {
                None => true,
                Some((bx, bm)) => m > *bm || (m == *bm && lex_less(&x, bx)),
            };
            if better {
                best = Some((x, m));
            }
        }
        let (x0, m0) = best.expect("at least one candidate");
        let (x, _) = coordinate_search(x0, m0, &self.space.lower, &self.space.upper, self.config.refine_steps, |x| {
            self.model.predict_mean(x)
        })?;
        Ok(x)
    }

    /// Next query pair by EUBO.
    pub fn propose_pair(&self) -> Result<Proposal> {
        let mut rng = self.rng(0);
        let mut cands = self.quasi_random(&mut rng);
        cands.push(self.best_parameters()?);
        let means = cands
            .iter()
            .map(|x| self.model.predict_mean(x))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&i, &j| means[j].total_cmp(&means[i]).then(i.cmp(&j)));
        let mut pool: Vec<Vec<f64>> = order
            .iter()
            .take(self.config.top_by_mean)
            .map(|&i| cands[i].clone())
            .collect();
        for _ in 0..self.config.random_points {
            pool.push(self.uniform_point(&mut rng));
        }
        let prepared = pool
            .iter()
            .map(|x| self.model.prepare(x))
            .collect::<Result<Vec<PreparedPoint>>>()?;

        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for i in 0..pool.len() {
            for j in (i + 1)..pool.len() {
                let e = eubo_of(&self.model.joint(&prepared[i], &prepared[j]));
                let (a, b) = canonical(pool[i].clone(), pool[j].clone());
                let better = match &best {
                    None => true,
                    Some((be, ba, bb)) => {
                        e > be + EUBO_TIE
                            || ((e - be).abs() <= EUBO_TIE && (lex_less(&a, ba) || (a == *ba && lex_less(&b, bb))))
                    }
                };
                if better {
                    best = Some((e, a, b));
                }
            }
        }
        let (e0, a0, b0) = best.ok_or_else(|| Error::InvalidArgument("pair pool has fewer than two points".into()))?;

        let d = self.space.dim();
        let lo: Vec<f64> = self.space.lower.iter().chain(&self.space.lower).copied().collect();
        let hi: Vec<f64> = self.space.upper.iter().chain(&self.space.upper).copied().collect();
        let x0: Vec<f64> = a0.iter().chain(&b0).copied().collect();
        let (x, e) = coordinate_search(x0, e0, &lo, &hi, self.config.refine_steps, |x| {
            eubo(&self.model, &x[..d], &x[d..])
        })?;
        let (a, b) = canonical(x[..d].to_vec(), x[d..].to_vec());
        Ok(Proposal {
            a,
            b,
            eubo: e,
            candidate_eubo: e0,
        })
    }

    /// Adds the answered query as a human comparison and refits.
    pub fn update_dataset(&mut self, a: &[f64], b: &[f64], choice: Choice) -> Result<()> {
        self.dataset
            .add_pair(a.to_vec(), b.to_vec(), choice == Choice::A, Source::Human)?;
        self.iteration += 1;
        let hyper = self.iteration.is_multiple_of(self.config.refit_every);
        self.refit(hyper)
    }
}
