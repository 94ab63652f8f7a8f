//! MAP estimation and Laplace predictions.
//!
//! With `L Lᵀ = Σ` (jittered) and `Λ = Dᵀ W D` the likelihood curvature, the
//! Newton step and the evidence only need `C = I + Lᵀ Λ L`, which is
//! symmetric with all eigenvalues ≥ 1. The predictive form
//! `(Σ + Λ⁻¹)⁻¹ = Λ − Λ L C⁻¹ Lᵀ Λ` (Woodbury) is well defined even though
//! `Λ` is always singular (it annihilates constant vectors).

use std::f64::consts::SQRT_2;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{kernel_unchecked, Hyperparameters, InputBox, PreferenceDataset, JITTER};
use crate::error::{Error, Result};
use crate::stats::{log_normal_cdf, probit_terms};

const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;
const MAX_JITTER: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pair {
    i: usize,
    j: usize,
    /// 1 / (√2 σ_c)
    s: f64,
}

fn pairs_of(data: &PreferenceDataset, hyp: &Hyperparameters) -> Vec<Pair> {
    data.comparisons()
        .iter()
        .map(|c| Pair {
            i: c.winner,
            j: c.loser,
            s: 1.0 / (SQRT_2 * hyp.noise_for(c.source)),
        })
        .collect()
}

/// Probit log-likelihood of the comparisons given latent values `g`.
pub fn log_likelihood(g: &[f64], data: &PreferenceDataset, hyp: &Hyperparameters) -> Result<f64> {
    if g.len() != data.num_inputs() {
        return Err(Error::DimensionMismatch {
            expected: data.num_inputs(),
            got: g.len(),
        });
    }
    Ok(pairs_of(data, hyp)
        .iter()
        .map(|p| log_normal_cdf(p.s * (g[p.i] - g[p.j])))
        .sum())
}

struct Setup {
    x: Vec<Vec<f64>>,
    pairs: Vec<Pair>,
    k: DMatrix<f64>,
    l: DMatrix<f64>,
}

fn setup(data: &PreferenceDataset, hyp: &Hyperparameters, space: &InputBox) -> Result<Setup> {
    hyp.validate(data.dim())?;
    if space.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: space.dim(),
        });
    }
    let x = data
        .inputs()
        .iter()
        .map(|v| space.standardize(v))
        .collect::<Result<Vec<_>>>()?;
    let n = x.len();
    let mut k = DMatrix::from_fn(n, n, |a, b| kernel_unchecked(&x[a], &x[b], hyp));
    let sf2 = hyp.signal_variance();
    let mut jitter = JITTER;
    let mut added = 0.0;
    loop {
        let bump = jitter * sf2 - added;
        for a in 0..n {
            k[(a, a)] += bump;
        }
        added = jitter * sf2;
        if let Some(ch) = Cholesky::new(k.clone()) {
            let l = ch.unpack();
            return Ok(Setup {
                x,
                pairs: pairs_of(data, hyp),
                k,
                l,
            });
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER {
            return Err(Error::Numerical("prior covariance is not positive definite".into()));
        }
        log::warn!("prior covariance factorization failed, raising jitter to {jitter:e}");
    }
}

/// Curvature-weighted application `Λ v`.
fn lambda_mul(pairs: &[Pair], w: &[f64], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for (p, wc) in pairs.iter().zip(w) {
        let t = wc * (v[p.i] - v[p.j]);
        out[p.i] += t;
        out[p.j] -= t;
    }
    out
}

fn lambda_dense(n: usize, pairs: &[Pair], w: &[f64]) -> DMatrix<f64> {
    let mut lam = DMatrix::zeros(n, n);
    for (p, wc) in pairs.iter().zip(w) {
        lam[(p.i, p.i)] += wc;
        lam[(p.j, p.j)] += wc;
        lam[(p.i, p.j)] -= wc;
        lam[(p.j, p.i)] -= wc;
    }
    lam
}

/// Log-likelihood, its gradient `Dᵀ r` and the per-pair curvatures `W s²`.
fn likelihood_terms(pairs: &[Pair], g: &DVector<f64>) -> (f64, DVector<f64>, Vec<f64>) {
    let mut ll = 0.0;
    let mut grad = DVector::zeros(g.len());
    let mut w = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (lc, r, curv) = probit_terms(p.s * (g[p.i] - g[p.j]));
        ll += lc;
        grad[p.i] += p.s * r;
        grad[p.j] -= p.s * r;
        w.push(p.s * p.s * curv);
    }
    (ll, grad, w)
}

/// `C = I + Lᵀ Λ L`, either as `I + AᵀA` with one row of `A` per pair or
/// through a dense `Λ`, whichever needs fewer flops.
fn c_matrix(l: &DMatrix<f64>, pairs: &[Pair], w: &[f64]) -> DMatrix<f64> {
    let n = l.nrows();
    let mut c = if 2 * n < pairs.len() {
        let lam = lambda_dense(n, pairs, w);
        l.transpose() * (lam * l)
    } else {
        let mut a = DMatrix::zeros(pairs.len(), n);
        for (row, (p, wc)) in pairs.iter().zip(w).enumerate() {
            let sw = wc.sqrt();
            for col in 0..n {
                a[(row, col)] = sw * (l[(p.i, col)] - l[(p.j, col)]);
            }
        }
        a.transpose() * a
    };
    for d in 0..n {
        c[(d, d)] += 1.0;
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

struct Core {
    alpha: DVector<f64>,
    g: DVector<f64>,
    w: Vec<f64>,
    chol_c: Cholesky<f64, Dyn>,
    log_lik: f64,
    diagnostics: MapDiagnostics,
}

impl Core {
    fn log_evidence(&self) -> f64 {
        let log_det: f64 = self.chol_c.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        self.log_lik - 0.5 * self.alpha.dot(&self.g) - 0.5 * log_det
    }
}

/// Newton iterations on `ψ(g) = −ln p(D|g) + ½ gᵀΣ⁻¹g` carried in the
/// parameterization `g = Σα`, so `Σ⁻¹` is never formed.
fn solve_map(st: &Setup) -> Result<Core> {
    let n = st.x.len();
    let mut alpha = DVector::zeros(n);
    let mut g = DVector::zeros(n);
    let mut iterations = 0;
    let mut polished: Option<Core> = None;
    let pairs_empty = st.pairs.is_empty();
    loop {
        let (ll, grad_l, w) = likelihood_terms(&st.pairs, &g);
        let grad = &alpha - &grad_l;
        let gn = grad.amax();
        let c = c_matrix(&st.l, &st.pairs, &w);
        let chol_c = Cholesky::new(c).ok_or_else(|| Error::Numerical("I + LᵀΛL not positive definite".into()))?;
        let done = |converged: bool, alpha: DVector<f64>, g: DVector<f64>| Core {
            alpha,
            g,
            w: w.clone(),
            chol_c: chol_c.clone(),
            log_lik: ll,
            diagnostics: MapDiagnostics {
                iterations,
                gradient_norm: gn,
                converged,
            },
        };
        if let Some(prev) = polished.take() {
            return Ok(if gn <= prev.diagnostics.gradient_norm { done(true, alpha, g) } else { prev });
        }
        if gn <= GRAD_TOL && pairs_empty {
            return Ok(done(true, alpha, g));
        }
        if iterations >= MAX_NEWTON {
            log::warn!("MAP Newton hit {MAX_NEWTON} iterations, gradient {gn:e}");
            return Ok(done(false, alpha, g));
        }

        let b = lambda_mul(&st.pairs, &w, &g) + &grad_l;
        let g_new = &st.l * chol_c.solve(&st.l.tr_mul(&b));
        let alpha_new = &b - lambda_mul(&st.pairs, &w, &g_new);
        let dg = &g_new - &g;
        let da = &alpha_new - &alpha;
        let slope = grad.dot(&dg);
        let psi0 = -ll + 0.5 * alpha.dot(&g);

        if gn <= GRAD_TOL {
            // Inside the quadratic region: one unguarded step sharpens the
            // MAP well below the tolerance at the cost of a factorization.
            polished = Some(done(true, alpha.clone(), g.clone()));
            alpha = alpha_new;
            g = g_new;
            iterations += 1;
            continue;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let gt = &g + t * &dg;
            let at = &alpha + t * &da;
            let llt: f64 = st.pairs.iter().map(|p| log_normal_cdf(p.s * (gt[p.i] - gt[p.j]))).sum();
            let psit = -llt + 0.5 * at.dot(&gt);
            if psit <= psi0 + 1e-4 * t * slope {
                accepted = Some((at, gt));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((a, gg)) => {
                alpha = a;
                g = gg;
            }
            None => {
                // no representable decrease left
                log::debug!("MAP line search stalled at gradient {gn:e}, slope {slope:e}");
                return Ok(done(false, alpha, g));
            }
        }
        iterations += 1;
    }
}

/// Objective of the MAP problem with explicit `Σ⁻¹`, for checking derivatives.
pub struct MapObjective {
    st: Setup,
    chol_k: Cholesky<f64, Dyn>,
}

impl MapObjective {
    pub fn new(data: &PreferenceDataset, hyp: &Hyperparameters, space: &InputBox) -> Result<Self> {
        let st = setup(data, hyp, space)?;
        let chol_k = Cholesky::new(st.k.clone()).ok_or_else(|| Error::Numerical("prior covariance".into()))?;
        Ok(Self { st, chol_k })
    }

    pub fn dim(&self) -> usize {
        self.st.x.len()
    }

    /// `−ln p(D|g) + ½ gᵀΣ⁻¹g`
    pub fn value(&self, g: &[f64]) -> f64 {
        let gv = DVector::from_column_slice(g);
        let (ll, _, _) = likelihood_terms(&self.st.pairs, &gv);
        -ll + 0.5 * gv.dot(&self.chol_k.solve(&gv))
    }

    pub fn gradient(&self, g: &[f64]) -> Vec<f64> {
        let gv = DVector::from_column_slice(g);
        let (_, grad_l, _) = likelihood_terms(&self.st.pairs, &gv);
        (self.chol_k.solve(&gv) - grad_l).as_slice().to_vec()
    }

    pub fn hessian(&self, g: &[f64]) -> DMatrix<f64> {
        let gv = DVector::from_column_slice(g);
        let (_, _, w) = likelihood_terms(&self.st.pairs, &gv);
        self.chol_k.inverse() + lambda_dense(g.len(), &self.st.pairs, &w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Joint Gaussian of the latent utility at two points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPrediction {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// Laplace posterior around the MAP. Immutable once fitted.
#[derive(Clone, Debug)]
pub struct PosteriorModel {
    hyp: Hyperparameters,
    space: InputBox,
    x: Vec<Vec<f64>>,
    k: DMatrix<f64>,
    g_hat: DVector<f64>,
    alpha: DVector<f64>,
    lambda: DMatrix<f64>,
    /// `(Σ + Λ̂⁻¹)⁻¹`
    q: DMatrix<f64>,
    log_evidence: f64,
    diagnostics: MapDiagnostics,
}

pub fn fit_map(data: &PreferenceDataset, hyp: &Hyperparameters, space: &InputBox) -> Result<PosteriorModel> {
    let st = setup(data, hyp, space)?;
    let core = solve_map(&st)?;
    let n = st.x.len();
    let lambda = lambda_dense(n, &st.pairs, &core.w);
    let p = st.l.transpose() * &lambda;
    let x = core.chol_c.solve(&p);
    let mut q = &lambda - p.transpose() * x;
    q = 0.5 * (&q + q.transpose());
    Ok(PosteriorModel {
        hyp: hyp.clone(),
        space: space.clone(),
        log_evidence: core.log_evidence(),
        diagnostics: core.diagnostics,
        g_hat: core.g,
        alpha: core.alpha,
        x: st.x,
        k: st.k,
        lambda,
        q,
    })
}

/// Laplace-approximate log marginal likelihood
/// `ln p(D|ĝ) − ½ ĝᵀΣ⁻¹ĝ − ½ ln det(I + ΣΛ̂)`.
pub fn log_evidence(data: &PreferenceDataset, hyp: &Hyperparameters, space: &InputBox) -> Result<f64> {
    let st = setup(data, hyp, space)?;
    Ok(solve_map(&st)?.log_evidence())
}

impl PosteriorModel {
    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyp
    }

    pub fn space(&self) -> &InputBox {
        &self.space
    }

    pub fn num_inputs(&self) -> usize {
        self.x.len()
    }

    /// MAP latent utilities at the training inputs.
    pub fn g_hat(&self) -> &[f64] {
        self.g_hat.as_slice()
    }

    /// Jittered prior covariance of the training inputs.
    pub fn prior_covariance(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Negative Hessian of the log-likelihood at the MAP.
    pub fn lambda_hat(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn diagnostics(&self) -> MapDiagnostics {
        self.diagnostics
    }

    fn cross_cov(&self, xs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel_unchecked(xs, xi, &self.hyp)))
    }

    /// Posterior mean and variance of the latent utility at `x` (raw units).
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let xs = self.space.standardize(x)?;
        let k = self.cross_cov(&xs);
        let mean = k.dot(&self.alpha);
        let mut variance = self.hyp.signal_variance() - k.dot(&(&self.q * &k));
        if variance < 0.0 {
            log::debug!("clamped negative predictive variance {variance:e}");
            variance = 0.0;
        }
        Ok(Prediction { mean, variance })
    }

    /// Posterior mean only; cheaper than [`Self::predict`].
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let xs = self.space.standardize(x)?;
        Ok(self.cross_cov(&xs).dot(&self.alpha))
    }

    pub fn predict_pair(&self, a: &[f64], b: &[f64]) -> Result<PairPrediction> {
        Ok(self.joint(&self.prepare(a)?, &self.prepare(b)?))
    }

    /// Caches the per-point quantities needed for repeated pair predictions.
    pub fn prepare(&self, x: &[f64]) -> Result<PreparedPoint> {
        let xs = self.space.standardize(x)?;
        let k = self.cross_cov(&xs);
        let qk = &self.q * &k;
        let mut variance = self.hyp.signal_variance() - k.dot(&qk);
        if variance < 0.0 {
            log::debug!("clamped negative predictive variance {variance:e}");
            variance = 0.0;
        }
        Ok(PreparedPoint {
            mean: k.dot(&self.alpha),
            variance,
            xs,
            k,
            qk,
        })
    }

    pub fn joint(&self, a: &PreparedPoint, b: &PreparedPoint) -> PairPrediction {
        let prior_ab = kernel_unchecked(&a.xs, &b.xs, &self.hyp);
        let vab = prior_ab - 0.5 * (a.k.dot(&b.qk) + b.k.dot(&a.qk));
        let bound = (a.variance * b.variance).sqrt();
        let vab = vab.clamp(-bound, bound);
        PairPrediction {
            mean: [a.mean, b.mean],
            cov: [[a.variance, vab], [vab, b.variance]],
        }
    }
}

/// Point with cached cross-covariances, see [`PosteriorModel::prepare`].
#[derive(Clone, Debug)]
pub struct PreparedPoint {
    pub mean: f64,
    pub variance: f64,
    xs: Vec<f64>,
    k: DVector<f64>,
    qk: DVector<f64>,
}
