//! Augmented-Lagrangian solver with a log-barrier on variable bounds and a
//! damped Newton inner minimizer on banded exact Hessians.

use std::time::Instant;

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use crate::ad::Jet;

use super::banded::SymBand;
use super::nlp::{scatter, NlpInstance, BANDWIDTH};
use super::SolverConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

/// Merit bookkeeping for one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// Merit after the parameter update that opened this iteration.
    pub merit_start: f64,
    pub merit_end: f64,
    pub rho: f64,
    pub mu: f64,
    pub newton_steps: usize,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub stationarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Total Newton iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub max_defect: f64,
    pub max_traction: f64,
    pub stationarity: f64,
    pub wall_time_s: f64,
    pub merit_history: Vec<OuterRecord>,
}

struct Multipliers {
    lam: Vec<f64>,
    nu: Vec<f64>,
    rho: f64,
    mu: f64,
}

impl NlpInstance {
    fn barrier(&self, z: &[f64], mu: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let mut b = 0.0;
        for i in 0..z.len() {
            if self.is_fixed(i) {
                continue;
            }
            if lo[i].is_finite() {
                b -= (z[i] - lo[i]).ln();
            }
            if hi[i].is_finite() {
                b -= (hi[i] - z[i]).ln();
            }
        }
        mu * b
    }

    fn merit(&self, z: &[f64], m: &Multipliers) -> f64 {
        let mut phi = self.objective(z) + self.barrier(z, m.mu);
        for (c, l) in self.defects(z).iter().zip(&m.lam) {
            phi += l * c + 0.5 * m.rho * c * c;
        }
        for (g, nu) in self.traction(z).iter().zip(&m.nu) {
            phi += phr(*g, *nu, m.rho);
        }
        if phi.is_finite() {
            phi
        } else {
            f64::INFINITY
        }
    }

    /// Merit value, gradient and banded Hessian. Rows of fixed variables are
    /// replaced by identity rows with zero gradient.
    fn merit_derivs(&self, z: &[f64], m: &Multipliers) -> (Vec<f64>, SymBand) {
        let nz = z.len();
        let mut grad = vec![0.0; nz];
        let mut hess = SymBand::zeros(nz, BANDWIDTH);
        self.add_objective_derivs(z, &mut grad, &mut hess);
        self.for_each_defect_jet(z, |i, c, idx| {
            let term = *c * m.lam[i] + *c * *c * (0.5 * m.rho);
            scatter(&term, idx, &mut grad, &mut hess);
        });
        self.for_each_traction_jet(z, |k, g, idx| {
            if m.nu[k] + m.rho * g.v > 0.0 {
                let term: Jet<3> = *g * m.nu[k] + *g * *g * (0.5 * m.rho);
                scatter(&term, idx, &mut grad, &mut hess);
            }
        });
        let (lo, hi) = self.bounds();
        for i in 0..nz {
            if self.is_fixed(i) {
                continue;
            }
            if lo[i].is_finite() {
                let r = 1.0 / (z[i] - lo[i]);
                grad[i] -= m.mu * r;
                hess.add(i, i, m.mu * r * r);
            }
            if hi[i].is_finite() {
                let r = 1.0 / (hi[i] - z[i]);
                grad[i] += m.mu * r;
                hess.add(i, i, m.mu * r * r);
            }
        }
        for (i, g) in grad.iter_mut().enumerate() {
            if self.is_fixed(i) {
                *g = 0.0;
                hess.set_row_identity(i);
            }
        }
        (grad, hess)
    }

    /// KKT residual of the augmented Lagrangian over the variable box. Per
    /// component, the smaller of two valid multiplier estimates is used:
    /// barrier multipliers `mu/s` (the merit gradient itself) and the
    /// projected gradient `z - P(z - ∇L)` of the barrier-free function. The
    /// first degrades at tightly active bounds, the second at weakly active ones.
    fn kkt_residual(&self, z: &[f64], m: &Multipliers) -> f64 {
        let (grad, _) = self.merit_derivs(z, m);
        let (lo, hi) = self.bounds();
        let mut worst = 0.0_f64;
        for i in 0..z.len() {
            if self.is_fixed(i) {
                continue;
            }
            let mut g = grad[i];
            if lo[i].is_finite() {
                g += m.mu / (z[i] - lo[i]);
            }
            if hi[i].is_finite() {
                g -= m.mu / (hi[i] - z[i]);
            }
            let projected = z[i] - (z[i] - g).clamp(lo[i], hi[i]);
            worst = worst.max(grad[i].abs().min(projected.abs()));
        }
        worst
    }

    fn violations(&self, z: &[f64], m: &Multipliers) -> (f64, f64) {
        let eq = self.defects(z).iter().fold(0.0_f64, |a, c| a.max(c.abs()));
        let ineq = self
            .traction(z)
            .iter()
            .zip(&m.nu)
            .fold(0.0_f64, |a, (g, nu)| a.max(g.max(-nu / m.rho).abs()));
        (eq, ineq)
    }

    /// Moves `z` strictly inside the variable bounds and pins the initial state.
    fn push_interior(&self, z: &mut [f64]) -> bool {
        let (lo, hi) = self.bounds();
        let x0 = self.initial_state();
        z[0] = x0.v;
        z[1] = x0.d;
        z[2] = x0.chi;
        for i in 3..z.len() {
            if !(lo[i] < hi[i]) {
                return false;
            }
            let width = hi[i] - lo[i];
            let pad = if width.is_finite() {
                (1e-2 * width).min(1e-4 * (1.0 + lo[i].abs().max(hi[i].abs())))
            } else {
                0.0
            };
            if !z[i].is_finite() {
                return false;
            }
            z[i] = z[i].clamp(lo[i] + pad, hi[i] - pad);
        }
        true
    }
}

/// Powell–Hestenes–Rockafellar term for `g ≤ 0`.
fn phr(g: f64, nu: f64, rho: f64) -> f64 {
    let t = nu + rho * g;
    if t > 0.0 {
        nu * g + 0.5 * rho * g * g
    } else {
        -nu * nu / (2.0 * rho)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

struct InnerResult {
    steps: usize,
}

/// Damped Newton on the merit function down to gradient norm `tol`.
fn minimize_merit(
    nlp: &NlpInstance,
    z: &mut [f64],
    m: &Multipliers,
    tol: f64,
    max_steps: usize,
    tau: f64,
) -> InnerResult {
    let (lo, hi) = nlp.bounds();
    let mut phi = nlp.merit(z, m);
    let mut delta_prev = 0.0_f64;
    let mut steps = 0;
    let mut trial = z.to_vec();
    loop {
        let (grad, hess) = nlp.merit_derivs(z, m);
        let gnorm = inf_norm(&grad);
        if gnorm <= tol || steps >= max_steps || !gnorm.is_finite() {
            return InnerResult { steps };
        }
        steps += 1;

        // Levenberg regularization until the Hessian factors.
        let scale = 1.0 + hess.diagonal_max_abs();
        let mut delta = 0.0;
        let fact = loop {
            let mut h = hess.clone();
            if delta > 0.0 {
                h.add_diagonal(delta);
            }
            if let Some(f) = h.cholesky() {
                break f;
            }
            delta = if delta == 0.0 {
                if delta_prev > 0.0 {
                    (delta_prev / 3.0).max(1e-12 * scale)
                } else {
                    1e-8 * scale
                }
            } else {
                delta * 8.0
            };
        };
        delta_prev = delta;
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let p = fact.solve(&neg);
        let slope: f64 = grad.iter().zip(&p).map(|(g, p)| g * p).sum();

        let mut alpha_max = 1.0_f64;
        for i in 0..z.len() {
            if nlp.is_fixed(i) {
                continue;
            }
            if p[i] < 0.0 && lo[i].is_finite() {
                alpha_max = alpha_max.min(tau * (z[i] - lo[i]) / -p[i]);
            }
            if p[i] > 0.0 && hi[i].is_finite() {
                alpha_max = alpha_max.min(tau * (hi[i] - z[i]) / p[i]);
            }
        }

        let mut alpha = alpha_max;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..z.len() {
                trial[i] = z[i] + alpha * p[i];
            }
            let phi_t = nlp.merit(&trial, m);
            if phi_t <= phi + 1e-4 * alpha * slope {
                phi = phi_t;
                accepted = true;
                break;
            }
            // Round-off regime: the predicted decrease is below the merit's
            // evaluation noise, so Armijo cannot discriminate; take the Newton step.
            let noise = 1e-12 * phi.abs().max(1.0);
            if alpha == alpha_max && -slope <= noise && phi_t <= phi + noise {
                phi = phi.min(phi_t);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            debug!("line search stalled at gradient norm {gnorm:.3e}");
            return InnerResult { steps };
        }
        trace!("newton {steps}: |g|={gnorm:.3e} delta={delta:.1e} alpha={alpha:.2e}/{alpha_max:.2e} merit={phi:.12e}");
        let moved = z.iter().zip(&trial).any(|(a, b)| (a - b).abs() > 1e-13 * (1.0 + a.abs()));
        if !moved {
            // Step below the resolution of z: the gradient is at its round-off floor.
            return InnerResult { steps };
        }
        z.copy_from_slice(&trial);
    }
}

pub(crate) fn solve_nlp(nlp: &NlpInstance, z0: Vec<f64>, cfg: &SolverConfig) -> (Vec<f64>, SolveReport) {
    let start = Instant::now();
    let mut z = z0;
    let mut m = Multipliers {
        lam: vec![0.0; nlp.num_defects()],
        nu: vec![0.0; nlp.num_traction()],
        rho: cfg.rho_init,
        mu: cfg.mu_init,
    };
    let finish = |z: &[f64], status, iterations, outer, stationarity, history| {
        let defects = inf_norm(&nlp.defects(z));
        let traction = nlp.traction(z).iter().fold(0.0_f64, |a, g| a.max(*g)).max(0.0);
        SolveReport {
            status,
            iterations,
            outer_iterations: outer,
            objective: nlp.objective(z),
            max_violation: defects.max(traction),
            max_defect: defects,
            max_traction: traction,
            stationarity,
            wall_time_s: start.elapsed().as_secs_f64(),
            merit_history: history,
        }
    };
    if !nlp.push_interior(&mut z) || !nlp.merit(&z, &m).is_finite() {
        let report = finish(&z, SolveStatus::Infeasible, 0, 0, f64::NAN, vec![]);
        return (z, report);
    }

    let mut history: Vec<OuterRecord> = Vec::new();
    let mut omega = 1e-2_f64;
    let mut prev_violation = f64::INFINITY;
    let mut total = 0;
    let mut stationarity = f64::NAN;
    for outer in 0..cfg.max_outer {
        let merit_start = nlp.merit(&z, &m);
        if let Some(prev) = history.last() {
            if merit_start > prev.merit_end {
                debug!(
                    "outer {outer}: merit rose by {:.3e} after parameter update",
                    merit_start - prev.merit_end
                );
            }
        }
        let budget = cfg.max_newton.saturating_sub(total);
        let inner = minimize_merit(nlp, &mut z, &m, omega.max(0.1 * cfg.stat_tol), budget, cfg.tau);
        total += inner.steps;
        stationarity = nlp.kkt_residual(&z, &m);
        let (eq, ineq) = nlp.violations(&z, &m);
        history.push(OuterRecord {
            merit_start,
            merit_end: nlp.merit(&z, &m),
            rho: m.rho,
            mu: m.mu,
            newton_steps: inner.steps,
            eq_violation: eq,
            ineq_violation: ineq,
            stationarity,
        });
        let at_mu_floor = m.mu <= cfg.mu_min;
        if eq <= cfg.eq_tol && ineq <= cfg.ineq_tol && at_mu_floor && stationarity <= cfg.stat_tol {
            let report = finish(&z, SolveStatus::Converged, total, outer + 1, stationarity, history);
            return (z, report);
        }
        if total >= cfg.max_newton {
            break;
        }
        // First-order multiplier update every outer iteration; the penalty
        // grows only when the violation fails to halve.
        for (l, c) in m.lam.iter_mut().zip(nlp.defects(&z)) {
            *l += m.rho * c;
        }
        for (nu, g) in m.nu.iter_mut().zip(nlp.traction(&z)) {
            *nu = (*nu + m.rho * g).max(0.0);
        }
        let violation = eq.max(ineq);
        if violation > cfg.eq_tol && violation > 0.5 * prev_violation {
            m.rho = (m.rho * cfg.rho_factor).min(cfg.rho_max);
        }
        prev_violation = violation;
        omega *= 0.1;
        m.mu = (m.mu * cfg.mu_factor).max(cfg.mu_min);
    }
    let outer = history.len();
    let report = finish(&z, SolveStatus::MaxIterations, total, outer, stationarity, history);
    (z, report)
}
