//! Direct transcription of the spatial-domain optimal control problem.
//!
//! Decision vector layout: stage `k` occupies `z[5k..5k+5] = [v, d, chi, a_x, kappa]`
//! for `k < N`, and the terminal state occupies `z[5N..5N+3]`.

use std::f64::consts::FRAC_PI_2;

use crate::ad::{Jet, Scalar};
use crate::error::{Error, Result};
use crate::track::Track;
use crate::trajectory::{stage_cost_expr, PlannerParams, Trajectory, Var, N_FEATURES};
use crate::vehicle::{spatial_rhs, ControlInput, VehicleState};

use super::banded::SymBand;
use super::VehicleLimits;

pub(crate) const STAGE_VARS: usize = 5;
/// Half-bandwidth of every Hessian assembled from the transcription.
pub(crate) const BANDWIDTH: usize = 2 * STAGE_VARS - 1;

#[derive(Clone, Debug)]
pub struct NlpInstance {
    track: Track,
    n: usize,
    h: Vec<f64>,
    kappa_ref: Vec<f64>,
    weights: [f64; N_FEATURES],
    x0: VehicleState,
    ax_max: f64,
    ay_max: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl NlpInstance {
    pub(crate) fn new(
        track: &Track,
        params: &PlannerParams,
        x0: VehicleState,
        horizon: usize,
        limits: &VehicleLimits,
        margin: f64,
    ) -> Result<Self> {
        if horizon == 0 || horizon > track.steps() {
            return Err(Error::HorizonTooLong {
                horizon,
                steps: track.steps(),
            });
        }
        let n = horizon;
        let kappa_ref = track.kappa_ref()[..=n].to_vec();
        let h: Vec<f64> = track.s_grid()[..=n].windows(2).map(|w| w[1] - w[0]).collect();
        let nz = STAGE_VARS * n + 3;
        let mut lower = vec![f64::NEG_INFINITY; nz];
        let mut upper = vec![f64::INFINITY; nz];
        let v_lo = limits.v_min.max(margin);
        if !(v_lo < limits.v_max) {
            return Err(Error::InvalidArgument(format!(
                "empty speed range [{v_lo}, {}]",
                limits.v_max
            )));
        }
        for k in 0..=n {
            let b = STAGE_VARS * k;
            lower[b] = v_lo;
            upper[b] = limits.v_max;
            let (mut dlo, mut dhi) = (track.d_min()[k], track.d_max()[k]);
            let kr = kappa_ref[k];
            if kr > 0.0 {
                dhi = dhi.min((1.0 - margin) / kr);
            } else if kr < 0.0 {
                dlo = dlo.max((1.0 - margin) / kr);
            }
            lower[b + 1] = dlo;
            upper[b + 1] = dhi;
            lower[b + 2] = -FRAC_PI_2 + margin;
            upper[b + 2] = FRAC_PI_2 - margin;
            if k < n {
                lower[b + 3] = -limits.a_x_bound;
                upper[b + 3] = limits.a_x_bound;
                lower[b + 4] = -limits.kappa_bound;
                upper[b + 4] = limits.kappa_bound;
            }
        }
        for (i, x) in [x0.v, x0.d, x0.chi].into_iter().enumerate() {
            if !(x >= lower[i] && x <= upper[i]) {
                return Err(Error::InfeasibleInitialState(format!(
                    "component {i} = {x} outside [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self {
            track: track.clone(),
            n,
            h,
            kappa_ref,
            weights: params.weights(),
            x0,
            ax_max: limits.ax_max,
            ay_max: limits.ay_max,
            lower,
            upper,
        })
    }

    /// Number of stages `N`.
    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn num_variables(&self) -> usize {
        STAGE_VARS * self.n + 3
    }

    pub fn num_states(&self) -> usize {
        self.n + 1
    }

    pub fn num_inputs(&self) -> usize {
        self.n
    }

    /// Euler defect equations, one per state component and stage.
    pub fn num_defects(&self) -> usize {
        3 * self.n
    }

    /// Initial-state pin equations.
    pub fn num_pins(&self) -> usize {
        3
    }

    /// Traction-ellipse inequalities, one per stage.
    pub fn num_traction(&self) -> usize {
        self.n
    }

    pub fn initial_state(&self) -> VehicleState {
        self.x0
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub(crate) fn is_fixed(&self, i: usize) -> bool {
        i < 3
    }

    pub fn pack(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        if traj.horizon() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: traj.horizon(),
            });
        }
        let mut z = Vec::with_capacity(self.num_variables());
        for k in 0..=self.n {
            let x = traj.states()[k];
            z.extend([x.v, x.d, x.chi]);
            if k < self.n {
                let u = traj.inputs()[k];
                z.extend([u.a_x, u.kappa]);
            }
        }
        Ok(z)
    }

    pub fn unpack(&self, z: &[f64]) -> Result<Trajectory> {
        if z.len() != self.num_variables() {
            return Err(Error::DimensionMismatch {
                expected: self.num_variables(),
                got: z.len(),
            });
        }
        let states = (0..=self.n)
            .map(|k| {
                let b = STAGE_VARS * k;
                VehicleState::new(z[b], z[b + 1], z[b + 2])
            })
            .collect();
        let inputs = (0..self.n)
            .map(|k| ControlInput::new(z[STAGE_VARS * k + 3], z[STAGE_VARS * k + 4]))
            .collect();
        Trajectory::new(&self.track, states, inputs)
    }

    /// `Σ_k l(x_k, u_k)`; the terminal cost is zero.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let get = |i: usize, var: Var| z[STAGE_VARS * i + var as usize];
        (0..self.n)
            .map(|k| stage_cost_expr(&get, k, self.n, &self.kappa_ref, &self.h, &self.weights))
            .sum()
    }

    fn defect<T: Scalar>(&self, k: usize, x: [T; 5], next: [T; 3]) -> [T; 3] {
        let f = spatial_rhs(x[0], x[1], x[2], x[3], x[4], self.kappa_ref[k]);
        let h = self.h[k];
        // Same operation order as the Euler step, so rollouts give exact zeros.
        [
            next[0] - (x[0] + f[0] * h),
            next[1] - (x[1] + f[1] * h),
            next[2] - (x[2] + f[2] * h),
        ]
    }

    /// `x_{k+1} - x_k - h_k f(x_k, u_k)` stacked per stage.
    pub fn defects(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_defects());
        for k in 0..self.n {
            let b = STAGE_VARS * k;
            let x = [z[b], z[b + 1], z[b + 2], z[b + 3], z[b + 4]];
            let next = [z[b + 5], z[b + 6], z[b + 7]];
            out.extend(self.defect(k, x, next));
        }
        out
    }

    pub fn pin_residual(&self, z: &[f64]) -> [f64; 3] {
        [z[0] - self.x0.v, z[1] - self.x0.d, z[2] - self.x0.chi]
    }

    fn traction_expr<T: Scalar>(&self, v: T, a: T, kappa: T) -> T {
        let ax = a / self.ax_max;
        let ay = v.sqr() * kappa / self.ay_max;
        ax.sqr() + ay.sqr() - 1.0
    }

    /// `(a_x/a_x,max)² + (a_y/a_y,max)² - 1 ≤ 0` per stage.
    pub fn traction(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| {
                let b = STAGE_VARS * k;
                self.traction_expr(z[b], z[b + 3], z[b + 4])
            })
            .collect()
    }

    /// Adds the objective's gradient and Hessian into `grad`/`hess`.
    pub(crate) fn add_objective_derivs(&self, z: &[f64], grad: &mut [f64], hess: &mut SymBand) {
        let n = self.n;
        for k in 0..n {
            if n == 1 {
                let idx: Vec<usize> = (0..5).collect();
                self.objective_term::<5>(z, k, &idx, grad, hess);
            } else if k + 2 <= n {
                let b = STAGE_VARS * k;
                let idx = [b, b + 1, b + 2, b + 3, b + 4, b + 5, b + 8, b + 9];
                self.objective_term::<8>(z, k, &idx, grad, hess);
            } else {
                let b = STAGE_VARS * (n - 2);
                let idx: Vec<usize> = (b..b + 10).collect();
                self.objective_term::<10>(z, k, &idx, grad, hess);
            }
        }
    }

    fn objective_term<const M: usize>(
        &self,
        z: &[f64],
        k: usize,
        idx: &[usize],
        grad: &mut [f64],
        hess: &mut SymBand,
    ) {
        let vars: [Jet<M>; M] = std::array::from_fn(|p| Jet::var(z[idx[p]], p));
        let get = |i: usize, var: Var| {
            let g = STAGE_VARS * i + var as usize;
            let p = idx.iter().position(|&x| x == g).expect("stage term reads outside its window");
            vars[p]
        };
        let cost = stage_cost_expr(&get, k, self.n, &self.kappa_ref, &self.h, &self.weights);
        scatter(&cost, idx, grad, hess);
    }

    /// Calls `f(k, component, jet, idx)` for every defect with its local jet.
    pub(crate) fn for_each_defect_jet(&self, z: &[f64], mut f: impl FnMut(usize, &Jet<6>, &[usize; 6])) {
        for k in 0..self.n {
            let b = STAGE_VARS * k;
            for c in 0..3 {
                let idx = [b, b + 1, b + 2, b + 3, b + 4, b + 5 + c];
                let x: [Jet<6>; 5] = std::array::from_fn(|p| Jet::var(z[idx[p]], p));
                let mut next = [Jet::constant(z[b + 5]), Jet::constant(z[b + 6]), Jet::constant(z[b + 7])];
                next[c] = Jet::var(z[b + 5 + c], 5);
                let d = self.defect(k, x, next)[c];
                f(3 * k + c, &d, &idx);
            }
        }
    }

    pub(crate) fn for_each_traction_jet(&self, z: &[f64], mut f: impl FnMut(usize, &Jet<3>, &[usize; 3])) {
        for k in 0..self.n {
            let b = STAGE_VARS * k;
            let idx = [b, b + 3, b + 4];
            let g = self.traction_expr(Jet::var(z[b], 0), Jet::var(z[b + 3], 1), Jet::var(z[b + 4], 2));
            f(k, &g, &idx);
        }
    }
}

/// Adds a local jet's gradient and Hessian into the global arrays.
pub(crate) fn scatter<const M: usize>(jet: &Jet<M>, idx: &[usize], grad: &mut [f64], hess: &mut SymBand) {
    for (p, &i) in idx.iter().enumerate() {
        grad[i] += jet.g[p];
        for (q, &j) in idx.iter().enumerate().take(p + 1) {
            hess.add(i, j, jet.h[p][q]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(n: usize) -> (NlpInstance, Vec<f64>) {
        let track = Track::desk_scale();
        let params = PlannerParams::with_default_bounds([0.3, -0.5, 0.8, -1.0, 0.2]).unwrap();
        let nlp = NlpInstance::new(
            &track,
            &params,
            VehicleState::new(12.0, 0.1, 0.01),
            n,
            &VehicleLimits::default(),
            1e-3,
        )
        .unwrap();
        let z: Vec<f64> = (0..nlp.num_variables())
            .map(|i| {
                let t = i as f64;
                match i % 5 {
                    0 => 12.0 + (0.3 * t).sin(),
                    1 => 0.5 * (0.17 * t).cos(),
                    2 => 0.05 * (0.23 * t).sin(),
                    3 => 1.5 * (0.11 * t).sin(),
                    _ => 0.02 * (0.07 * t).cos(),
                }
            })
            .collect();
        (nlp, z)
    }

    fn check_fd(f: impl Fn(&[f64]) -> f64, z: &[f64], grad: &[f64], hess: &SymBand) {
        let e = 1e-6;
        let mut zp = z.to_vec();
        for i in 0..z.len() {
            zp[i] = z[i] + e;
            let fp = f(&zp);
            zp[i] = z[i] - e;
            let fm = f(&zp);
            zp[i] = z[i];
            let fd = (fp - fm) / (2.0 * e);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "grad {i}: {fd} vs {}", grad[i]);
        }
        // Hessian columns via differences of the analytic-free objective.
        let e = 1e-4;
        for i in (0..z.len()).step_by(3) {
            for j in i..(i + BANDWIDTH + 1).min(z.len()) {
                let mut zz = z.to_vec();
                let mut ev = |di: f64, dj: f64| {
                    zz.copy_from_slice(z);
                    zz[i] += di;
                    zz[j] += dj;
                    f(&zz)
                };
                let fd = (ev(e, e) - ev(e, -e) - ev(-e, e) + ev(-e, -e)) / (4.0 * e * e);
                let h = hess.get(i, j);
                assert!((fd - h).abs() <= 1e-4 * (1.0 + fd.abs()), "hess ({i},{j}): {fd} vs {h}");
            }
        }
    }

    #[test]
    fn objective_derivatives_match_finite_differences() {
        for n in [1, 2, 6] {
            let (nlp, z) = instance(n);
            let mut g = vec![0.0; z.len()];
            let mut h = SymBand::zeros(z.len(), BANDWIDTH);
            nlp.add_objective_derivs(&z, &mut g, &mut h);
            check_fd(|z| nlp.objective(z), &z, &g, &h);
        }
    }

    #[test]
    fn constraint_jets_match_values_and_differences() {
        let (nlp, z) = instance(4);
        let d = nlp.defects(&z);
        let weights: Vec<f64> = (0..d.len()).map(|i| 0.3 + 0.1 * i as f64).collect();
        let mut g = vec![0.0; z.len()];
        let mut h = SymBand::zeros(z.len(), BANDWIDTH);
        nlp.for_each_defect_jet(&z, |i, jet, idx| {
            assert!((jet.v - d[i]).abs() < 1e-15);
            scatter(&(*jet * weights[i]), idx, &mut g, &mut h);
        });
        let f = |z: &[f64]| nlp.defects(z).iter().zip(&weights).map(|(c, w)| c * w).sum::<f64>();
        check_fd(f, &z, &g, &h);

        let t = nlp.traction(&z);
        let mut g = vec![0.0; z.len()];
        let mut h = SymBand::zeros(z.len(), BANDWIDTH);
        nlp.for_each_traction_jet(&z, |k, jet, idx| {
            assert!((jet.v - t[k]).abs() < 1e-15);
            scatter(jet, idx, &mut g, &mut h);
        });
        check_fd(|z| nlp.traction(z).iter().sum(), &z, &g, &h);
    }
}
