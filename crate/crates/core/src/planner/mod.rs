//! Full-lap and finite-horizon trajectory planning for a parameter vector.

mod banded;
mod nlp;
mod solver;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::track::Track;
use crate::trajectory::{PlannerParams, Trajectory};
use crate::vehicle::{euler_step_with, ControlInput, VehicleState};

pub use nlp::NlpInstance;
pub use solver::{OuterRecord, SolveReport, SolveStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleLimits {
    pub v_max: f64,
    /// Lower speed bound; the effective bound is never below the strictness margin.
    pub v_min: f64,
    /// Traction-ellipse semiaxes.
    pub ax_max: f64,
    pub ay_max: f64,
    /// Input boxes.
    pub a_x_bound: f64,
    pub kappa_bound: f64,
}

impl VehicleLimits {
    /// `(a_x / ax_max, a_y / ay_max)` at every stage of a trajectory, the
    /// coordinates of the normalized g-g diagram.
    pub fn normalized_accelerations(&self, traj: &Trajectory) -> Vec<(f64, f64)> {
        (0..traj.horizon())
            .map(|k| {
                let ay = traj.states()[k].v.powi(2) * traj.inputs()[k].kappa;
                (traj.inputs()[k].a_x / self.ax_max, ay / self.ay_max)
            })
            .collect()
    }
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self {
            v_max: 30.0,
            v_min: 0.0,
            ax_max: 3.5,
            ay_max: 4.0,
            a_x_bound: 4.0,
            kappa_bound: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer: usize,
    /// Cap on Newton iterations summed over all outer iterations.
    pub max_newton: usize,
    pub eq_tol: f64,
    pub ineq_tol: f64,
    pub stat_tol: f64,
    pub mu_init: f64,
    pub mu_min: f64,
    pub mu_factor: f64,
    pub rho_init: f64,
    pub rho_factor: f64,
    pub rho_max: f64,
    /// Fraction-to-boundary parameter.
    pub tau: f64,
    /// Margin turning strict model guards into closed bounds.
    pub margin: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 60,
            max_newton: 10_000,
            eq_tol: 1e-9,
            ineq_tol: 1e-7,
            stat_tol: 1e-6,
            mu_init: 1e-3,
            mu_min: 1e-10,
            mu_factor: 0.1,
            rho_init: 1e2,
            rho_factor: 10.0,
            rho_max: 1e8,
            tau: 0.995,
            margin: 1e-3,
        }
    }
}

impl SolverConfig {
    /// Looser tolerances for bulk grid planning.
    pub fn coarse() -> Self {
        Self {
            eq_tol: 1e-6,
            ineq_tol: 1e-5,
            stat_tol: 1e-4,
            mu_min: 1e-7,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub limits: VehicleLimits,
    pub solver: SolverConfig,
    /// Speed at the start of a full lap [m/s].
    pub entry_speed: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            limits: VehicleLimits::default(),
            solver: SolverConfig::default(),
            entry_speed: 10.0,
        }
    }
}

impl PlannerConfig {
    /// Stable hash of every setting that influences a solve.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Planner {
    config: PlannerConfig,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn transcribe(
        &self,
        track: &Track,
        params: &PlannerParams,
        x0: VehicleState,
        horizon: usize,
    ) -> Result<NlpInstance> {
        NlpInstance::new(
            track,
            params,
            x0,
            horizon,
            &self.config.limits,
            self.config.solver.margin,
        )
    }

    /// Solves from `warm_start` or, without one, from a centerline rollout.
    /// Non-converged solves return their last iterate with the status set.
    pub fn solve(&self, nlp: &NlpInstance, warm_start: Option<&Trajectory>) -> Result<(Trajectory, SolveReport)> {
        let z0 = match warm_start {
            Some(t) => nlp.pack(t)?,
            None => nlp.pack(&self.cold_start(nlp)?)?,
        };
        let (z, report) = solver::solve_nlp(nlp, z0, &self.config.solver);
        if report.status == SolveStatus::Infeasible {
            return Err(Error::InfeasibleInitialState(
                "initial guess cannot be moved inside the bounds".into(),
            ));
        }
        Ok((nlp.unpack(&z)?, report))
    }

    /// Constant-speed centerline rollout, slowed where the curvature demands it.
    pub fn cold_start(&self, nlp: &NlpInstance) -> Result<Trajectory> {
        let lim = &self.config.limits;
        let margin = self.config.solver.margin;
        let track = nlp.track();
        let n = nlp.horizon();
        let x0 = nlp.initial_state();
        let v_lo = lim.v_min.max(margin);
        let cruise = x0.v.clamp(v_lo, lim.v_max);
        let target = |k: usize| {
            let kr = track.kappa_ref()[k].abs();
            let corner = if kr > 0.0 { (0.8 * lim.ay_max / kr).sqrt() } else { f64::INFINITY };
            let hi = lim.v_max - 1e-3 * (lim.v_max - v_lo);
            let lo = v_lo + 1e-3 * (lim.v_max - v_lo);
            cruise.min(corner).clamp(lo, hi)
        };
        let mut states = vec![x0];
        let mut inputs = Vec::with_capacity(n);
        for k in 0..n {
            let x = states[k];
            let h = track.s_grid()[k + 1] - track.s_grid()[k];
            let a_cap = 0.5 * lim.ax_max.min(lim.a_x_bound);
            let a = ((target(k + 1) - x.v) * x.v / h).clamp(-a_cap, a_cap);
            let kappa = track.kappa_ref()[k].clamp(-lim.kappa_bound, lim.kappa_bound);
            let u = ControlInput::new(a, kappa);
            let next = euler_step_with(&x, &u, track.kappa_ref()[k], h)?;
            inputs.push(u);
            states.push(next);
        }
        Trajectory::new(track, states, inputs)
    }

    /// Initial state of a full lap: entry speed on the centerline.
    pub fn lap_start(&self) -> VehicleState {
        VehicleState::new(self.config.entry_speed, 0.0, 0.0)
    }

    /// One solve over every grid step of the track.
    pub fn plan_full_lap_with_report(
        &self,
        track: &Track,
        params: &PlannerParams,
    ) -> Result<(Trajectory, SolveReport)> {
        let nlp = self.transcribe(track, params, self.lap_start(), track.steps())?;
        self.solve(&nlp, None)
    }

    /// Like [`Planner::plan_full_lap_with_report`], failing unless the solve converged.
    pub fn plan_full_lap(&self, track: &Track, params: &PlannerParams) -> Result<Trajectory> {
        let (traj, report) = self.plan_full_lap_with_report(track, params)?;
        match report.status {
            SolveStatus::Converged => Ok(traj),
            status => Err(Error::NotConverged(format!(
                "{status:?} after {} Newton steps, violation {:.3e}, stationarity {:.3e}",
                report.iterations, report.max_violation, report.stationarity
            ))),
        }
    }
}
