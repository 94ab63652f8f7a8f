//! Session engine: PBO state plus the planning needed to show a query.

use std::path::PathBuf;

use prefdrive_core::cache::PlanCache;
use prefdrive_core::driver::{build_sim_dataset, fit_driver_model, read_logs_file, GridConfig};
use prefdrive_core::gp::PreferenceDataset;
use prefdrive_core::pbo::{Choice, ParamSpace, PboConfig, PboState};
use prefdrive_core::planner::{Planner, PlannerConfig, SolverConfig};
use prefdrive_core::{Track, Trajectory, N_FEATURES};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Prior,
    Standard,
}

fn desk_space() -> ParamSpace {
    ParamSpace::desk()
}

fn coarse_planner() -> PlannerConfig {
    PlannerConfig {
        solver: SolverConfig::coarse(),
        ..PlannerConfig::default()
    }
}

/// Body of `POST /sessions`. Paths are read by the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Number of queries.
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Track CSV; the built-in desk track when absent.
    #[serde(default)]
    pub track: Option<PathBuf>,
    /// Prior comparisons (dataset CSV). Prior mode needs this or `logs`.
    #[serde(default)]
    pub prior_dataset: Option<PathBuf>,
    /// Driving logs to build the prior from, skipping `heldout_style`.
    #[serde(default)]
    pub logs: Option<PathBuf>,
    #[serde(default)]
    pub heldout_style: Option<String>,
    #[serde(default = "desk_space")]
    pub space: ParamSpace,
    #[serde(default)]
    pub pbo: PboConfig,
    #[serde(default = "coarse_planner")]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub prior_grid: GridConfig,
}

/// Inputs fully resolved from files, as stored in the journal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Resolved {
    pub config: SessionConfig,
    pub track: Track,
    pub prior: Option<PreferenceDataset>,
}

impl SessionConfig {
    pub fn resolve(self, cache: &PlanCache) -> Result<Resolved, ApiError> {
        let bad = |m: String| ApiError::invalid_config(m);
        if self.budget == 0 {
            return Err(bad("budget must be at least 1".into()));
        }
        self.space.validate().map_err(|e| bad(e.to_string()))?;
        let track = match &self.track {
            Some(p) => Track::read_csv(p).map_err(|e| bad(format!("track {}: {e}", p.display())))?,
            None => Track::desk_scale(),
        };
        let prior = match (self.mode, &self.prior_dataset, &self.logs) {
            (Mode::Standard, None, None) => None,
            (Mode::Standard, _, _) => return Err(bad("standard mode takes no prior data".into())),
            (Mode::Prior, Some(p), _) => {
                let d = PreferenceDataset::read_file(p).map_err(|e| bad(format!("prior dataset {}: {e}", p.display())))?;
                Some(d)
            }
            (Mode::Prior, None, Some(p)) => {
                let logs = read_logs_file(p).map_err(|e| bad(format!("logs {}: {e}", p.display())))?;
                let logs: Vec<_> = logs
                    .into_iter()
                    .filter(|l| self.heldout_style.as_deref() != Some(l.style.as_str()))
                    .collect();
                let model = fit_driver_model(&logs, &track).map_err(|e| bad(e.to_string()))?;
                let planner = Planner::new(self.planner.clone());
                let sim = build_sim_dataset(&planner, &track, &model, &self.space, &self.prior_grid, cache)?;
                Some(sim.dataset)
            }
            (Mode::Prior, None, None) => {
                return Err(bad("prior mode needs `prior_dataset` or `logs`".into()));
            }
        };
        if let Some(d) = &prior {
            if d.dim() != self.space.dim() {
                return Err(bad(format!(
                    "prior dataset has dimension {}, the search space {}",
                    d.dim(),
                    self.space.dim()
                )));
            }
        }
        Ok(Resolved {
            config: self,
            track,
            prior,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

/// Per-stage accelerations; `s` holds the stage start points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelerationProfile {
    pub s: Vec<f64>,
    pub a_x: Vec<f64>,
    pub a_y: Vec<f64>,
}

/// Accelerations divided by the traction-ellipse semiaxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GgSamples {
    pub a_x_norm: Vec<f64>,
    pub a_y_norm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPayload {
    pub lap_time: f64,
    pub velocity: VelocityProfile,
    pub acceleration: AccelerationProfile,
    pub gg: GgSamples,
}

/// One planned parameter set. `trajectory` is absent when planning failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanPayload {
    pub xi: Vec<f64>,
    pub theta: [f64; N_FEATURES],
    pub trajectory: Option<TrajectoryPayload>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPayload {
    /// 1-based number of this query.
    pub iteration: usize,
    pub a: PlanPayload,
    pub b: PlanPayload,
}

pub fn trajectory_payload(traj: &Trajectory, planner: &PlannerConfig) -> prefdrive_core::Result<TrajectoryPayload> {
    let n = traj.horizon();
    let stages = &traj.s_grid()[..n];
    let a_y = (0..n).map(|k| traj.lateral_accel(k)).collect::<prefdrive_core::Result<Vec<_>>>()?;
    let (gx, gy) = planner.limits.normalized_accelerations(traj).into_iter().unzip();
    Ok(TrajectoryPayload {
        lap_time: traj.lap_time()?,
        velocity: VelocityProfile {
            s: traj.s_grid().to_vec(),
            v: traj.speeds(),
        },
        acceleration: AccelerationProfile {
            s: stages.to_vec(),
            a_x: traj.inputs().iter().map(|u| u.a_x).collect(),
            a_y,
        },
        gg: GgSamples {
            a_x_norm: gx,
            a_y_norm: gy,
        },
    })
}

#[derive(Clone, Debug)]
pub struct SessionEngine {
    pub resolved: Resolved,
    planner: Planner,
    cache: PlanCache,
    state: PboState,
}

impl SessionEngine {
    pub fn new(resolved: Resolved, cache: PlanCache) -> prefdrive_core::Result<Self> {
        let cfg = &resolved.config;
        let mut pbo = cfg.pbo.clone();
        pbo.seed = cfg.seed;
        let state = match &resolved.prior {
            Some(d) => PboState::initialize_with_prior(d.clone(), cfg.space.clone(), pbo)?,
            None => PboState::new(cfg.space.clone(), pbo)?,
        };
        Ok(Self {
            planner: Planner::new(cfg.planner.clone()),
            resolved,
            cache,
            state,
        })
    }

    pub fn budget(&self) -> usize {
        self.resolved.config.budget
    }

    /// Answered queries so far.
    pub fn iteration(&self) -> usize {
        self.state.iteration()
    }

    pub fn state(&self) -> &PboState {
        &self.state
    }

    pub fn plan_payload(&self, xi: &[f64]) -> prefdrive_core::Result<PlanPayload> {
        let space = &self.resolved.config.space;
        let params = space.params(xi)?;
        let (trajectory, error) = match self.cache.plan(&self.planner, &self.resolved.track, &params) {
            Ok(t) => (Some(trajectory_payload(&t, &self.resolved.config.planner)?), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(PlanPayload {
            xi: xi.to_vec(),
            theta: space.theta(xi)?,
            trajectory,
            error,
        })
    }

    pub fn propose(&self) -> prefdrive_core::Result<QueryPayload> {
        let p = self.state.propose_pair()?;
        Ok(QueryPayload {
            iteration: self.iteration() + 1,
            a: self.plan_payload(&p.a)?,
            b: self.plan_payload(&p.b)?,
        })
    }

    pub fn answer(&mut self, a: &[f64], b: &[f64], choice: Choice) -> prefdrive_core::Result<()> {
        self.state.update_dataset(a, b, choice)
    }

    pub fn incumbent(&self) -> prefdrive_core::Result<PlanPayload> {
        let xi = self.state.best_parameters()?;
        self.plan_payload(&xi)
    }
}
