//! The paired study of both methods against a simulated primary decision
//! maker, with regret bookkeeping and result export.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use prefdrive_core::cache::PlanCache;
use prefdrive_core::driver::{
    build_sim_dataset, fit_driver_model, generate_logs, grid_utilities, read_logs_file, virtual_preference,
    virtual_utility, DriverModel, DrivingLog, UtilityTable,
};
use prefdrive_core::pbo::{Choice, ParamSpace, PboState};
use prefdrive_core::planner::Planner;
use prefdrive_core::{PlannerParams, Track, Trajectory, N_FEATURES};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, Method};
use crate::metrics::{aggregate, quantile, RegretStats, StyleHull};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] prefdrive_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("no successful trial for method {0}")]
    NoSuccessfulTrial(&'static str),
}

type Result<T> = std::result::Result<T, RunError>;

/// Prefers the parameters whose full-lap plan is more likely under its
/// driver model.
#[derive(Clone, Debug)]
pub struct SimulatedDm {
    pub model: DriverModel,
    pub planner: Planner,
    pub track: Track,
    pub cache: PlanCache,
}

pub fn simulated_primary_dm(model: DriverModel, planner: Planner, track: Track, cache: PlanCache) -> SimulatedDm {
    SimulatedDm {
        model,
        planner,
        track,
        cache,
    }
}

impl SimulatedDm {
    pub fn prefer(&self, a: &PlannerParams, b: &PlannerParams) -> prefdrive_core::Result<Choice> {
        virtual_preference(&self.model, &self.planner, &self.track, a, b, &self.cache)
    }

    pub fn plan(&self, p: &PlannerParams) -> prefdrive_core::Result<Trajectory> {
        self.cache.plan(&self.planner, &self.track, p)
    }

    pub fn utility(&self, p: &PlannerParams) -> prefdrive_core::Result<f64> {
        virtual_utility(&self.model, &self.plan(p)?)
    }
}

/// Brute-force optimum of a decision maker's utility over a grid.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub utility: f64,
    pub theta: [f64; N_FEATURES],
    pub table: UtilityTable,
    pub excluded: usize,
}

pub fn oracle_best_utility(dm: &SimulatedDm, space: &ParamSpace, per_dim: usize) -> prefdrive_core::Result<Oracle> {
    let (table, excluded) = grid_utilities(&dm.planner, &dm.track, &dm.model, space, per_dim, &dm.cache)?;
    let best = table
        .best()
        .ok_or_else(|| prefdrive_core::Error::NotConverged("every oracle grid point failed".into()))?;
    Ok(Oracle {
        utility: best.utility,
        theta: best.theta,
        table: table.clone(),
        excluded,
    })
}

/// One line of a run log. Iteration 0 describes the initialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub trial: usize,
    pub method: Method,
    pub iteration: usize,
    pub theta_a: Option<[f64; N_FEATURES]>,
    pub theta_b: Option<[f64; N_FEATURES]>,
    pub eubo: Option<f64>,
    pub choice: Option<Choice>,
    /// Primary-decision-maker utilities; `None` when the plan failed.
    pub utility_a: Option<f64>,
    pub utility_b: Option<f64>,
    /// Grid regret of the better sample of this query.
    pub regret: Option<f64>,
    /// Grid regret of the best sample queried so far.
    pub simple_regret: Option<f64>,
    pub incumbent: [f64; N_FEATURES],
    pub incumbent_utility: Option<f64>,
    pub incumbent_regret: Option<f64>,
}

struct TrialRun {
    records: Vec<RegretRecord>,
    /// `(iteration, sample, trajectory)` of every queried plan.
    queries: Vec<(usize, char, Trajectory)>,
    incumbent: Option<Trajectory>,
}

struct Study<'a> {
    cfg: &'a ExperimentConfig,
    space: &'a ParamSpace,
    dm: &'a SimulatedDm,
    oracle: f64,
    prior: &'a prefdrive_core::gp::PreferenceDataset,
}

impl Study<'_> {
    fn regret(&self, u: f64) -> f64 {
        (self.oracle - u).max(0.0)
    }

    fn run_trial(&self, trial: usize, method: Method) -> Result<TrialRun> {
        let mut pbo = self.cfg.pbo.clone();
        pbo.seed = self.cfg.trial_seed(trial);
        let mut state = match method {
            Method::Prior => PboState::initialize_with_prior(self.prior.clone(), self.space.clone(), pbo)?,
            Method::Standard => PboState::new(self.space.clone(), pbo)?,
        };
        let mut records = Vec::new();
        let mut queries = Vec::new();
        let mut best: Option<f64> = None;
        let incumbent_record = |state: &PboState| -> Result<([f64; N_FEATURES], Option<f64>)> {
            let xi = state.best_parameters()?;
            let theta = self.space.theta(&xi)?;
            let u = self.dm.utility(&self.space.params(&xi)?).ok();
            Ok((theta, u))
        };
        let (theta, u) = incumbent_record(&state)?;
        records.push(RegretRecord {
            trial,
            method,
            iteration: 0,
            theta_a: None,
            theta_b: None,
            eubo: None,
            choice: None,
            utility_a: None,
            utility_b: None,
            regret: None,
            simple_regret: None,
            incumbent: theta,
            incumbent_utility: u,
            incumbent_regret: u.map(|u| self.regret(u)),
        });
        for n in 1..=self.cfg.budget {
            let prop = state.propose_pair()?;
            let (pa, pb) = (self.space.params(&prop.a)?, self.space.params(&prop.b)?);
            let choice = self.dm.prefer(&pa, &pb)?;
            let mut utils = [None, None];
            for (slot, (label, p)) in utils.iter_mut().zip([('a', &pa), ('b', &pb)]) {
                if let Ok(t) = self.dm.plan(p) {
                    *slot = Some(virtual_utility(&self.dm.model, &t)?);
                    queries.push((n, label, t));
                }
            }
            let top = utils.iter().flatten().copied().fold(None, |m: Option<f64>, u| Some(m.map_or(u, |m| m.max(u))));
            if let Some(u) = top {
                best = Some(best.map_or(u, |b| b.max(u)));
            }
            state.update_dataset(&prop.a, &prop.b, choice)?;
            let (theta, u) = incumbent_record(&state)?;
            records.push(RegretRecord {
                trial,
                method,
                iteration: n,
                theta_a: Some(pa.theta().to_owned()),
                theta_b: Some(pb.theta().to_owned()),
                eubo: Some(prop.eubo),
                choice: Some(choice),
                utility_a: utils[0],
                utility_b: utils[1],
                regret: top.map(|u| self.regret(u)),
                simple_regret: best.map(|u| self.regret(u)),
                incumbent: theta,
                incumbent_utility: u,
                incumbent_regret: u.map(|u| self.regret(u)),
            });
        }
        let xi = state.best_parameters()?;
        let incumbent = self.dm.plan(&self.space.params(&xi)?).ok();
        Ok(TrialRun {
            records,
            queries,
            incumbent,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successful_trials: Vec<usize>,
    pub failed_trials: Vec<FailedTrial>,
    /// Queried samples over all successful trials.
    pub queried_samples: usize,
    /// Fraction of queried samples below the primary utility's lower
    /// quartile over the oracle grid (failed plans count as below).
    pub bottom_quartile_fraction: f64,
    /// Fraction of normalized acceleration points of queried plans outside
    /// the hull of the virtual decision maker's top-decile grid plans.
    pub outside_hull_fraction: f64,
    pub regret: Vec<RegretStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub grid_points: usize,
    pub candidate_pairs: u64,
    pub selected_pairs: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub oracle_utility: f64,
    pub oracle_theta: [f64; N_FEATURES],
    pub oracle_grid_points: usize,
    pub oracle_excluded: usize,
    pub bottom_quartile_threshold: f64,
    pub prior: PriorSummary,
    pub methods: Vec<MethodSummary>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    /// Per-method, per-successful-trial simple regret after each iteration.
    pub curves: BTreeMap<Method, Vec<Vec<f64>>>,
    pub records: BTreeMap<Method, Vec<Vec<RegretRecord>>>,
}

impl ExperimentOutcome {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.methods.iter().find(|s| s.method == m)
    }
}

fn load_logs(cfg: &ExperimentConfig, track: &Track) -> Result<Vec<DrivingLog>> {
    Ok(match &cfg.logs {
        Some(p) => read_logs_file(p)?,
        None => generate_logs(track, &cfg.synth)?,
    })
}

/// Fits the virtual (all styles but the held-out one) and primary
/// (held-out style) driver models.
pub fn fit_models(cfg: &ExperimentConfig, track: &Track) -> Result<(DriverModel, DriverModel)> {
    let logs = load_logs(cfg, track)?;
    let (held, rest): (Vec<DrivingLog>, Vec<DrivingLog>) =
        logs.into_iter().partition(|l| l.style == cfg.heldout_style);
    if held.is_empty() {
        return Err(ConfigError::Invalid(format!("no laps of held-out style `{}`", cfg.heldout_style)).into());
    }
    Ok((fit_driver_model(&rest, track)?, fit_driver_model(&held, track)?))
}

pub fn load_track(cfg: &ExperimentConfig) -> Result<Track> {
    Ok(match &cfg.track {
        Some(p) => Track::read_csv(p)?,
        None => Track::desk_scale(),
    })
}

fn jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_queries(path: &Path, queries: &[(usize, char, Trajectory)], cfg: &ExperimentConfig) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "sample", "s", "v", "a_x_norm", "a_y_norm"])?;
    for (n, label, t) in queries {
        let acc = cfg.planner.limits.normalized_accelerations(t);
        for (k, (ax, ay)) in acc.iter().enumerate() {
            w.write_record([
                n.to_string(),
                label.to_string(),
                t.s_grid()[k].to_string(),
                t.states()[k].v.to_string(),
                ax.to_string(),
                ay.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs every trial of the requested methods and writes all result files
/// under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, methods: &[Method]) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("runs"))?;
    fs::create_dir_all(out.join("plot"))?;
    let track = load_track(cfg)?;
    let (virtual_model, primary_model) = fit_models(cfg, &track)?;
    virtual_model.write_json(out.join("driver_virtual.json"))?;
    primary_model.write_json(out.join("driver_primary.json"))?;
    let planner = Planner::new(cfg.planner.clone());
    let cache = PlanCache::new(cfg.cache_dir());
    let space = &cfg.space;

    let sim = build_sim_dataset(&planner, &track, &virtual_model, space, &cfg.prior_grid, &cache)?;
    sim.dataset.write_file(out.join("prior_dataset.csv"))?;
    sim.table.write_csv(out.join("utility_table_virtual.csv"))?;

    let dm = simulated_primary_dm(primary_model, planner.clone(), track.clone(), cache.clone());
    let oracle = oracle_best_utility(&dm, space, cfg.oracle_grid())?;
    oracle.table.write_csv(out.join("utility_table_primary.csv"))?;
    let utilities: Vec<f64> = oracle.table.rows.iter().map(|r| r.utility).collect();
    let q25 = quantile(&utilities, 0.25).expect("oracle table is non-empty");

    // reference style region: top decile of the virtual decision maker's grid
    let mut ranked = sim.table.rows.clone();
    ranked.sort_by(|a, b| b.utility.total_cmp(&a.utility).then(a.grid_index.cmp(&b.grid_index)));
    let top = ranked.len().div_ceil(10);
    let mut ref_points = Vec::new();
    for row in &ranked[..top] {
        let t = cache.plan(&planner, &track, &space.params(&space.project(&row.theta))?)?;
        ref_points.extend(cfg.planner.limits.normalized_accelerations(&t));
    }
    let hull = StyleHull::new(&ref_points);
    {
        let mut w = csv::Writer::from_path(out.join("plot").join("style_hull.csv"))?;
        w.write_record(["a_x_norm", "a_y_norm"])?;
        for (x, y) in hull.vertices() {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
    }

    let study = Study {
        cfg,
        space,
        dm: &dm,
        oracle: oracle.utility,
        prior: &sim.dataset,
    };
    let jobs: Vec<(Method, usize)> =
        methods.iter().flat_map(|&m| (0..cfg.trials).map(move |t| (m, t))).collect();
    let results: Vec<Result<TrialRun>> = jobs.par_iter().map(|&(m, t)| study.run_trial(t, m)).collect();

    let mut summaries = Vec::new();
    let mut curves = BTreeMap::new();
    let mut all_records = BTreeMap::new();
    for &m in methods {
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        let mut method_curves = Vec::new();
        let mut method_records = Vec::new();
        let (mut queried, mut bottom, mut points, mut outside) = (0usize, 0usize, 0usize, 0usize);
        for ((jm, t), r) in jobs.iter().zip(&results) {
            if *jm != m {
                continue;
            }
            let run = match r {
                Ok(run) => run,
                Err(e) => {
                    log::error!("{} trial {t} failed: {e}", m.name());
                    failed.push(FailedTrial {
                        trial: *t,
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let stem = format!("{}-trial{t}", m.name());
            jsonl(&out.join("runs").join(format!("{stem}.jsonl")), &run.records)?;
            write_queries(&out.join("plot").join(format!("{stem}-queries.csv")), &run.queries, cfg)?;
            if let Some(inc) = &run.incumbent {
                inc.write_csv(out.join("plot").join(format!("{stem}-incumbent.csv")))?;
            }
            for rec in &run.records[1..] {
                for u in [rec.utility_a, rec.utility_b] {
                    queried += 1;
                    if u.is_none_or(|u| u < q25) {
                        bottom += 1;
                    }
                }
            }
            for (_, _, traj) in &run.queries {
                for p in cfg.planner.limits.normalized_accelerations(traj) {
                    points += 1;
                    if !hull.contains(p) {
                        outside += 1;
                    }
                }
            }
            method_curves.push(run.records[1..].iter().map(|r| r.simple_regret.unwrap_or(f64::NAN)).collect::<Vec<_>>());
            method_records.push(run.records.clone());
            ok.push(*t);
        }
        if ok.is_empty() {
            return Err(RunError::NoSuccessfulTrial(m.name()));
        }
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        summaries.push(MethodSummary {
            method: m,
            successful_trials: ok,
            failed_trials: failed,
            queried_samples: queried,
            bottom_quartile_fraction: frac(bottom, queried),
            outside_hull_fraction: frac(outside, points),
            regret: aggregate(&method_curves),
        });
        curves.insert(m, method_curves);
        all_records.insert(m, method_records);
    }

    let mut w = csv::Writer::from_path(out.join("regret_summary.csv"))?;
    w.write_record(["method", "iteration", "trials", "mean", "median", "min", "max"])?;
    for s in &summaries {
        for r in &s.regret {
            w.write_record([
                s.method.name().to_string(),
                r.iteration.to_string(),
                r.trials.to_string(),
                r.mean.to_string(),
                r.median.to_string(),
                r.min.to_string(),
                r.max.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let summary = ExperimentSummary {
        oracle_utility: oracle.utility,
        oracle_theta: oracle.theta,
        oracle_grid_points: oracle.table.rows.len() + oracle.excluded,
        oracle_excluded: oracle.excluded,
        bottom_quartile_threshold: q25,
        prior: PriorSummary {
            grid_points: sim.grid_points,
            candidate_pairs: sim.candidate_pairs,
            selected_pairs: sim.selected_pairs,
            excluded: sim.excluded,
        },
        methods: summaries,
    };
    let f = BufWriter::new(File::create(out.join("summary.json"))?);
    serde_json::to_writer_pretty(f, &summary)?;
    Ok(ExperimentOutcome {
        summary,
        curves,
        records: all_records,
    })
}
