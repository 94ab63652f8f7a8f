//! Planned trajectories, comfort features and the parameterized stage cost.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::track::Track;
use crate::vehicle::{euler_step_with, step_time, ControlInput, VehicleState};

/// Number of comfort features / weight exponents.
pub const N_FEATURES: usize = 5;

pub const FEATURE_NAMES: [&str; N_FEATURES] = ["a_x_pos", "a_x_neg", "a_y", "j_x", "j_y"];

/// Exponent parameters of the feature weights, `w_i = 10^theta_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    theta: [f64; N_FEATURES],
    lower: [f64; N_FEATURES],
    upper: [f64; N_FEATURES],
}

impl PlannerParams {
    pub const DEFAULT_LOWER: f64 = -2.0;
    pub const DEFAULT_UPPER: f64 = 2.0;

    pub fn new(
        theta: [f64; N_FEATURES],
        lower: [f64; N_FEATURES],
        upper: [f64; N_FEATURES],
    ) -> Result<Self> {
        for i in 0..N_FEATURES {
            if !(lower[i] <= upper[i]) {
                return Err(Error::InvalidArgument(format!("empty bound interval {i}")));
            }
            if !(theta[i] >= lower[i] && theta[i] <= upper[i]) {
                return Err(Error::InvalidArgument(format!(
                    "theta[{i}] = {} outside [{}, {}]",
                    theta[i], lower[i], upper[i]
                )));
            }
        }
        Ok(Self { theta, lower, upper })
    }

    /// Parameters within the default box `[-2, 2]^5`.
    pub fn with_default_bounds(theta: [f64; N_FEATURES]) -> Result<Self> {
        Self::new(
            theta,
            [Self::DEFAULT_LOWER; N_FEATURES],
            [Self::DEFAULT_UPPER; N_FEATURES],
        )
    }

    /// Parameters with a box that just contains `theta`; for studies outside the
    /// default search space (e.g. near-pure travel-time costs).
    pub fn unbounded(theta: [f64; N_FEATURES]) -> Self {
        Self {
            theta,
            lower: theta,
            upper: theta,
        }
    }

    pub fn theta(&self) -> &[f64; N_FEATURES] {
        &self.theta
    }

    pub fn bounds(&self) -> (&[f64; N_FEATURES], &[f64; N_FEATURES]) {
        (&self.lower, &self.upper)
    }

    pub fn weights(&self) -> [f64; N_FEATURES] {
        self.theta.map(|t| 10f64.powf(t))
    }
}

/// Accessor tag for the per-stage decision quantities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Var {
    V,
    D,
    Chi,
    Ax,
    Kappa,
}

/// Travel time and feature vector of stage `k` of a horizon with `n` stages.
///
/// Jerks are forward differences over the stage travel time; the last stage
/// repeats the difference of stage `n - 2`, and a single-stage horizon has
/// zero jerk.
pub(crate) fn stage_terms<T: Scalar>(
    get: &impl Fn(usize, Var) -> T,
    k: usize,
    n: usize,
    kappa_ref: &[f64],
    h: &[f64],
) -> (T, [T; N_FEATURES]) {
    let dt_at = |i: usize| step_time(get(i, Var::V), get(i, Var::D), get(i, Var::Chi), kappa_ref[i], h[i]);
    let ay_at = |i: usize| get(i, Var::V).sqr() * get(i, Var::Kappa);
    let dt = dt_at(k);
    let a = get(k, Var::Ax);
    let ay = ay_at(k);
    let (jx, jy) = if n >= 2 {
        let m = k.min(n - 2);
        let dtm = if m == k { dt } else { dt_at(m) };
        let ay_m = if m == k { ay } else { ay_at(m) };
        (
            (get(m + 1, Var::Ax) - get(m, Var::Ax)) / dtm,
            (ay_at(m + 1) - ay_m) / dtm,
        )
    } else {
        (T::cst(0.0), T::cst(0.0))
    };
    (
        dt,
        [
            a.pos_part().sqr(),
            a.neg_part().sqr(),
            ay.sqr(),
            jx.sqr(),
            jy.sqr(),
        ],
    )
}

/// `l = Δt + wᵀ φ Δt`
pub(crate) fn stage_cost_expr<T: Scalar>(
    get: &impl Fn(usize, Var) -> T,
    k: usize,
    n: usize,
    kappa_ref: &[f64],
    h: &[f64],
    weights: &[f64; N_FEATURES],
) -> T {
    let (dt, phi) = stage_terms(get, k, n, kappa_ref, h);
    let mut comfort = phi[0] * weights[0];
    for i in 1..N_FEATURES {
        comfort = comfort + phi[i] * weights[i];
    }
    dt + comfort * dt
}

/// State/input sequence over the spatial grid. Derived quantities are always
/// recomputed from states and inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    s: Vec<f64>,
    kappa_ref: Vec<f64>,
    states: Vec<VehicleState>,
    inputs: Vec<ControlInput>,
}

impl Trajectory {
    /// Trajectory on the first `inputs.len() + 1` grid points of `track`.
    pub fn new(track: &Track, states: Vec<VehicleState>, inputs: Vec<ControlInput>) -> Result<Self> {
        let n = inputs.len();
        if states.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                got: states.len(),
            });
        }
        if n == 0 || n > track.steps() {
            return Err(Error::HorizonTooLong {
                horizon: n,
                steps: track.steps(),
            });
        }
        Ok(Self {
            s: track.s_grid()[..=n].to_vec(),
            kappa_ref: track.kappa_ref()[..=n].to_vec(),
            states,
            inputs,
        })
    }

    /// Euler rollout of `inputs` from `x0`.
    pub fn rollout(track: &Track, x0: VehicleState, inputs: Vec<ControlInput>) -> Result<Self> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0);
        for (k, u) in inputs.iter().enumerate() {
            let h = track.step_length(k)?;
            let next = euler_step_with(&states[k], u, track.kappa_ref()[k], h)?;
            states.push(next);
        }
        Self::new(track, states, inputs)
    }

    /// Number of stages `N`.
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn inputs(&self) -> &[ControlInput] {
        &self.inputs
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s
    }

    pub fn kappa_ref(&self) -> &[f64] {
        &self.kappa_ref
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.v).collect()
    }

    pub(crate) fn steps(&self) -> Vec<f64> {
        self.s.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn check_stage(&self, k: usize) -> Result<()> {
        if k >= self.horizon() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.horizon(),
            });
        }
        Ok(())
    }

    fn get(&self, i: usize, var: Var) -> f64 {
        match var {
            Var::V => self.states[i].v,
            Var::D => self.states[i].d,
            Var::Chi => self.states[i].chi,
            Var::Ax => self.inputs[i].a_x,
            Var::Kappa => self.inputs[i].kappa,
        }
    }

    /// Validates the model guards at every stage touched by stage `k`'s terms.
    fn check_guards(&self, k: usize) -> Result<()> {
        let n = self.horizon();
        self.states[k].check(self.kappa_ref[k])?;
        if n >= 2 {
            let m = k.min(n - 2);
            self.states[m].check(self.kappa_ref[m])?;
        }
        Ok(())
    }

    /// `Δt_k = h_k / ṡ(x_k, s_k)`
    pub fn travel_time(&self, k: usize) -> Result<f64> {
        self.check_stage(k)?;
        let x = &self.states[k];
        x.check(self.kappa_ref[k])?;
        Ok(step_time(x.v, x.d, x.chi, self.kappa_ref[k], self.s[k + 1] - self.s[k]))
    }

    /// `a_y = v² kappa`
    pub fn lateral_accel(&self, k: usize) -> Result<f64> {
        self.check_stage(k)?;
        Ok(self.states[k].v.powi(2) * self.inputs[k].kappa)
    }

    /// Forward-difference jerks `(j_x, j_y)` at stage `k`.
    pub fn jerks(&self, k: usize) -> Result<(f64, f64)> {
        self.check_stage(k)?;
        let n = self.horizon();
        if n < 2 {
            return Ok((0.0, 0.0));
        }
        let m = k.min(n - 2);
        let dt = self.travel_time(m)?;
        let jx = (self.inputs[m + 1].a_x - self.inputs[m].a_x) / dt;
        let jy = (self.lateral_accel(m + 1)? - self.lateral_accel(m)?) / dt;
        Ok((jx, jy))
    }

    pub fn feature_vector(&self, k: usize) -> Result<[f64; N_FEATURES]> {
        self.check_stage(k)?;
        self.check_guards(k)?;
        let steps = self.steps();
        let get = |i: usize, v: Var| self.get(i, v);
        Ok(stage_terms(&get, k, self.horizon(), &self.kappa_ref, &steps).1)
    }

    pub fn stage_cost(&self, k: usize, params: &PlannerParams) -> Result<f64> {
        self.check_stage(k)?;
        self.check_guards(k)?;
        let steps = self.steps();
        let get = |i: usize, v: Var| self.get(i, v);
        Ok(stage_cost_expr(
            &get,
            k,
            self.horizon(),
            &self.kappa_ref,
            &steps,
            &params.weights(),
        ))
    }

    /// Sum of stage costs (the terminal cost is zero).
    pub fn total_cost(&self, params: &PlannerParams) -> Result<f64> {
        (0..self.horizon()).map(|k| self.stage_cost(k, params)).sum()
    }

    /// `Σ Δt_k`
    pub fn lap_time(&self) -> Result<f64> {
        (0..self.horizon()).map(|k| self.travel_time(k)).sum()
    }

    /// Largest `‖x_{k+1} - euler_step(x_k, u_k)‖_∞` over all stages.
    pub fn max_defect(&self) -> Result<f64> {
        let mut worst = 0.0_f64;
        for k in 0..self.horizon() {
            let h = self.s[k + 1] - self.s[k];
            let pred = euler_step_with(&self.states[k], &self.inputs[k], self.kappa_ref[k], h)?;
            let next = &self.states[k + 1];
            worst = worst
                .max((pred.v - next.v).abs())
                .max((pred.d - next.d).abs())
                .max((pred.chi - next.chi).abs());
        }
        Ok(worst)
    }

    /// Writes `s,v,d,chi,a_x,kappa,a_y,dt`; the final grid point has no input
    /// and leaves the last four columns empty.
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "v", "d", "chi", "a_x", "kappa", "a_y", "dt"])?;
        for k in 0..self.states.len() {
            let x = &self.states[k];
            let mut row = vec![
                self.s[k].to_string(),
                x.v.to_string(),
                x.d.to_string(),
                x.chi.to_string(),
            ];
            if k < self.horizon() {
                row.push(self.inputs[k].a_x.to_string());
                row.push(self.inputs[k].kappa.to_string());
                row.push(self.lateral_accel(k)?.to_string());
                row.push(self.travel_time(k)?.to_string());
            } else {
                row.extend(std::iter::repeat_n(String::new(), 4));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(std::fs::File::create(path)?)
    }
}
