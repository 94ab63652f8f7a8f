//! Grid utilities of the virtual decision maker and the prior dataset built
//! from the most separated pairs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{virtual_utility, DriverModel};
use crate::cache::PlanCache;
use crate::error::{Error, Result};
use crate::gp::{PreferenceDataset, Source};
use crate::pbo::{Choice, ParamSpace};
use crate::planner::Planner;
use crate::track::Track;
use crate::trajectory::{PlannerParams, N_FEATURES};

pub const UTILITY_TABLE_HEADER: [&str; 7] =
    ["grid_index", "theta_1", "theta_2", "theta_3", "theta_4", "theta_5", "utility"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Samples per active dimension, bounds included.
    pub per_dim: usize,
    /// Number of selected pairs; `3^dim` when unset.
    pub pairs: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { per_dim: 5, pairs: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtilityRow {
    pub grid_index: usize,
    pub theta: [f64; N_FEATURES],
    pub utility: f64,
}

/// Utilities of the successfully planned grid points, in grid order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UtilityTable {
    pub rows: Vec<UtilityRow>,
}

impl UtilityTable {
    pub fn best(&self) -> Option<&UtilityRow> {
        self.rows.iter().max_by(|a, b| a.utility.total_cmp(&b.utility).then(b.grid_index.cmp(&a.grid_index)))
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(UTILITY_TABLE_HEADER)?;
        for r in &self.rows {
            let mut rec = vec![r.grid_index.to_string()];
            rec.extend(r.theta.iter().map(f64::to_string));
            rec.push(r.utility.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        if rdr.headers()?.iter().ne(UTILITY_TABLE_HEADER) {
            return Err(Error::Parse(format!("utility table header must be `{}`", UTILITY_TABLE_HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|e| Error::Parse(format!("utility table field `{}`: {e}", &rec[i])))
            };
            let mut theta = [0.0; N_FEATURES];
            for (j, t) in theta.iter_mut().enumerate() {
                *t = num(j + 1)?;
            }
            rows.push(UtilityRow {
                grid_index: rec[0].parse().map_err(|e| Error::Parse(format!("grid index: {e}")))?,
                theta,
                utility: num(N_FEATURES + 1)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(std::fs::File::create(path)?)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct SimDataset {
    /// Sim-flagged comparisons over the referenced grid points only.
    pub dataset: PreferenceDataset,
    pub table: UtilityTable,
    pub grid_points: usize,
    /// Unordered pairs of successfully planned points.
    pub candidate_pairs: u64,
    pub selected_pairs: usize,
    /// Grid points whose plan failed.
    pub excluded: usize,
}

#[derive(PartialEq)]
struct Ranked(f64, Reverse<(usize, usize)>);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// The `k` pairs with the largest utility difference as `(winner, loser)`
/// positions, largest difference first. Ties prefer the lexicographically
/// smaller index pair; pairs of equal utility are never selected.
pub fn select_top_pairs(utilities: &[f64], k: usize) -> Vec<(usize, usize)> {
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    if k == 0 {
        return Vec::new();
    }
    for i in 0..utilities.len() {
        for j in i + 1..utilities.len() {
            let d = (utilities[i] - utilities[j]).abs();
            if !(d > 0.0) {
                continue;
            }
            let item = Ranked(d, Reverse((i, j)));
            if heap.len() < k {
                heap.push(Reverse(item));
            } else if heap.peek().is_some_and(|w| item > w.0) {
                heap.pop();
                heap.push(Reverse(item));
            }
        }
    }
    let mut out: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    out.sort_by(|a, b| b.cmp(a));
    out.into_iter()
        .map(|Ranked(_, Reverse((i, j)))| if utilities[i] > utilities[j] { (i, j) } else { (j, i) })
        .collect()
}

/// Utilities of every grid point of `space` that plans successfully, and the
/// number of excluded points.
pub fn grid_utilities(
    planner: &Planner,
    track: &Track,
    model: &DriverModel,
    space: &ParamSpace,
    per_dim: usize,
    cache: &PlanCache,
) -> Result<(UtilityTable, usize)> {
    space.validate()?;
    if per_dim < 2 {
        return Err(Error::InvalidArgument("grid needs at least two samples per dimension".into()));
    }
    let points = space.grid(per_dim);
    let results: Vec<Result<f64>> = points
        .par_iter()
        .map(|xi| {
            let params = space.params(xi)?;
            let traj = cache.plan(planner, track, &params)?;
            virtual_utility(model, &traj)
        })
        .collect();
    let mut rows = Vec::new();
    let mut excluded = 0;
    for (idx, (xi, r)) in points.iter().zip(results).enumerate() {
        match r {
            Ok(u) => rows.push(UtilityRow {
                grid_index: idx,
                theta: space.theta(xi)?,
                utility: u,
            }),
            Err(e @ Error::GridMismatch(_)) => return Err(e),
            Err(e) => {
                log::warn!("grid point {idx} excluded: {e}");
                excluded += 1;
            }
        }
    }
    Ok((UtilityTable { rows }, excluded))
}

/// Plans every grid point of `space`, scores it with the driver model and
/// builds the prior dataset from the `3^dim` most separated pairs.
pub fn build_sim_dataset(
    planner: &Planner,
    track: &Track,
    model: &DriverModel,
    space: &ParamSpace,
    grid: &GridConfig,
    cache: &PlanCache,
) -> Result<SimDataset> {
    let (table, excluded) = grid_utilities(planner, track, model, space, grid.per_dim, cache)?;
    let points = space.grid(grid.per_dim);
    let rows = table.rows;
    let n_ok = rows.len() as u64;
    let k = grid.pairs.unwrap_or_else(|| 3usize.pow(space.dim() as u32));
    let utilities: Vec<f64> = rows.iter().map(|r| r.utility).collect();
    let pairs = select_top_pairs(&utilities, k);

    let mut referenced: Vec<usize> = pairs.iter().flat_map(|&(w, l)| [w, l]).collect();
    referenced.sort_unstable();
    referenced.dedup();
    let mut dataset = PreferenceDataset::new(space.dim());
    let mut slot = vec![usize::MAX; rows.len()];
    for &r in &referenced {
        slot[r] = dataset.add_input(points[rows[r].grid_index].clone())?;
    }
    for &(w, l) in &pairs {
        dataset.add_comparison(slot[w], slot[l], Source::Sim)?;
    }
    log::info!(
        "prior grid: {} points, {excluded} excluded, {} candidate pairs, {} selected",
        points.len(),
        n_ok * n_ok.saturating_sub(1) / 2,
        pairs.len()
    );
    Ok(SimDataset {
        dataset,
        table: UtilityTable { rows },
        grid_points: points.len(),
        candidate_pairs: n_ok * n_ok.saturating_sub(1) / 2,
        selected_pairs: pairs.len(),
        excluded,
    })
}

/// Prefers the parameters whose full-lap plan has the higher utility; ties
/// go to `a`. A failed plan loses against a solvable one.
pub fn virtual_preference(
    model: &DriverModel,
    planner: &Planner,
    track: &Track,
    a: &PlannerParams,
    b: &PlannerParams,
    cache: &PlanCache,
) -> Result<Choice> {
    let score = |p: &PlannerParams| cache.plan(planner, track, p).and_then(|t| virtual_utility(model, &t));
    match (score(a), score(b)) {
        (Ok(ua), Ok(ub)) => {
            if ua == ub {
                log::debug!("utility tie at {ua}, preferring a");
            }
            Ok(if ua >= ub { Choice::A } else { Choice::B })
        }
        (Ok(_), Err(e)) => {
            log::warn!("plan b failed ({e}); a wins");
            Ok(Choice::A)
        }
        (Err(e), Ok(_)) => {
            log::warn!("plan a failed ({e}); b wins");
            Ok(Choice::B)
        }
        (Err(ea), Err(eb)) => Err(Error::NotConverged(format!("both plans failed: a: {ea}; b: {eb}"))),
    }
}
