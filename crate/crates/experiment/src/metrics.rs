//! Regret aggregation and query-style statistics.

use geo::{ConvexHull, Intersects, MultiPoint, Point, Polygon};
use serde::{Deserialize, Serialize};

/// Linearly interpolated sample quantile of unsorted data (`q ∈ [0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Convex hull of a reference point cloud in the normalized g-g plane.
#[derive(Clone, Debug)]
pub struct StyleHull {
    hull: Polygon<f64>,
}

impl StyleHull {
    pub fn new(points: &[(f64, f64)]) -> Self {
        let mp: MultiPoint<f64> = points.iter().map(|&(x, y)| Point::new(x, y)).collect();
        Self { hull: mp.convex_hull() }
    }

    /// Boundary points count as inside.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        self.hull.intersects(&Point::new(p.0, p.1))
    }

    pub fn vertices(&self) -> Vec<(f64, f64)> {
        self.hull.exterior().points().map(|p| (p.x(), p.y())).collect()
    }
}

/// Simple-regret statistics over trials at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretStats {
    pub iteration: usize,
    pub trials: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Aggregates per-trial curves (`curves[t][n]` = simple regret after
/// iteration `n + 1`).
pub fn aggregate(curves: &[Vec<f64>]) -> Vec<RegretStats> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|n| {
            let col: Vec<f64> = curves.iter().map(|c| c[n]).collect();
            RegretStats {
                iteration: n + 1,
                trials: col.len(),
                mean: mean(&col).expect("non-empty"),
                median: median(&col).expect("non-empty"),
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}
