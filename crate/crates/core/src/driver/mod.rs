//! Data-driven driver model: a heteroscedastic GP over arclength fitted to
//! velocity logs. Its log-likelihood of a planned velocity profile is the
//! virtual decision maker's utility.

mod gp1d;
mod sim;
mod synth;

pub use sim::{
    build_sim_dataset, grid_utilities, select_top_pairs, virtual_preference, GridConfig, SimDataset, UtilityRow, UtilityTable,
    UTILITY_TABLE_HEADER,
};
pub use synth::{generate_logs, StyleRecipe, SynthConfig};

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::Track;
use crate::trajectory::Trajectory;
use gp1d::{grouped_log_marginal, maximize, posterior, Bounds, Grouped};

/// Lower bound on the model variance [m²/s²].
pub const VARIANCE_FLOOR: f64 = 0.01;

pub const LOG_HEADER: [&str; 4] = ["lap_id", "style", "s", "v"];

const GRID_TOL: f64 = 1e-6;

/// One lap of velocity samples on the track grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingLog {
    pub lap_id: String,
    pub style: String,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct LogRow {
    lap_id: String,
    style: String,
    s: f64,
    v: f64,
}

impl DrivingLog {
    pub fn validate(&self, track: &Track) -> Result<()> {
        if self.s.len() != track.len() || self.v.len() != track.len() {
            return Err(Error::GridMismatch(format!(
                "lap {} has {} samples, track has {} grid points",
                self.lap_id,
                self.s.len(),
                track.len()
            )));
        }
        for (k, (s, g)) in self.s.iter().zip(track.s_grid()).enumerate() {
            if (s - g).abs() > GRID_TOL {
                return Err(Error::GridMismatch(format!(
                    "lap {} sample {k} at s = {s}, grid has {g}",
                    self.lap_id
                )));
            }
        }
        if let Some(v) = self.v.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("lap {} has speed {v}", self.lap_id)));
        }
        Ok(())
    }
}

/// Reads laps from CSV `lap_id,style,s,v`; rows of one lap must be contiguous
/// in arclength order.
pub fn read_logs<R: Read>(reader: R) -> Result<Vec<DrivingLog>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != LOG_HEADER {
        return Err(Error::Parse(format!(
            "log header must be `{}`, found `{}`",
            LOG_HEADER.join(","),
            headers.join(",")
        )));
    }
    let mut laps: Vec<DrivingLog> = Vec::new();
    for row in rdr.deserialize::<LogRow>() {
        let row = row?;
        match laps.last_mut() {
            Some(l) if l.lap_id == row.lap_id => {
                if l.style != row.style {
                    return Err(Error::Parse(format!("lap {} changes style", row.lap_id)));
                }
                l.s.push(row.s);
                l.v.push(row.v);
            }
            _ => {
                if laps.iter().any(|l| l.lap_id == row.lap_id) {
                    return Err(Error::Parse(format!("rows of lap {} are not contiguous", row.lap_id)));
                }
                laps.push(DrivingLog {
                    lap_id: row.lap_id,
                    style: row.style,
                    s: vec![row.s],
                    v: vec![row.v],
                });
            }
        }
    }
    Ok(laps)
}

pub fn write_logs<W: Write>(writer: W, logs: &[DrivingLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LOG_HEADER)?;
    for l in logs {
        for (s, v) in l.s.iter().zip(&l.v) {
            w.write_record([l.lap_id.as_str(), l.style.as_str(), &s.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_logs_file(path: impl AsRef<Path>) -> Result<Vec<DrivingLog>> {
    read_logs(std::fs::File::open(path)?)
}

pub fn write_logs_file(path: impl AsRef<Path>, logs: &[DrivingLog]) -> Result<()> {
    write_logs(std::fs::File::create(path)?, logs)
}

/// Per-grid-point Gaussian velocity model with diagonal covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverModel {
    pub s: Vec<f64>,
    /// Posterior mean velocity [m/s].
    pub mean: Vec<f64>,
    /// Total predictive variance of a new lap, floored [m²/s²].
    pub variance: Vec<f64>,
    /// Input-dependent noise part of `variance` [m²/s²].
    pub noise_variance: Vec<f64>,
    pub styles: Vec<String>,
    pub laps: Vec<String>,
}

impl DriverModel {
    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    /// Log-likelihood of a velocity profile sampled on the model grid.
    pub fn log_likelihood(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.mean.len() {
            return Err(Error::GridMismatch(format!(
                "{} velocities for a {}-point model",
                v.len(),
                self.mean.len()
            )));
        }
        Ok(v.iter()
            .zip(self.mean.iter().zip(&self.variance))
            .map(|(v, (m, s2))| -0.5 * (2.0 * PI * s2).ln() - (v - m).powi(2) / (2.0 * s2))
            .sum())
    }
}

const REFINEMENT_PASSES: usize = 3;
const NM_EVALS: usize = 300;

/// Most-likely heteroscedastic fit: a homoscedastic GP for the mean, then
/// alternating a GP on log residual variances and a mean GP with that noise.
pub fn fit_driver_model(logs: &[DrivingLog], track: &Track) -> Result<DriverModel> {
    if logs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two laps for a variance estimate, got {}",
            logs.len()
        )));
    }
    for l in logs {
        l.validate(track)?;
    }
    // canonical order so the result does not depend on the input order
    let mut sorted: Vec<&DrivingLog> = logs.iter().collect();
    sorted.sort_by(|a, b| (&a.style, &a.lap_id, &a.v).partial_cmp(&(&b.style, &b.lap_id, &b.v)).expect("finite speeds"));
    let n = track.len();
    let laps = sorted.len();
    let lf = laps as f64;
    let s = track.s_grid();
    let mean: Vec<f64> = (0..n).map(|k| sorted.iter().map(|l| l.v[k]).sum::<f64>() / lf).collect();
    let scatter: Vec<f64> = (0..n)
        .map(|k| sorted.iter().map(|l| (l.v[k] - mean[k]).powi(2)).sum())
        .collect();
    let grouped = Grouped {
        s,
        mean: &mean,
        scatter: &scatter,
        laps,
    };
    let length = track.length();
    let h_min = (1..n).map(|k| s[k] - s[k - 1]).fold(f64::INFINITY, f64::min);
    let prior_mean = mean.iter().sum::<f64>() / n as f64;
    let spread = (mean.iter().map(|m| (m - prior_mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-2);
    let ell_starts = [length / 40.0, length / 10.0, length / 3.0];

    let mean_bounds = Bounds {
        lengthscale: (h_min, 2.0 * length),
        signal_std: (1e-3, 1e2),
        noise_std: (1e-4, 1e2),
    };
    let starts: Vec<(f64, f64, f64)> = ell_starts.iter().map(|&l| (l, spread, 0.5)).collect();
    let (h_mean, sn) = maximize(&mean_bounds, &starts, NM_EVALS, |h, sn| {
        grouped_log_marginal(&grouped, prior_mean, h, &vec![sn * sn; n])
    });
    let mut r = vec![sn * sn; n];
    let mut fit = posterior(s, &mean, prior_mean, h_mean, &r.iter().map(|v| v / lf).collect::<Vec<_>>());
    log::debug!("stage 1: lengthscale {:.2}, noise std {sn:.4}", h_mean.lengthscale);

    let noise_bounds = Bounds {
        lengthscale: (h_min, 2.0 * length),
        signal_std: (1e-3, 10.0),
        noise_std: (1e-3, 10.0),
    };
    for pass in 0..REFINEMENT_PASSES {
        // expected squared deviation of the observations from the latent mean
        let z: Vec<f64> = (0..n)
            .map(|k| {
                let e = sorted.iter().map(|l| (l.v[k] - fit.0[k]).powi(2)).sum::<f64>() / lf + fit.1[k];
                e.max(1e-8).ln()
            })
            .collect();
        let z_mean = z.iter().sum::<f64>() / n as f64;
        let zero_scatter = vec![0.0; n];
        let zg = Grouped {
            s,
            mean: &z,
            scatter: &zero_scatter,
            laps: 1,
        };
        let starts: Vec<(f64, f64, f64)> = ell_starts.iter().map(|&l| (l, 1.0, 0.5)).collect();
        let (h_noise, zn) = maximize(&noise_bounds, &starts, NM_EVALS, |h, sn| {
            grouped_log_marginal(&zg, z_mean, h, &vec![sn * sn; n])
        });
        let (log_r, _) = posterior(s, &z, z_mean, h_noise, &vec![zn * zn; n]);
        r = log_r.iter().map(|v| v.exp()).collect();

        let starts: Vec<(f64, f64, f64)> = ell_starts.iter().map(|&l| (l, spread, 1.0)).collect();
        // noise is given by `r`; the third coordinate is pinned
        let fixed_noise = Bounds {
            noise_std: (1.0, 1.0),
            ..mean_bounds
        };
        let (h, _) = maximize(&fixed_noise, &starts, NM_EVALS, |h, _| grouped_log_marginal(&grouped, prior_mean, h, &r));
        fit = posterior(s, &mean, prior_mean, h, &r.iter().map(|v| v / lf).collect::<Vec<_>>());
        log::debug!(
            "pass {}: mean lengthscale {:.2}, noise lengthscale {:.2}",
            pass + 1,
            h.lengthscale,
            h_noise.lengthscale
        );
    }

    let variance: Vec<f64> = (0..n).map(|k| (fit.1[k] + r[k]).max(VARIANCE_FLOOR)).collect();
    let mut styles: Vec<String> = sorted.iter().map(|l| l.style.clone()).collect();
    styles.dedup();
    Ok(DriverModel {
        s: s.to_vec(),
        mean: fit.0,
        variance,
        noise_variance: r,
        styles,
        laps: sorted.iter().map(|l| l.lap_id.clone()).collect(),
    })
}

/// `Σ_k −½ ln(2π σ_k²) − (v_k − m_k)² / (2σ_k²)` over the trajectory's
/// velocity profile.
pub fn virtual_utility(model: &DriverModel, traj: &Trajectory) -> Result<f64> {
    let grid = traj.s_grid();
    if grid.len() != model.s.len() || grid.iter().zip(&model.s).any(|(a, b)| (a - b).abs() > GRID_TOL) {
        return Err(Error::GridMismatch(format!(
            "trajectory grid ({} points) differs from the model grid ({} points)",
            grid.len(),
            model.s.len()
        )));
    }
    model.log_likelihood(&traj.speeds())
}

/// Groups logs by style label, sorted by label.
pub fn logs_by_style(logs: &[DrivingLog]) -> BTreeMap<String, Vec<DrivingLog>> {
    let mut out: BTreeMap<String, Vec<DrivingLog>> = BTreeMap::new();
    for l in logs {
        out.entry(l.style.clone()).or_default().push(l.clone());
    }
    out
}
