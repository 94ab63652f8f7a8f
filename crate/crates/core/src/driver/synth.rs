//! Synthetic driving logs. Each style follows a curvature-limited target
//! speed profile with acceleration limits; laps add a constant offset and
//! smooth autoregressive noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DrivingLog;
use crate::error::{Error, Result};
use crate::track::Track;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleRecipe {
    pub name: String,
    /// Speed on straights [m/s].
    pub cruise_speed: f64,
    /// Lateral acceleration accepted in curves [m/s²].
    pub lateral_accel: f64,
    /// Longitudinal acceleration and deceleration limits [m/s²].
    pub accel: f64,
    pub decel: f64,
    /// Std of the per-lap speed offset [m/s].
    pub lap_offset_std: f64,
    /// Stationary std of the smooth within-lap noise [m/s].
    pub noise_std: f64,
    /// Correlation length of the within-lap noise [m].
    pub noise_length: f64,
}

impl StyleRecipe {
    fn new(name: &str, cruise: f64, lateral: f64, accel: f64, decel: f64) -> Self {
        Self {
            name: name.into(),
            cruise_speed: cruise,
            lateral_accel: lateral,
            accel,
            decel,
            lap_offset_std: 0.2,
            noise_std: 0.3,
            noise_length: 40.0,
        }
    }

    /// Two comfortable, two quick and one intermediate style.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("comfortable-a", 9.0, 1.0, 0.8, 0.96),
            Self::new("comfortable-b", 10.0, 1.3, 1.0, 1.2),
            Self::new("quick-a", 16.0, 3.0, 2.5, 3.0),
            Self::new("quick-b", 15.0, 2.7, 2.2, 2.64),
            Self::new("intermediate", 12.0, 2.0, 1.5, 1.8),
        ]
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.cruise_speed, self.lateral_accel, self.accel, self.decel, self.noise_length];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(self.lap_offset_std >= 0.0)
            || !(self.noise_std >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("style {} has invalid parameters", self.name)));
        }
        Ok(())
    }

    /// Noise-free speed profile on the track grid, starting at `entry_speed`.
    pub fn target_profile(&self, track: &Track, entry_speed: f64) -> Vec<f64> {
        let s = track.s_grid();
        let n = s.len();
        let mut v: Vec<f64> = track
            .kappa_ref()
            .iter()
            .map(|k| {
                let curve = if k.abs() > 1e-12 { (self.lateral_accel / k.abs()).sqrt() } else { f64::INFINITY };
                self.cruise_speed.min(curve)
            })
            .collect();
        v[0] = entry_speed;
        for k in 0..n - 1 {
            let cap = (v[k] * v[k] + 2.0 * self.accel * (s[k + 1] - s[k])).sqrt();
            v[k + 1] = v[k + 1].min(cap);
        }
        for k in (1..n - 1).rev() {
            let cap = (v[k + 1] * v[k + 1] + 2.0 * self.decel * (s[k + 1] - s[k])).sqrt();
            v[k] = v[k].min(cap);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub styles: Vec<StyleRecipe>,
    pub laps_per_style: usize,
    pub entry_speed: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            styles: StyleRecipe::defaults(),
            laps_per_style: 5,
            entry_speed: 10.0,
            seed: 0,
        }
    }
}

const MIN_SPEED: f64 = 0.5;

/// Generates `laps_per_style` laps for every style. Lap ids are
/// `<style>-<lap>`; the result is a pure function of the config.
pub fn generate_logs(track: &Track, cfg: &SynthConfig) -> Result<Vec<DrivingLog>> {
    if cfg.laps_per_style == 0 || !(cfg.entry_speed > 0.0) {
        return Err(Error::InvalidArgument("need at least one lap and a positive entry speed".into()));
    }
    let s = track.s_grid();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut logs = Vec::new();
    for (si, style) in cfg.styles.iter().enumerate() {
        style.validate()?;
        let target = style.target_profile(track, cfg.entry_speed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(si as u64);
        for lap in 0..cfg.laps_per_style {
            let offset = style.lap_offset_std * std_normal.sample(&mut rng);
            let mut e = style.noise_std * std_normal.sample(&mut rng);
            let mut v = Vec::with_capacity(s.len());
            for k in 0..s.len() {
                if k > 0 {
                    let rho = (-(s[k] - s[k - 1]) / style.noise_length).exp();
                    e = rho * e + style.noise_std * (1.0 - rho * rho).sqrt() * std_normal.sample(&mut rng);
                }
                v.push((target[k] + offset + e).max(MIN_SPEED));
            }
            logs.push(DrivingLog {
                lap_id: format!("{}-{}", style.name, lap + 1),
                style: style.name.clone(),
                s: s.to_vec(),
                v,
            });
        }
    }
    Ok(logs)
}
