use std::path::{Path, PathBuf};

use prefdrive_core::driver::{GridConfig, SynthConfig};
use prefdrive_core::pbo::{ParamSpace, PboConfig};
use prefdrive_core::planner::{PlannerConfig, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Starts from the virtual decision maker's comparisons.
    Prior,
    /// Starts from an empty dataset.
    Standard,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Prior => "prior",
            Method::Standard => "standard",
        }
    }
}

/// Every field has a default; an empty file describes the desk-scale study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Track CSV; the built-in two-curve desk track when unset.
    pub track: Option<PathBuf>,
    /// Driving log CSV; synthetic logs from `synth` when unset.
    pub logs: Option<PathBuf>,
    pub synth: SynthConfig,
    /// Style that forms the primary decision maker; the rest form the
    /// virtual one.
    pub heldout_style: String,
    pub space: ParamSpace,
    /// Grid of the prior dataset.
    pub prior_grid: GridConfig,
    /// Samples per dimension of the regret oracle grid; 7 up to three
    /// dimensions, 5 above when unset.
    pub oracle_per_dim: Option<usize>,
    /// Queries per trial.
    pub budget: usize,
    pub trials: usize,
    /// Trial `t` uses seed `seed + t`.
    pub seed: u64,
    /// PBO settings; `pbo.seed` is replaced by the trial seed.
    pub pbo: PboConfig,
    pub planner: PlannerConfig,
    pub output_dir: PathBuf,
    /// Plan cache; `<output_dir>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            track: None,
            logs: None,
            synth: SynthConfig::default(),
            heldout_style: "intermediate".into(),
            space: ParamSpace::desk(),
            prior_grid: GridConfig::default(),
            oracle_per_dim: None,
            budget: 30,
            trials: 5,
            seed: 0,
            pbo: PboConfig::default(),
            planner: PlannerConfig {
                solver: SolverConfig::coarse(),
                ..PlannerConfig::default()
            },
            output_dir: PathBuf::from("results"),
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text)?;
        for p in [&mut cfg.track, &mut cfg.logs, &mut cfg.cache_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        for p in [&self.track, &self.logs].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if let Err(e) = self.space.validate() {
            return bad(e.to_string());
        }
        if self.prior_grid.per_dim < 2 || self.oracle_per_dim.is_some_and(|n| n < 2) {
            return bad("grids need at least two samples per dimension".into());
        }
        if !(self.pbo.beta > 0.0) {
            return bad("pbo.beta must be positive".into());
        }
        if self.heldout_style.is_empty() {
            return bad("heldout_style is empty".into());
        }
        Ok(())
    }

    pub fn oracle_grid(&self) -> usize {
        self.oracle_per_dim.unwrap_or(if self.space.dim() <= 3 { 7 } else { 5 })
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}
