//! On-disk cache of full-lap plans. Entries are keyed by the track contents,
//! the planner configuration and the exact parameter bits, so a warm cache
//! reproduces trajectories bit for bit. Failed solves are cached as well.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::planner::Planner;
use crate::track::Track;
use crate::trajectory::{PlannerParams, Trajectory};

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Entry {
    Solved(Trajectory),
    Failed(String),
}

#[derive(Clone, Debug, Default)]
pub struct PlanCache {
    dir: Option<PathBuf>,
}

impl PlanCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn key(planner: &Planner, track: &Track, params: &PlannerParams) -> String {
        let mut h = Sha256::new();
        h.update(track.content_hash().as_bytes());
        h.update(planner.config().content_hash().as_bytes());
        let (lo, hi) = params.bounds();
        for x in params.theta().iter().chain(lo).chain(hi) {
            h.update(x.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Plans a full lap, reading and writing the cache when enabled.
    pub fn plan(&self, planner: &Planner, track: &Track, params: &PlannerParams) -> Result<Trajectory> {
        let Some(dir) = &self.dir else {
            return planner.plan_full_lap(track, params);
        };
        let path = dir.join(format!("{}.json", Self::key(planner, track, params)));
        if let Ok(bytes) = std::fs::read(&path) {
            match serde_json::from_slice::<Entry>(&bytes) {
                Ok(Entry::Solved(t)) => return Ok(t),
                Ok(Entry::Failed(msg)) => return Err(Error::NotConverged(msg)),
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
            }
        }
        let result = planner.plan_full_lap(track, params);
        let entry = match &result {
            Ok(t) => Entry::Solved(t.clone()),
            // argument errors are not properties of the solve
            Err(Error::InvalidArgument(_)) => return result,
            Err(e) => Entry::Failed(e.to_string()),
        };
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.tmp", std::process::id() as u64 ^ rand_suffix(&path)));
        std::fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        std::fs::rename(&tmp, &path)?;
        match entry {
            Entry::Solved(t) => Ok(t),
            Entry::Failed(msg) => Err(Error::NotConverged(msg)),
        }
    }
}

// distinct temporary names for concurrent writers of different entries
fn rand_suffix(path: &Path) -> u64 {
    let d = Sha256::digest(path.to_string_lossy().as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}
