//! Preference-based tuning of a spatial-domain trajectory planner.
//!
//! The crate contains the vehicle model and trajectory features
//! ([`vehicle`], [`trajectory`]), the transcribed optimal control problem and
//! its solver ([`planner`]), the preferential Gaussian process ([`gp`]), the
//! preferential Bayesian optimization loop ([`pbo`]) and the data-driven
//! driver model that acts as a virtual decision maker ([`driver`]).

pub mod ad;
pub mod cache;
pub mod driver;
pub mod error;
pub mod gp;
pub mod optim;
pub mod pbo;
pub mod planner;
pub mod stats;
pub mod track;
pub mod trajectory;
pub mod vehicle;

pub use error::{Error, Result};
pub use track::Track;
pub use trajectory::{PlannerParams, Trajectory, N_FEATURES};
pub use vehicle::{ControlInput, VehicleState};
