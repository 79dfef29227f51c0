//! Multi-agent Bayesian optimization coordinated by consensus ADMM.
//!
//! Each agent owns a private black-box cost `f_i` and fits a Gaussian-process
//! surrogate to its own observations. A coordinator that never sees agent
//! data drives the agents to a common decision minimizing `Σ f_i` by
//! alternating a consensus average, local penalized acquisition searches and
//! dual ascent.

pub mod acquisition;
pub mod admm;
pub mod agent;
pub mod cli;
pub mod domain;
pub mod error;
pub mod gp;
pub mod objective;
pub mod platoon;
pub mod rng;
pub mod runtime;
pub mod search;

pub use acquisition::{AcquisitionKind, AcquisitionSpec, PenaltyParams};
pub use admm::{CoordinatorState, Residuals};
pub use agent::{AgentState, HyperMode, Theta};
pub use domain::BoxDomain;
pub use error::{Error, Result};
pub use gp::{Dataset, GpPosterior, KernelParams};
pub use objective::{Objective, SharedObjective};
pub use platoon::{FleetConfig, FuelModel, SpeedDomain};
pub use runtime::{run_mabo, run_model_based_admm, RunConfig, RunTrace};
