//! Simulator and learning stack for age-sensitive three-tier mobile edge computing.
//!
//! Data sources generate packets, mobile edge devices (UAV base stations) collect,
//! pre-process and offload them to a cloud center over an air-to-ground channel.
//! Edge devices and the center are controlled by heterogeneous actor-critic agents
//! whose edge actors are periodically mixed through a doubly stochastic matrix.
//!
//! Module map:
//! - [`env`]: the discrete-time world (mobility, buffers, channel, age of information).
//! - [`nn`]: a small differentiable network kit with SGD and flat parameter access.
//! - [`agents`]: actor/critic roles, action encoding and exploration.
//! - [`replay`]: per-agent experience buffers with half-fresh sampling.
//! - [`trainer`]: replay updates, target mixing, federated averaging, baselines.
//! - [`convergence`]: spectral and bound calculators for the federated mode.
//! - [`metrics`]: peak/worst AoI and throughput post-processing.

pub mod agents;
pub mod convergence;
pub mod env;
mod error;
pub mod metrics;
pub mod nn;
pub mod profile;
pub mod replay;
pub mod rng;
pub mod trainer;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use env::{
    AgeTracker, BufferPiece, CenterAction, EdgeActionSet, EdgeDevice, ObservationBundle, Packet,
    SimConfig, SourceNode, StepOutcome, World, WorldState,
};
pub use error::{Error, Result};
pub use nn::{Network, ParamVector, SgdConfig, Tensor};
pub use trainer::{MetricsLog, TrainConfig};
