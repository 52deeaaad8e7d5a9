//! Adaptive sampling for multi-sensor nodes with a deep Q-network.
//!
//! The crate is organised around the pieces of one experiment:
//!
//! * [`nn`] — a small dense network with backprop and Adam,
//! * [`env`] — the multi-sensor sampling environment (synthetic or trace replay),
//! * [`ingest`] — loading and cleaning raw sensor traces,
//! * [`agent`] — DQN training and the baseline policies,
//! * [`metrics`] — quality, energy, redundancy and event-detection scores,
//! * [`experiment`] — comparisons, sweeps and their CSV/plot outputs.

pub mod agent;
pub mod env;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod seed;

pub use agent::{AgentError, AgentHyperParams, PolicyKind};
pub use env::{ChannelKind, EnvConfig, EnvError, SensorEnv};
pub use metrics::{MetricsReport, MetricsRow};
pub use nn::NetworkParams;
