//! Deterministic discrete-event simulator of controller-mediated H-Quorum
//! Byzantine fault tolerance over rejuvenated FPGA tiles.
//!
//! [`system::run`] executes one [`adversary::CompiledScenario`] under one
//! [`metrics::Protocol`] and returns a [`system::RunReport`].

pub mod adversary;
pub mod app;
pub mod baselines;
pub mod config;
pub mod controller;
pub mod cost;
pub mod kernel;
pub mod metrics;
pub mod platform;
pub mod rejuvenation;
pub mod scenarios;
pub mod streams;
pub mod system;
pub mod tiles;
pub mod wire;

pub use adversary::{compile, CompiledScenario, InvalidScenario, ScenarioSpec};
pub use kernel::Cycle;
pub use metrics::{MetricsRecord, Protocol};
pub use system::{run, RunOptions, RunReport};
