//! Radial three-phase feeder model and power-flow routines.

mod file;
mod power_flow;
mod synth;
mod topology;

pub use file::{load_topology, save_topology};
pub use power_flow::{
    forward_power_flow, nominal_slack_voltage, voltages_from_branch_currents, PowerFlowOptions,
    PowerFlowSolution,
};
pub use synth::{
    balanced_injections, random_radial_feeder, thirteen_bus_feeder, RandomFeederConfig,
};
pub use topology::{
    validate_topology, Branch, Bus, CustomerGroup, Feeder, FeederTopology, Phase, PhaseSet,
    Phasor, PhasorAbc, ValidationReport, Violation,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("topology is not a valid radial feeder: {0}")]
    InvalidTopology(ValidationReport),
    #[error("power flow diverged after {sweeps} sweeps (last mismatch {mismatch:.3e} pu)")]
    Diverged { sweeps: usize, mismatch: f64 },
    #[error("expected {expected} branch current entries, got {got}")]
    CurrentLengthMismatch { expected: usize, got: usize },
    #[error("unknown bus id {0}")]
    UnknownBus(u32),
    #[error("no branch between buses {0} and {1}")]
    UnknownBranch(u32, u32),
    #[error("impedance block of branch {from}-{to} is singular on its phase set")]
    SingularImpedance { from: u32, to: u32 },
    #[error("topology file error: {0}")]
    File(String),
}
