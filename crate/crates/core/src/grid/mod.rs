//! Synthetic hybrid grid: case data, AC power flow, objective terms and the
//! day-stepped environment.

pub mod case;
pub mod env;
pub mod objective;
pub mod powerflow;

pub use case::{
    generate_case, Branch, Bus, CaseSpec, GenKind, Generator, GridCase, Load, LoadProfile,
};
pub use env::{DoneReason, GridEnv, GridState, StepOutcome};
pub use objective::{
    episode_scores, operation_cost, renewable_utilization, security_components, zeta,
    EpisodeScores, RewardBreakdown, OMEGA_R,
};
pub use powerflow::{solve_power_flow, PowerFlowSolution};
