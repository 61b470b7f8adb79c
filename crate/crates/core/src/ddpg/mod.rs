//! Actor–critic dispatch agent and its online training loop.

pub mod agent;
pub mod episode;
pub mod networks;
pub mod replay;
pub mod state;

pub use agent::{Agent, AgentConfig, UpdateStats};
pub use episode::{
    limits_respected, run_episode, EpisodeOptions, EpisodeRecord, ForecastMode, Policy,
    StateBuilder, StepTrace,
};
pub use networks::{
    action_bounds, actor_loss, critic_loss, critic_loss_value, from_box, soft_update, td_targets,
    to_box, Actor, Batch, Critic,
};
pub use replay::{ReplayPool, Transition};
pub use state::{
    assemble_state, observation_groups, ObsScales, Segment, StateLayout, StateVector, GROUP_NAMES,
};
