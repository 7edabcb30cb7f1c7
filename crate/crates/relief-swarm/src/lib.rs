//! Collaborative crowdsensing workbench: a deterministic grid-world
//! simulation of UAVs, workers, and cars, value-decomposition route
//! planners trained on it, and the baselines and harness used to compare
//! them.

pub mod baseline;
pub mod eval;
pub mod grid;
pub mod manf;
pub mod nn;
pub mod obs;
pub mod oracle;
mod par;
pub mod replay;
pub mod scenario;
pub mod train;

pub use grid::{
    action_mask, completion_rate, initial_completion_sweep, reachable_set, replay_routes,
    step, AgentKind, AgentState, Cell, EpisodeTrace, GridError, GridWorld, JointAction, Scenario,
    StepOutcome,
};
pub use obs::{build_bundle, build_global, urgency, GlobalChannels, LocalFeatures, ObservationBundle};
