//! Pure decision logic for narrative-guided reinforcement learning experiments.
//!
//! Everything in this crate is deterministic given its seeds and works without
//! `std`: gridworld generation and stepping, tabular Q-learning, the local
//! arbiters (passthrough and scripted), narrative prompt rendering, metric
//! aggregation and ASCII frame rendering. IO, the chat transport and the CLI
//! live in the `narrarl` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod arbiter;
pub mod env;
pub mod metrics;
pub mod narratives;
pub mod render;
pub mod rl;
pub mod rng;

pub use arbiter::{parse_action, passthrough, scripted, ArbiterRequest, MalformedResponse, Verdict};
pub use env::{
    generate_grid, observe, shortest_path_len, step, Action, CellLabel, GridError, GridWorld, Observation, Position,
    Transition,
};
pub use metrics::{compute_metrics, EpisodeRecord, Metrics, MetricsError};
pub use narratives::{builtin, render, Message, NarrativeError, NarrativeFramework, RenderOptions, Role};
pub use render::{render_frame, RenderError, RenderedFrame};
pub use rl::{
    greedy_rollout, init_qtable, suggest, td_update, train, QTable, RlParams, Rollout, Suggestion, TrainEpisode,
};
