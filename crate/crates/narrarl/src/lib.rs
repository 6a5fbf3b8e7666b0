//! Experiment runner for Q-learning agents whose moves pass through an arbiter.

pub mod arbiter;
pub mod cli;
pub mod experiment;
pub mod files;
pub mod llm_client;
pub mod trace;
