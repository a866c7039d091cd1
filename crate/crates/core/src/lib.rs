//! Debate-based reward design for justifiable sequential decision-making.
//!
//! A judge trained from pairwise preferences scores decisions from partial
//! evidence (a subset of state features). Two argumentative agents play a
//! zero-sum game, alternately revealing evidence for two competing actions;
//! the game value, scaled by `alpha`, becomes a debate reward that is mixed
//! into the environment reward of an offline dueling double-DQN.
//!
//! Module map:
//! - [`neural`]: dense networks, backprop, Adam, weight files
//! - [`synthenv`]: synthetic clinician cohort, shaped rewards, tabular oracle MDP
//! - [`prefdata`]: preference dataset construction and splitting
//! - [`judge`]: Bradley-Terry judge over (action, evidence)
//! - [`debate`]: the debate game, exact solver and debate reward
//! - [`argagents`]: PPO argumentative agents, self-play / maxmin / isolated / confuser training
//! - [`taskpolicy`]: dueling double-DQN with prioritized replay and behavior cloning
//! - [`eval`]: WIS, preference recovery, preference breakdown, exact Shapley evidence
//! - [`pipeline`]: run configuration and artifact-producing pipeline stages

pub mod argagents;
pub mod debate;
pub mod error;
pub mod eval;
pub mod judge;
pub mod neural;
pub mod pipeline;
pub mod prefdata;
pub mod rng;
pub mod stats;
pub mod synthenv;
pub mod taskpolicy;

pub use error::{Error, Result};
