//! Uncertainty-gated selection among sampled agent actions.
//!
//! An agent step samples N candidate actions, validates and clusters them,
//! and reads a vote distribution off the clusters. Cheap statistics of that
//! distribution (entropy, top-1/top-2 margin) decide whether the plurality
//! winner is executed directly or an arbiter call picks among the clusters.

pub mod action;
pub mod analysis;
pub mod cli;
pub mod cluster;
pub mod env;
pub mod llm;
pub mod orchestrator;
pub mod prompts;
pub mod select;
pub mod stats;
