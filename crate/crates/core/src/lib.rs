//! Simulation and measurement toolkit for debate-style oversight protocols.
//!
//! The crate covers the full loop of an information-asymmetric persuasion
//! game and its training signal:
//!
//! - [`protocol`]: domain types plus the debate and consultancy state
//!   machines, with quote verification against the hidden story and
//!   machine-checkable speech-visibility manifests.
//! - [`agents`]: debater/consultant/judge abstractions, prompt templates,
//!   deterministic seeded stub agents for offline runs, and a
//!   chat-completions client with token-logprob verdict extraction.
//! - [`prefgen`]: branching self-play rollouts that bifurcate the game tree
//!   at each target turn and emit reward-weighted preference pairs.
//! - [`dpo`]: the reward-aware preference objective: reward shapes, target
//!   probabilities, loss and analytic gradients, gamma calibration, and a
//!   toy finite-candidate trainer.
//! - [`eval`]: round-robin tournaments, Bradley-Terry/Elo fitting, judge
//!   accuracy, calibration and style metrics, and paired significance tests.
//! - [`storage`]: dataset IO, run configuration, response caching, and
//!   output manifests.
//! - [`pipeline`]: the orchestration layer behind the CLI subcommands.
//!
//! Batch entry points run data-parallel under the `parallel` feature
//! (enabled by default) and fall back to sequential iteration without it;
//! see [`exec`].

pub mod agents;
pub mod dpo;
pub mod eval;
pub mod exec;
pub mod pipeline;
pub mod prefgen;
pub mod protocol;
pub mod seed;
pub mod storage;
pub mod synthetic;
