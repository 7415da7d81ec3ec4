//! Prompt optimization for multi-step LLM pipelines.
//!
//! A pipeline's steps are tuned from end-to-end supervision only: failing
//! traces are turned into per-step textual feedback, each step's prompt is
//! rewritten by its own optimizer, a global search picks the best
//! combination, and Shapley attribution decides where the next round's
//! candidate budget goes.

pub mod backend;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradient;
pub mod optimizers;
pub mod orchestrator;
pub mod pipeline;
pub mod selector;
pub mod shapley;
pub mod tasks;
mod text;

pub use error::{Error, Result};
