//! Command implementations behind the `answerspace` binary.
//!
//! Every command is an ordinary function over [`config::ExperimentConfig`],
//! so integration tests drive them directly and `main` stays a thin
//! argument-parsing shell.

pub mod commands;
pub mod config;
