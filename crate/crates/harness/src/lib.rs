//! Drivers around the model: configuration files, the training loop,
//! evaluation, ablation suites and the command-line interface.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod run;
pub mod suite;
