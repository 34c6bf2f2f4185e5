//! Config-driven runner for the bidc-core simulations: one TOML file
//! describes one run, which writes CSV/JSON outputs and a manifest.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod tasks;

pub use config::{parse_config, RunConfig, Task};
pub use output::RunManifest;
pub use tasks::{run_task, RunError};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}
