//! File formats, configuration and the `coopsim` command-line tool built
//! on `coopsim-core`.
//!
//! * [`io`]: point clouds, weights, labels, calibration, dataset layout.
//! * [`config`] and [`scenario`]: TOML inputs with positioned errors.
//! * [`app`]: end-to-end drivers (simulate, generate, evaluate, dump).
//! * [`tables`]: cost tables as CSV or Markdown.
//! * [`selftest`]: randomized invariant checks.
//! * [`cli`]: argument parsing and dispatch.

pub mod app;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod scenario;
pub mod selftest;
pub mod tables;

pub use error::{AppError, Result};
