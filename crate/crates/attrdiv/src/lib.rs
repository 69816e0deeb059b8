//! File formats, reports and the `attrdiv` command line on top of
//! [`attrdiv_core`].
//!
//! - [`io`]: the binary embedding/score layout, captions JSON Lines,
//!   attribute files and center files.
//! - [`report`]: evaluation bundles rendered as JSON, CSV or markdown, and
//!   plot-data CSVs.
//! - [`config`]: the TOML run configuration.
//! - [`cli`]: subcommands and the exit-code contract.

pub mod cli;
pub mod config;
pub mod io;
pub mod report;

pub use attrdiv_core as core;
