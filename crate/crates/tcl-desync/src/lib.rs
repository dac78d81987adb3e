//! File formats and batch commands for the thermostatically controlled load
//! desynchronization simulator: TOML scenarios, CSV artifacts with a
//! checksummed manifest, and the `simulate`, `analyze-convergence` and
//! `single-tcl` commands.

pub mod commands;
pub mod config;
pub mod output;

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "TCL_DESYNC_OUTPUT_DIR";
