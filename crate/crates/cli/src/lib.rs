//! Library side of the `mixnl` binary: configuration, subcommands and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod svg;

use std::path::Path;

pub use config::{Command, Format, RunConfig};
pub use error::CliError;
pub use report::Report;

/// Builds the effective configuration: defaults, then the file, then the
/// positional command, then individual flags. Ranges are not checked yet.
pub fn assemble(command: Option<Command>, file: Option<&Path>, overrides: &[(&str, String)]) -> Result<RunConfig, CliError> {
    let mut cfg = match file {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(c) = command {
        cfg.command = c;
    }
    for (key, value) in overrides {
        cfg.set(key, value).map_err(|message| CliError::Invalid {
            key: (*key).to_string(),
            message,
        })?;
    }
    Ok(cfg)
}

/// [`assemble`] followed by range validation.
pub fn resolve(command: Option<Command>, file: Option<&Path>, overrides: &[(&str, String)]) -> Result<RunConfig, CliError> {
    let cfg = assemble(command, file, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}
