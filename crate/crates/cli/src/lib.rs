//! Configuration, orchestration and output emission for the `jumpctl` binary.

pub mod config;
pub mod run;
pub mod svg;

pub use config::{config_hash, parse_config, ConfigError, RunConfig};
pub use run::{exit_code, run, Command, Outcome, RunError, RunManifest};
pub use svg::{emit_svg, Labels, Series, SvgError};
