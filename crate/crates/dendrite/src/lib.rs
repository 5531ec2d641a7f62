//! File formats, configuration and the command line for the dendrite network
//! simulator. The numerics live in [`dendrite_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod run;

pub use cli::run_cli;
pub use config::{load_config, parse_config, RunConfig};
pub use dendrite_core as core;
pub use error::{exit, AppError, AppResult};
