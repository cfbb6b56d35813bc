//! Pipeline orchestration, tables and figures behind the `iftrack` binary.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod render;

pub use config::{Overrides, RunConfig};
pub use manifest::Manifest;
pub use pipeline::{run, Command};
