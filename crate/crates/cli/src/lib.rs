//! Files, reports and the command-line front end for `hatelens-core`.
//!
//! The core crate holds the model and every computation; this crate adds
//! what needs an operating system: corpus and checkpoint files, run
//! directories, attention renderings and the `hatelens` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod formats;
pub mod pipeline;
pub mod render;
pub mod report;

pub use error::{Error, Result};
pub use hatelens_core as core;
