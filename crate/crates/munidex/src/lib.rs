//! File formats, parallel drivers and the command line around `munidex-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod mlit;
pub mod model_file;
pub mod parallel;
pub mod pipeline;
pub mod ssds;

pub use error::{Error, Result};
