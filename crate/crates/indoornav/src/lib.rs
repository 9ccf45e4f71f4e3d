//! Host side of the indoor navigation stack: configuration files, the
//! reasoner client, packet codecs and transports, the threaded pipeline,
//! run logs and the `indoornav` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod logs;
pub mod pipeline;
pub mod reasoner;
pub mod report;
pub mod wire;

pub use error::{Error, Result};
