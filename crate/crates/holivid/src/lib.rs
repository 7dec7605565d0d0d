//! File formats, the `holivid` command-line tool and the experiment
//! drivers built on `holivid-core`.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod io;

pub use error::{Error, Result};
