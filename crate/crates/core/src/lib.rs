//! Append-only, revisioned signal store for pulsed experiments.
//!
//! Signals are addressed by string identifiers such as `I_plasma:4073:-1` or
//! `DAQ:ATCA_1/9/13:-1`. Metadata lives in an SQLite [`catalog`]; numbers live
//! in write-once container files managed by [`filestore`]. [`signal_api`]
//! is the read/write surface, [`postproc`] runs dependent processing tasks
//! and [`daq`] simulates parallel acquisition nodes.

pub mod catalog;
pub mod config;
pub mod daq;
pub mod error;
pub mod filestore;
pub mod identifier;
pub mod postproc;
pub mod signal_api;
pub mod wire;

pub use catalog::Catalog;
pub use config::Config;
pub use error::{Error, Result};
pub use identifier::{format_str_id, parse_str_id, SignalRef};
pub use signal_api::{Signal, Store};
