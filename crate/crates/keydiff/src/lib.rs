//! File formats, reports, timing and the command-line front end for the
//! [`keydiff_core`] eviction engine.
//!
//! - [`traceio`]: the KVTR binary trace format.
//! - [`report`]: CSV report schemas.
//! - [`bench`]: single-threaded scaling measurements.
//! - [`cli`]: the `keydiff` binary's subcommands.

pub mod bench;
pub mod cli;
pub mod report;
pub mod traceio;

pub use keydiff_core;
