//! File formats, run manifests and the `spmseg` command-line driver built
//! on top of `spmseg-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod run;
