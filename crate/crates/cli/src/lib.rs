//! Library surface of the experiment runner, used by the binary and the
//! acceptance suite.

pub mod commands;
pub mod config;
pub mod runs;
