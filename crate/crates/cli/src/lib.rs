//! Command-line and HTTP front end for the `mixqa` library.

pub mod config;
pub mod server;
