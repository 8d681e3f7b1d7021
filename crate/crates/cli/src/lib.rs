//! The `xmod` command line and the HTTP session service.

pub mod cli;
pub mod server;
