//! Command-line verbs and the interactive session service for gridgym.

pub mod commands;
pub mod server;
pub mod service;

pub use commands::{Cli, Command, Failure};
pub use service::{ClientId, Outgoing, Service, PROTOCOL_VERSION};
