//! Library surface of the `vpg` binary, exposed so integration tests can
//! drive the command handlers and the HTTP service in-process.

pub mod commands;
pub mod logging;
pub mod serve;
