//! External surfaces of bpguard: scenario files, graph files, episode traces,
//! the command line and the live websocket session.

pub mod config;
pub mod graph_io;
pub mod plan;
pub mod server;
pub mod sim;
pub mod trace;
