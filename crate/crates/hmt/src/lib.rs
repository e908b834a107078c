//! Networked side of the teaming testbed: the live game server, agent
//! processes, the after-action explanation HTTP service and the `hmt`
//! command line.

pub mod aae_http;
pub mod cli;
pub mod client;
pub mod remote_llm;
pub mod server;
