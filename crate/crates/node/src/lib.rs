//! Node runtime for `snickv`. A node listens for the binary frame protocol
//! and serves one role: plain store, replication master (direct or
//! offloaded), replication proxy, slave, shard, or cache front. An optional
//! HTTP/JSON admin listener exposes status and single commands.

mod admin;
mod fanout;
mod node;
mod stats;
mod topology;

pub use node::{start, NodeError, NodeHandle};
pub use topology::{Topology, TopologyError};
