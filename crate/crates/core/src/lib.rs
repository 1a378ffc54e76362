//! Core building blocks for `snickv`, a small distributed key-value system
//! used to study how an off-path SmartNIC can be put to work next to a host:
//! replication offloaded to a NIC-resident proxy, host/NIC data sharding over
//! hash slots, and the NIC-as-cache layout that turns out to hurt latency.
//!
//! Nothing here opens sockets. [`codec`] adapts the frame format to
//! `tokio-util` and [`emulation`] holds the async timing primitives used by
//! both the node runtime (`snickv-node`) and the client (`snickv-client`).

pub mod api;
pub mod bench;
pub mod cache;
pub mod codec;
pub mod config;
pub mod emulation;
pub mod perf;
pub mod replication;
pub mod sharding;
pub mod store;
pub mod wire;

pub use cache::CacheState;
pub use perf::{PerfProfile, PerfRole};
pub use sharding::{ShardSide, ShardTopology, SlotMap};
pub use store::{Store, StoreDigest};
pub use wire::{Command, Frame, FrameDecoder, FrameKind, Key, Reply, Status};
