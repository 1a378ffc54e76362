//! Client side of `snickv`: connections speaking the binary frame protocol,
//! the hash-slot router for a host/NIC shard pair, a small HTTP client for
//! the admin plane, and the closed-loop benchmark runner.

pub mod admin;
pub mod bench;
pub mod connection;
pub mod router;

pub use admin::AdminClient;
pub use bench::{run_bench, BenchOptions, BenchRunError, BenchTarget};
pub use connection::{ClientError, KvConnection};
pub use router::{RouterError, ShardRouter};
