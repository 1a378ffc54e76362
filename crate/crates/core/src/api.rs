//! JSON shapes of the HTTP admin plane, shared by the node (server side) and
//! the client crate.

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::config::NodeRole;
use crate::perf::PerfRole;
use crate::store::StoreDigest;
use crate::wire::{decode_scan_entries, Command, Opcode, Reply, Status, WireError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub name: String,
    pub role: NodeRole,
    pub perf_role: PerfRole,
    pub listen: String,
    pub write_count: u64,
    pub digest: StoreDigest,
    /// Frames read from every inbound connection.
    pub frames_received: u64,
    pub requests: u64,
    /// Frames dropped because they made no sense for this role (replicated
    /// reads, malformed payloads, writes sent to a slave, ...).
    pub protocol_violations: u64,
    /// Emulated CPU time charged to the node's main core.
    pub busy_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replication: Option<ReplicationStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard: Option<ShardStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStats {
    /// `direct` or `offload` on a master, `proxy` on a proxy, `slave` on a slave.
    pub mode: String,
    /// Downstream endpoints in registration order.
    pub downstream: Vec<String>,
    /// Replicate frames written to a downstream socket.
    pub frames_sent: u64,
    /// Replicate frames lost to an unavailable downstream.
    pub frames_dropped: u64,
    /// Replicate frames queued but not yet written.
    pub pending: u64,
    /// Replicate frames applied (slaves).
    pub applied: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub capacity: usize,
    pub len: usize,
    pub hits: u64,
    pub misses: u64,
    pub host_fetches: u64,
    pub host_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardStats {
    pub host_slots: usize,
    /// Requests for keys this shard does not own.
    pub misrouted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub ok: bool,
    pub name: String,
}

/// A command in JSON form. Keys and values are UTF-8 text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    pub op: OpName,
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpName {
    Set,
    Get,
    Del,
    Scan,
}

impl CommandRequest {
    pub fn from_command(cmd: &Command) -> Self {
        let text = |b: &[u8]| String::from_utf8_lossy(b).into_owned();
        match cmd {
            Command::Set { key, value } => CommandRequest {
                op: OpName::Set,
                key: text(key),
                value: Some(text(value)),
                count: None,
            },
            Command::Get { key } => CommandRequest {
                op: OpName::Get,
                key: text(key),
                value: None,
                count: None,
            },
            Command::Del { key } => CommandRequest {
                op: OpName::Del,
                key: text(key),
                value: None,
                count: None,
            },
            Command::Scan { start, count } => CommandRequest {
                op: OpName::Scan,
                key: text(start),
                value: None,
                count: Some(count.get()),
            },
        }
    }

    pub fn to_command(&self) -> Result<Command, WireError> {
        let key = Bytes::copy_from_slice(self.key.as_bytes());
        let op = match self.op {
            OpName::Set => Opcode::Set,
            OpName::Get => Opcode::Get,
            OpName::Del => Opcode::Del,
            OpName::Scan => Opcode::Scan,
        };
        if op != Opcode::Set && self.value.is_some() {
            return Err(WireError::InvalidCommand("only SET carries a value"));
        }
        if op != Opcode::Scan && self.count.is_some() {
            return Err(WireError::InvalidCommand("only SCAN carries a count"));
        }
        match op {
            Opcode::Set => {
                let value = self
                    .value
                    .as_ref()
                    .ok_or(WireError::InvalidCommand("SET needs a value"))?;
                Command::set(key, Bytes::copy_from_slice(value.as_bytes()))
            }
            Opcode::Get => Command::get(key),
            Opcode::Del => Command::del(key),
            Opcode::Scan => Command::scan(key, self.count.unwrap_or(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusName {
    Ok,
    NotFound,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandResponse {
    pub status: StatusName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<(String, String)>>,
}

impl CommandResponse {
    /// Converts a wire reply; `scan` selects how an OK value is read.
    pub fn from_reply(reply: &Reply, scan: bool) -> Result<Self, WireError> {
        let text = |b: &[u8]| String::from_utf8_lossy(b).into_owned();
        let status = match reply.status() {
            Status::Ok => StatusName::Ok,
            Status::NotFound => StatusName::NotFound,
            Status::Error => StatusName::Error,
        };
        let mut out = CommandResponse {
            status,
            value: None,
            entries: None,
        };
        match reply.status() {
            Status::Ok if scan => {
                let entries = decode_scan_entries(reply.value())?;
                out.entries = Some(entries.iter().map(|(k, v)| (text(k), text(v))).collect());
            }
            Status::Ok | Status::Error if !reply.value().is_empty() => {
                out.value = Some(text(reply.value()));
            }
            _ => {}
        }
        Ok(out)
    }
}
