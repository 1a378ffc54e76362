//! Declarative node and topology configuration, validated before any socket
//! is opened.

use std::collections::HashSet;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf::PerfRole;
use crate::replication::{Endpoint, ReplicationMode};
use crate::sharding::{ShardError, SlotMap};

pub const DEFAULT_CACHE_CAPACITY: usize = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_owned(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Master,
    Slave,
    Proxy,
    Shard,
    #[serde(alias = "cache-front", alias = "cache_front")]
    CacheFront,
    Plain,
}

impl std::fmt::Display for NodeRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NodeRole::Master => "master",
            NodeRole::Slave => "slave",
            NodeRole::Proxy => "proxy",
            NodeRole::Shard => "shard",
            NodeRole::CacheFront => "cachefront",
            NodeRole::Plain => "plain",
        })
    }
}

impl std::str::FromStr for NodeRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| format!("unknown node role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Direct,
    Offload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotSplit {
    Even,
    Half,
    File,
}

/// One node as written in a config file or assembled from CLI flags.
/// Endpoints are `addr:port`, optionally suffixed `@nic` or `@host`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub role: Option<NodeRole>,
    pub listen: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perf_role: Option<PerfRole>,
    /// Role assumed for peers that connect to this node (clients, a cache
    /// front). Defaults to host.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inbound_role: Option<PerfRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_split: Option<SlotSplit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_map: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admin: Option<String>,
}

#[derive(Debug, Clone)]
pub enum RoleSpec {
    Plain,
    Master {
        mode: ReplicationMode,
    },
    Slave {
        upstream: Endpoint,
    },
    Proxy,
    Shard {
        slots: SlotMap,
    },
    CacheFront {
        host: Endpoint,
        capacity: NonZeroUsize,
    },
}

impl RoleSpec {
    pub fn role(&self) -> NodeRole {
        match self {
            RoleSpec::Plain => NodeRole::Plain,
            RoleSpec::Master { .. } => NodeRole::Master,
            RoleSpec::Slave { .. } => NodeRole::Slave,
            RoleSpec::Proxy => NodeRole::Proxy,
            RoleSpec::Shard { .. } => NodeRole::Shard,
            RoleSpec::CacheFront { .. } => NodeRole::CacheFront,
        }
    }
}

/// A fully validated node description.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub name: String,
    pub listen: String,
    pub perf_role: PerfRole,
    pub inbound_role: PerfRole,
    pub admin: Option<String>,
    pub profile: Option<PathBuf>,
    pub kind: RoleSpec,
}

fn parse_listen(field: &str, s: &str) -> Result<String, ConfigError> {
    let (host, port) = s
        .rsplit_once(':')
        .ok_or_else(|| field_err(field, format!("`{s}` is not addr:port")))?;
    if host.is_empty() {
        return Err(field_err(field, "missing address"));
    }
    port.parse::<u16>()
        .map_err(|_| field_err(field, format!("bad port in `{s}`")))?;
    Ok(s.to_owned())
}

fn parse_endpoint(field: &str, s: &str, default_role: PerfRole) -> Result<Endpoint, ConfigError> {
    let ep = if s.contains('@') {
        s.parse::<Endpoint>()
    } else {
        Endpoint::parse(s, default_role)
    }
    .map_err(|e| field_err(field, e.to_string()))?;
    Ok(ep)
}

impl NodeConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&read(path.as_ref())?)
    }

    /// Checks every role-specific rule and resolves endpoints and the slot
    /// map. Fields that do not apply to the role are rejected too.
    pub fn validate(&self) -> Result<NodeSpec, ConfigError> {
        let role = self.role.ok_or_else(|| field_err("role", "required"))?;
        let listen = parse_listen(
            "listen",
            self.listen
                .as_deref()
                .ok_or_else(|| field_err("listen", "required"))?,
        )?;
        if let Some(admin) = &self.admin {
            parse_listen("admin", admin)?;
        }

        let allowed: &[&str] = match role {
            NodeRole::Master => &["mode", "proxy"],
            NodeRole::Slave => &["upstream"],
            NodeRole::Proxy | NodeRole::Plain => &[],
            NodeRole::Shard => &["slot_split", "slot_map"],
            NodeRole::CacheFront => &["host_endpoint", "capacity"],
        };
        let present = [
            ("mode", self.mode.is_some()),
            ("proxy", self.proxy.is_some()),
            ("upstream", self.upstream.is_some()),
            ("host_endpoint", self.host_endpoint.is_some()),
            ("capacity", self.capacity.is_some()),
            ("slot_split", self.slot_split.is_some()),
            ("slot_map", self.slot_map.is_some()),
        ];
        for (field, set) in present {
            if set && !allowed.contains(&field) {
                return Err(field_err(field, format!("not valid for role {role}")));
            }
        }

        let kind = match role {
            NodeRole::Plain => RoleSpec::Plain,
            NodeRole::Proxy => RoleSpec::Proxy,
            NodeRole::Master => {
                let mode = match (self.mode.unwrap_or(ModeName::Direct), &self.proxy) {
                    (ModeName::Direct, None) => ReplicationMode::Direct,
                    (ModeName::Direct, Some(_)) => {
                        return Err(field_err("proxy", "only valid with mode offload"))
                    }
                    (ModeName::Offload, None) => {
                        return Err(field_err("proxy", "required when mode is offload"))
                    }
                    (ModeName::Offload, Some(p)) => ReplicationMode::Offload {
                        proxy: parse_endpoint("proxy", p, PerfRole::Nic)?,
                    },
                };
                RoleSpec::Master { mode }
            }
            NodeRole::Slave => {
                let up = self
                    .upstream
                    .as_deref()
                    .ok_or_else(|| field_err("upstream", "required for role slave"))?;
                RoleSpec::Slave {
                    upstream: parse_endpoint("upstream", up, PerfRole::Host)?,
                }
            }
            NodeRole::CacheFront => {
                let host = self
                    .host_endpoint
                    .as_deref()
                    .ok_or_else(|| field_err("host_endpoint", "required for role cachefront"))?;
                let capacity = NonZeroUsize::new(self.capacity.unwrap_or(DEFAULT_CACHE_CAPACITY))
                    .ok_or_else(|| field_err("capacity", "must be >= 1"))?;
                RoleSpec::CacheFront {
                    host: parse_endpoint("host_endpoint", host, PerfRole::Host)?,
                    capacity,
                }
            }
            NodeRole::Shard => {
                let split = self.slot_split.unwrap_or(if self.slot_map.is_some() {
                    SlotSplit::File
                } else {
                    SlotSplit::Half
                });
                let slots = match (split, &self.slot_map) {
                    (SlotSplit::File, Some(path)) => SlotMap::read_file(path)
                        .map_err(|e: ShardError| field_err("slot_map", e.to_string()))?,
                    (SlotSplit::File, None) => {
                        return Err(field_err("slot_map", "required when slot_split is file"))
                    }
                    (_, Some(_)) => {
                        return Err(field_err("slot_map", "only valid with slot_split file"))
                    }
                    (SlotSplit::Even, None) => SlotMap::even_odd(),
                    (SlotSplit::Half, None) => SlotMap::halves(),
                };
                RoleSpec::Shard { slots }
            }
        };

        Ok(NodeSpec {
            name: self
                .name
                .clone()
                .unwrap_or_else(|| format!("{role}@{listen}")),
            listen,
            perf_role: self.perf_role.unwrap_or(match role {
                NodeRole::Proxy | NodeRole::CacheFront => PerfRole::Nic,
                _ => PerfRole::Host,
            }),
            inbound_role: self.inbound_role.unwrap_or(PerfRole::Host),
            admin: self.admin.clone(),
            profile: self.profile.clone(),
            kind,
        })
    }
}

/// Several nodes launched together from one file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// Profile applied to nodes that do not name their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    pub nodes: Vec<NodeConfig>,
}

impl TopologyConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&read(path.as_ref())?)
    }

    /// Validates every node, in start order: nodes others connect to first,
    /// slaves (which register with an upstream on start) last.
    pub fn validate(&self) -> Result<Vec<NodeSpec>, ConfigError> {
        if self.nodes.is_empty() {
            return Err(field_err("nodes", "at least one node is required"));
        }
        let mut specs = Vec::with_capacity(self.nodes.len());
        let mut listens = HashSet::new();
        let mut names = HashSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let mut spec = node.validate().map_err(|e| match e {
                ConfigError::Field { field, message } => ConfigError::Field {
                    field: format!("nodes[{i}].{field}"),
                    message,
                },
                other => other,
            })?;
            if !listens.insert(spec.listen.clone()) {
                return Err(field_err(
                    &format!("nodes[{i}].listen"),
                    format!("{} is used twice", spec.listen),
                ));
            }
            if !names.insert(spec.name.clone()) {
                return Err(field_err(
                    &format!("nodes[{i}].name"),
                    format!("{} is used twice", spec.name),
                ));
            }
            if spec.profile.is_none() {
                spec.profile = self.profile.clone();
            }
            specs.push(spec);
        }
        specs.sort_by_key(|s| match s.kind.role() {
            NodeRole::Proxy => 0,
            NodeRole::Plain | NodeRole::Shard => 1,
            NodeRole::Master => 2,
            NodeRole::CacheFront => 3,
            NodeRole::Slave => 4,
        });
        Ok(specs)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}
