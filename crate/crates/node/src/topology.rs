//! Launching several nodes together, e.g. a master, its proxy and slaves
//! from one topology file.

use snickv_core::config::{NodeRole, NodeSpec};
use snickv_core::perf::ProfileError;
use snickv_core::PerfProfile;
use thiserror::Error;

use crate::node::{start, NodeError, NodeHandle};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("node {node}: {source}")]
    Profile {
        node: String,
        #[source]
        source: ProfileError,
    },
    #[error("node {node}: {source}")]
    Node {
        node: String,
        #[source]
        source: NodeError,
    },
}

pub struct Topology {
    nodes: Vec<NodeHandle>,
}

impl Topology {
    /// Starts `specs` in the given order (see `TopologyConfig::validate`).
    /// Nodes without a profile file use `default_profile`. Profiles are all
    /// loaded before any socket is opened.
    pub async fn launch(
        specs: Vec<NodeSpec>,
        default_profile: &PerfProfile,
    ) -> Result<Self, TopologyError> {
        let mut profiled = Vec::with_capacity(specs.len());
        for spec in specs {
            let profile = match &spec.profile {
                Some(path) => PerfProfile::load(path).map_err(|source| TopologyError::Profile {
                    node: spec.name.clone(),
                    source,
                })?,
                None => default_profile.clone(),
            };
            profiled.push((spec, profile));
        }
        let mut nodes = Vec::with_capacity(profiled.len());
        for (spec, profile) in profiled {
            let name = spec.name.clone();
            match start(spec, profile).await {
                Ok(h) => nodes.push(h),
                Err(source) => {
                    Topology { nodes }.shutdown().await;
                    return Err(TopologyError::Node { node: name, source });
                }
            }
        }
        Ok(Topology { nodes })
    }

    pub fn nodes(&self) -> &[NodeHandle] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&NodeHandle> {
        self.nodes.iter().find(|n| n.name() == name)
    }

    /// Stops nodes front to back so replication queues drain downstream:
    /// cache fronts and masters first, then proxies, then the rest.
    pub async fn shutdown(self) {
        let mut nodes = self.nodes;
        nodes.sort_by_key(|n| match n.role() {
            NodeRole::CacheFront => 0,
            NodeRole::Master => 1,
            NodeRole::Proxy => 2,
            NodeRole::Plain | NodeRole::Shard => 3,
            NodeRole::Slave => 4,
        });
        for n in nodes {
            n.shutdown().await;
        }
    }
}
