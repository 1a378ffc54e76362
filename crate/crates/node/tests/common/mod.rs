#![allow(dead_code)]

use std::time::Duration;

use snickv_core::api::StatusReport;
use snickv_core::config::{ModeName, NodeConfig, NodeRole};
use snickv_core::replication::Endpoint;
use snickv_core::{PerfProfile, PerfRole, ShardTopology, SlotMap};
use snickv_node::{start, NodeHandle};

pub fn cfg(role: NodeRole, name: &str) -> NodeConfig {
    NodeConfig {
        name: Some(name.to_owned()),
        role: Some(role),
        listen: Some("127.0.0.1:0".to_owned()),
        ..Default::default()
    }
}

pub async fn node(cfg: NodeConfig, profile: &PerfProfile) -> NodeHandle {
    start(cfg.validate().expect("valid config"), profile.clone())
        .await
        .expect("node starts")
}

pub struct Replicated {
    pub master: NodeHandle,
    pub proxy: Option<NodeHandle>,
    pub slaves: Vec<NodeHandle>,
}

impl Replicated {
    pub async fn start(mode: ModeName, slaves: usize, profile: &PerfProfile) -> Self {
        let proxy = match mode {
            ModeName::Offload => Some(node(cfg(NodeRole::Proxy, "proxy"), profile).await),
            ModeName::Direct => None,
        };
        let mut m = cfg(NodeRole::Master, "master");
        m.mode = Some(mode);
        m.proxy = proxy.as_ref().map(|p| p.endpoint().to_string());
        let master = node(m, profile).await;
        let upstream = proxy
            .as_ref()
            .map(|p| p.endpoint())
            .unwrap_or_else(|| master.endpoint());
        let mut list = Vec::new();
        for i in 0..slaves {
            let mut s = cfg(NodeRole::Slave, &format!("slave{i}"));
            s.upstream = Some(upstream.to_string());
            list.push(node(s, profile).await);
        }
        Replicated {
            master,
            proxy,
            slaves: list,
        }
    }

    pub fn master_endpoint(&self) -> Endpoint {
        self.master.endpoint()
    }

    /// Waits until no replication frame is queued anywhere and every slave
    /// has caught up with the master's write count.
    pub async fn drain(&self) {
        let idle = |s: &StatusReport| s.replication.as_ref().map_or(0, |r| r.pending) == 0;
        wait_for(Duration::from_secs(30), || {
            let m = self.master.status();
            idle(&m)
                && self.proxy.as_ref().is_none_or(|p| idle(&p.status()))
                && self
                    .slaves
                    .iter()
                    .all(|s| s.status().write_count == m.write_count)
        })
        .await;
    }

    pub async fn shutdown(self) {
        self.master.shutdown().await;
        if let Some(p) = self.proxy {
            p.shutdown().await;
        }
        for s in self.slaves {
            s.shutdown().await;
        }
    }
}

pub async fn wait_for(limit: Duration, mut cond: impl FnMut() -> bool) {
    let give_up = tokio::time::Instant::now() + limit;
    while !cond() {
        assert!(
            tokio::time::Instant::now() < give_up,
            "condition not reached within {limit:?}"
        );
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

/// A host/NIC shard pair sharing one slot map, written to `dir`.
pub struct Shards {
    pub host: NodeHandle,
    pub nic: NodeHandle,
    pub slots: SlotMap,
}

impl Shards {
    pub async fn start(slots: SlotMap, dir: &std::path::Path, profile: &PerfProfile) -> Self {
        let path = dir.join("slots.bin");
        slots.write_file(&path).unwrap();
        let side = |name: &str, role: PerfRole| {
            let mut c = cfg(NodeRole::Shard, name);
            c.slot_map = Some(path.clone());
            c.perf_role = Some(role);
            c
        };
        let host = node(side("host", PerfRole::Host), profile).await;
        let nic = node(side("nic", PerfRole::Nic), profile).await;
        Shards { host, nic, slots }
    }

    pub fn topology(&self) -> ShardTopology {
        ShardTopology::new(
            self.host.endpoint(),
            self.nic.endpoint(),
            self.slots.clone(),
        )
        .unwrap()
    }

    pub async fn shutdown(self) {
        self.host.shutdown().await;
        self.nic.shutdown().await;
    }
}
