//! Client-side hash-slot routing across the host and NIC shards.

use snickv_core::sharding::{ShardSide, ShardTopology};
use snickv_core::wire::{Command, Reply};
use snickv_core::{PerfProfile, PerfRole};
use thiserror::Error;

use crate::connection::{ClientError, KvConnection};

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("SCAN cannot be routed across shards")]
    UnsupportedOperation,
    #[error("{side} shard unavailable: {source}")]
    EndpointUnavailable {
        side: ShardSide,
        #[source]
        source: ClientError,
    },
}

/// Routes each command to the shard that owns its key's slot. Holds one
/// connection per shard, opened on first use.
#[derive(Debug)]
pub struct ShardRouter {
    topology: ShardTopology,
    local_role: PerfRole,
    profile: PerfProfile,
    host: Option<KvConnection>,
    nic: Option<KvConnection>,
    sent: [u64; 2],
}

impl ShardRouter {
    pub fn new(topology: ShardTopology, local_role: PerfRole, profile: PerfProfile) -> Self {
        ShardRouter {
            topology,
            local_role,
            profile,
            host: None,
            nic: None,
            sent: [0; 2],
        }
    }

    /// Opens both shard connections up front.
    pub async fn connect(
        topology: ShardTopology,
        local_role: PerfRole,
        profile: PerfProfile,
    ) -> Result<Self, RouterError> {
        let mut router = Self::new(topology, local_role, profile);
        for side in [ShardSide::Host, ShardSide::Nic] {
            router.conn(side).await?;
        }
        Ok(router)
    }

    pub fn topology(&self) -> &ShardTopology {
        &self.topology
    }

    /// Requests sent to `side` so far.
    pub fn sent_to(&self, side: ShardSide) -> u64 {
        self.sent[side as usize]
    }

    pub async fn route_and_execute(&mut self, cmd: &Command) -> Result<Reply, RouterError> {
        if matches!(cmd, Command::Scan { .. }) {
            return Err(RouterError::UnsupportedOperation);
        }
        let side = self.topology.slots().side_of_key(cmd.key());
        self.sent[side as usize] += 1;
        let result = self.conn(side).await?.execute(cmd).await;
        result.map_err(|source| {
            // A broken connection is reopened on the next request.
            self.slot(side).take();
            RouterError::EndpointUnavailable { side, source }
        })
    }

    fn slot(&mut self, side: ShardSide) -> &mut Option<KvConnection> {
        match side {
            ShardSide::Host => &mut self.host,
            ShardSide::Nic => &mut self.nic,
        }
    }

    async fn conn(&mut self, side: ShardSide) -> Result<&mut KvConnection, RouterError> {
        if self.slot(side).is_none() {
            let ep = match side {
                ShardSide::Host => self.topology.host(),
                ShardSide::Nic => self.topology.nic(),
            };
            let conn = KvConnection::connect(ep, self.local_role, &self.profile)
                .await
                .map_err(|source| RouterError::EndpointUnavailable { side, source })?;
            *self.slot(side) = Some(conn);
        }
        Ok(self.slot(side).as_mut().expect("connection opened above"))
    }
}
