//! Replication bookkeeping shared by the master (Direct mode) and the NIC
//! proxy (Offload mode): endpoints, the ordered replication list, and the
//! RegisterSlave payload format.
//!
//! RegisterSlave payload: `[role u8][port u16 BE][addr_len u16 BE][addr]`,
//! role `0x00` = host, `0x01` = nic.

use std::fmt;
use std::str::FromStr;

use bytes::{Buf, BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};

use crate::perf::PerfRole;
use crate::wire::WireError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub address: String,
    pub port: u16,
    pub role: PerfRole,
}

impl Endpoint {
    pub fn new(address: impl Into<String>, port: u16, role: PerfRole) -> Result<Self, WireError> {
        let address = address.into();
        if port == 0 {
            return Err(WireError::MalformedEndpoint("port must be > 0"));
        }
        if address.is_empty() || address.len() > u16::MAX as usize {
            return Err(WireError::MalformedEndpoint("bad address length"));
        }
        Ok(Endpoint {
            address,
            port,
            role,
        })
    }

    /// Parses `addr:port`.
    pub fn parse(s: &str, role: PerfRole) -> Result<Self, WireError> {
        let (addr, port) = s
            .rsplit_once(':')
            .ok_or(WireError::MalformedEndpoint("expected addr:port"))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| WireError::MalformedEndpoint("bad port"))?;
        Endpoint::new(addr, port, role)
    }

    /// `addr:port`, the form accepted by `TcpStream::connect`.
    pub fn authority(&self) -> String {
        format!("{}:{}", self.address, self.port)
    }

    pub fn same_socket(&self, other: &Endpoint) -> bool {
        self.address == other.address && self.port == other.port
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::with_capacity(5 + self.address.len());
        buf.put_u8(match self.role {
            PerfRole::Host => 0x00,
            PerfRole::Nic => 0x01,
        });
        buf.put_u16(self.port);
        buf.put_u16(self.address.len() as u16);
        buf.put_slice(self.address.as_bytes());
        buf.freeze()
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self, WireError> {
        use WireError::MalformedEndpoint as Bad;

        if bytes.remaining() < 5 {
            return Err(Bad("truncated header"));
        }
        let role = match bytes.get_u8() {
            0x00 => PerfRole::Host,
            0x01 => PerfRole::Nic,
            _ => return Err(Bad("unknown role")),
        };
        let port = bytes.get_u16();
        let len = bytes.get_u16() as usize;
        if bytes.remaining() != len {
            return Err(Bad("address length mismatch"));
        }
        let address = std::str::from_utf8(bytes).map_err(|_| Bad("address is not utf-8"))?;
        Endpoint::new(address, port, role)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.address, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = WireError;

    /// `addr:port` or `addr:port@nic` / `addr:port@host`. Role defaults to host.
    fn from_str(s: &str) -> Result<Self, WireError> {
        match s.split_once('@') {
            Some((ep, role)) => {
                let role = role
                    .parse::<PerfRole>()
                    .map_err(|_| WireError::MalformedEndpoint("role must be host or nic"))?;
                Endpoint::parse(ep, role)
            }
            None => Endpoint::parse(s, PerfRole::Host),
        }
    }
}

/// Slaves in registration order, no duplicate `(address, port)` pairs.
#[derive(Debug, Clone, Default)]
pub struct ReplicationList {
    slaves: Vec<Endpoint>,
}

impl ReplicationList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `ep` unless an endpoint with the same address and port is
    /// already listed. Returns whether the list grew.
    pub fn register(&mut self, ep: Endpoint) -> bool {
        if self.slaves.iter().any(|s| s.same_socket(&ep)) {
            return false;
        }
        self.slaves.push(ep);
        true
    }

    pub fn slaves(&self) -> &[Endpoint] {
        &self.slaves
    }

    pub fn len(&self) -> usize {
        self.slaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slaves.is_empty()
    }
}

/// Who fans writes out to the slaves. Offload mode always names its proxy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ReplicationMode {
    Direct,
    Offload { proxy: Endpoint },
}

impl ReplicationMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReplicationMode::Direct => "direct",
            ReplicationMode::Offload { .. } => "offload",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ep(port: u16) -> Endpoint {
        Endpoint::new("127.0.0.1", port, PerfRole::Host).unwrap()
    }

    #[test]
    fn duplicate_registration_is_idempotent() {
        let mut list = ReplicationList::new();
        assert!(list.register(ep(7001)));
        assert!(!list.register(ep(7001)));
        // Same socket with a different role is still the same slave.
        let mut nic = ep(7001);
        nic.role = PerfRole::Nic;
        assert!(!list.register(nic));
        assert_eq!(list.len(), 1);
    }

    #[test]
    fn registration_order_is_kept() {
        let mut list = ReplicationList::new();
        for p in [7003, 7001, 7002] {
            list.register(ep(p));
        }
        let ports: Vec<u16> = list.slaves().iter().map(|e| e.port).collect();
        assert_eq!(ports, vec![7003, 7001, 7002]);
    }

    #[test]
    fn endpoint_validation() {
        assert!(Endpoint::new("h", 0, PerfRole::Host).is_err());
        assert!(Endpoint::new("", 1, PerfRole::Host).is_err());
        assert!(Endpoint::decode(&[0x00, 0, 1, 0, 5, b'a']).is_err());
        assert!(Endpoint::decode(&[0x07, 0, 1, 0, 1, b'a']).is_err());
    }

    #[test]
    fn endpoint_parsing() {
        let e: Endpoint = "10.0.0.2:6380@nic".parse().unwrap();
        assert_eq!(e.address, "10.0.0.2");
        assert_eq!(e.port, 6380);
        assert_eq!(e.role, PerfRole::Nic);
        let e: Endpoint = "localhost:1".parse().unwrap();
        assert_eq!(e.role, PerfRole::Host);
        assert!("nope".parse::<Endpoint>().is_err());
        assert!("a:70000".parse::<Endpoint>().is_err());
    }

    #[test]
    fn mode_json_shape() {
        let m: ReplicationMode = serde_json::from_str(
            r#"{"mode":"offload","proxy":{"address":"127.0.0.1","port":7100,"role":"nic"}}"#,
        )
        .unwrap();
        assert_eq!(m.name(), "offload");
        let d: ReplicationMode = serde_json::from_str(r#"{"mode":"direct"}"#).unwrap();
        assert_eq!(d, ReplicationMode::Direct);
        assert!(serde_json::from_str::<ReplicationMode>(r#"{"mode":"offload"}"#).is_err());
    }

    proptest! {
        #[test]
        fn endpoint_round_trip(addr in "[a-z0-9.]{1,40}", port in 1u16.., nic in any::<bool>()) {
            let role = if nic { PerfRole::Nic } else { PerfRole::Host };
            let e = Endpoint::new(addr, port, role).unwrap();
            prop_assert_eq!(Endpoint::decode(&e.encode()).unwrap(), e);
        }
    }
}
