//! One persistent connection to a node.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use snickv_core::codec::{CodecError, FrameCodec};
use snickv_core::emulation::apply_delay;
use snickv_core::replication::Endpoint;
use snickv_core::wire::{Command, Frame, FrameKind, Reply, WireError};
use snickv_core::{PerfProfile, PerfRole};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_util::codec::Framed;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{endpoint} is unavailable: {source}")]
    Unavailable {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{endpoint} closed the connection")]
    Closed { endpoint: String },
    #[error("{endpoint} sent an unexpected {kind:?} frame")]
    UnexpectedFrame { endpoint: String, kind: FrameKind },
    #[error("protocol error talking to {endpoint}: {source}")]
    Protocol {
        endpoint: String,
        #[source]
        source: WireError,
    },
}

/// A closed-loop connection: one request in flight at a time.
///
/// Replies pay the emulated one-way hop from the target's role to
/// `local_role`; the node pays the forward hop on receipt.
#[derive(Debug)]
pub struct KvConnection {
    framed: Framed<TcpStream, FrameCodec>,
    endpoint: Endpoint,
    reply_hop: Duration,
    requests: u64,
}

impl KvConnection {
    pub async fn connect(
        endpoint: &Endpoint,
        local_role: PerfRole,
        profile: &PerfProfile,
    ) -> Result<Self, ClientError> {
        let stream = TcpStream::connect((endpoint.address.as_str(), endpoint.port))
            .await
            .map_err(|source| ClientError::Unavailable {
                endpoint: endpoint.to_string(),
                source,
            })?;
        stream.set_nodelay(true).ok();
        Ok(KvConnection {
            framed: Framed::new(stream, FrameCodec),
            endpoint: endpoint.clone(),
            reply_hop: profile.hop_wait(endpoint.role, local_role),
            requests: 0,
        })
    }

    /// Like [`connect`](Self::connect), retrying refused connections until
    /// `patience` runs out. For peers that may still be starting.
    pub async fn connect_patiently(
        endpoint: &Endpoint,
        local_role: PerfRole,
        profile: &PerfProfile,
        patience: Duration,
    ) -> Result<Self, ClientError> {
        let give_up = tokio::time::Instant::now() + patience;
        loop {
            match Self::connect(endpoint, local_role, profile).await {
                Ok(c) => return Ok(c),
                Err(e) if tokio::time::Instant::now() >= give_up => return Err(e),
                Err(_) => tokio::time::sleep(Duration::from_millis(20)).await,
            }
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Requests sent on this connection.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub async fn execute(&mut self, cmd: &Command) -> Result<Reply, ClientError> {
        self.requests += 1;
        let frame = self.round_trip(Frame::request(cmd)).await?;
        if frame.kind != FrameKind::Reply {
            return Err(self.unexpected(frame.kind));
        }
        Reply::decode(&frame.payload).map_err(|source| self.protocol(source))
    }

    /// Announces `me` as a replication target and waits for the Ack.
    pub async fn register_slave(&mut self, me: &Endpoint) -> Result<(), ClientError> {
        let frame = self
            .round_trip(Frame::new(FrameKind::RegisterSlave, me.encode()))
            .await?;
        match frame.kind {
            FrameKind::Ack => Ok(()),
            FrameKind::Reply => {
                let reply = Reply::decode(&frame.payload).map_err(|s| self.protocol(s))?;
                Err(
                    self.protocol(WireError::MalformedEndpoint(if reply.is_ok() {
                        "registration answered with a reply"
                    } else {
                        "registration refused"
                    })),
                )
            }
            kind => Err(self.unexpected(kind)),
        }
    }

    async fn round_trip(&mut self, frame: Frame) -> Result<Frame, ClientError> {
        if let Err(e) = self.framed.send(frame).await {
            return Err(self.codec(e));
        }
        let reply = match self.framed.next().await {
            Some(Ok(f)) => f,
            Some(Err(e)) => return Err(self.codec(e)),
            None => {
                return Err(ClientError::Closed {
                    endpoint: self.endpoint.to_string(),
                })
            }
        };
        apply_delay(self.reply_hop).await;
        Ok(reply)
    }

    fn codec(&self, e: CodecError) -> ClientError {
        match e {
            CodecError::Io(source) => ClientError::Unavailable {
                endpoint: self.endpoint.to_string(),
                source,
            },
            CodecError::Wire(source) => self.protocol(source),
        }
    }

    fn protocol(&self, source: WireError) -> ClientError {
        ClientError::Protocol {
            endpoint: self.endpoint.to_string(),
            source,
        }
    }

    fn unexpected(&self, kind: FrameKind) -> ClientError {
        ClientError::UnexpectedFrame {
            endpoint: self.endpoint.to_string(),
            kind,
        }
    }
}
