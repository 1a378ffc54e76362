//! The node runtime: one listener speaking the frame protocol, serving
//! whichever role the node was configured with.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use futures::StreamExt;
use parking_lot::Mutex;
use snickv_client::{ClientError, KvConnection};
use snickv_core::api::{CacheStats, ReplicationStats, ShardStats, StatusReport};
use snickv_core::codec::FrameCodec;
use snickv_core::config::{NodeRole, NodeSpec, RoleSpec};
use snickv_core::emulation::{wait_until, NodeCpu};
use snickv_core::replication::{Endpoint, ReplicationMode};
use snickv_core::sharding::ShardSide;
use snickv_core::wire::{Command, Frame, FrameKind, Reply};
use snickv_core::{CacheState, PerfProfile, PerfRole, SlotMap, Store};
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_util::codec::FramedRead;
use tokio_util::sync::CancellationToken;
use tokio_util::task::TaskTracker;

use crate::admin;
use crate::fanout::Fanout;
use crate::stats::NodeCounters;

/// How long a node keeps reading frames that are still arriving after
/// shutdown was requested.
const DRAIN_IDLE: Duration = Duration::from_millis(200);
const REGISTER_PATIENCE: Duration = Duration::from_secs(10);
const INBOX_DEPTH: usize = 1024;

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("registration with {upstream} failed: {source}")]
    Register {
        upstream: String,
        #[source]
        source: ClientError,
    },
}

pub(crate) enum RoleState {
    Plain,
    Master {
        mode: ReplicationMode,
        fanout: Fanout,
    },
    Proxy {
        fanout: Fanout,
    },
    Slave {
        upstream: Endpoint,
    },
    Shard {
        slots: SlotMap,
        side: ShardSide,
        misrouted: AtomicU64,
    },
    CacheFront {
        host: Endpoint,
        cache: Mutex<CacheState>,
        fetches: AtomicU64,
        host_errors: AtomicU64,
    },
}

pub(crate) struct Shared {
    pub name: String,
    pub role: NodeRole,
    pub perf_role: PerfRole,
    inbound_role: PerfRole,
    pub endpoint: Endpoint,
    profile: PerfProfile,
    cpu: Arc<NodeCpu>,
    store: Mutex<Store>,
    counters: NodeCounters,
    state: RoleState,
    shutdown: CancellationToken,
}

/// A running node. Dropping the handle leaves the node running until the
/// runtime stops; call [`NodeHandle::shutdown`] for an orderly exit.
pub struct NodeHandle {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    admin_addr: Option<SocketAddr>,
    tracker: TaskTracker,
    accept: JoinHandle<()>,
    admin: Option<JoinHandle<()>>,
}

/// Starts a node. Returns once it is listening and, for a slave, registered
/// with its upstream.
pub async fn start(spec: NodeSpec, profile: PerfProfile) -> Result<NodeHandle, NodeError> {
    let listener = TcpListener::bind(&spec.listen)
        .await
        .map_err(|source| NodeError::Bind {
            addr: spec.listen.clone(),
            source,
        })?;
    let local_addr = listener.local_addr().map_err(|source| NodeError::Bind {
        addr: spec.listen.clone(),
        source,
    })?;
    let admin_listener = match &spec.admin {
        Some(addr) => Some(
            tokio::net::TcpListener::bind(addr)
                .await
                .map_err(|source| NodeError::Bind {
                    addr: addr.clone(),
                    source,
                })?,
        ),
        None => None,
    };
    let admin_addr = admin_listener.as_ref().and_then(|l| l.local_addr().ok());

    let endpoint = Endpoint::new(
        advertised_host(&spec.listen),
        local_addr.port(),
        spec.perf_role,
    )
    .expect("bound port is non-zero");
    let cpu = Arc::new(NodeCpu::new(profile.cpu_model()));
    let send_cost = profile.send_cost(spec.perf_role);
    let state = match &spec.kind {
        RoleSpec::Plain => RoleState::Plain,
        RoleSpec::Master { mode } => {
            let fanout = Fanout::new(send_cost);
            if let ReplicationMode::Offload { proxy } = mode {
                fanout.add(proxy.clone(), cpu.clone());
            }
            RoleState::Master {
                mode: mode.clone(),
                fanout,
            }
        }
        RoleSpec::Proxy => RoleState::Proxy {
            fanout: Fanout::new(send_cost),
        },
        RoleSpec::Slave { upstream } => RoleState::Slave {
            upstream: upstream.clone(),
        },
        RoleSpec::Shard { slots } => RoleState::Shard {
            slots: slots.clone(),
            side: match spec.perf_role {
                PerfRole::Host => ShardSide::Host,
                PerfRole::Nic => ShardSide::Nic,
            },
            misrouted: AtomicU64::new(0),
        },
        RoleSpec::CacheFront { host, capacity } => RoleState::CacheFront {
            host: host.clone(),
            cache: Mutex::new(CacheState::new(*capacity)),
            fetches: AtomicU64::new(0),
            host_errors: AtomicU64::new(0),
        },
    };
    let shared = Arc::new(Shared {
        name: spec.name.clone(),
        role: spec.kind.role(),
        perf_role: spec.perf_role,
        inbound_role: spec.inbound_role,
        endpoint,
        profile,
        cpu,
        store: Mutex::new(Store::new()),
        counters: NodeCounters::default(),
        state,
        shutdown: CancellationToken::new(),
    });

    let tracker = TaskTracker::new();
    let accept = tokio::spawn(accept_loop(listener, shared.clone(), tracker.clone()));
    let admin = admin_listener.map(|l| {
        let shared = shared.clone();
        tokio::spawn(async move { admin::serve(l, shared).await })
    });
    let handle = NodeHandle {
        shared,
        local_addr,
        admin_addr,
        tracker,
        accept,
        admin,
    };

    if let RoleState::Slave { upstream } = &handle.shared.state {
        if let Err(source) = register(&handle.shared, upstream).await {
            let upstream = upstream.to_string();
            handle.shutdown().await;
            return Err(NodeError::Register { upstream, source });
        }
    }
    tracing::info!(
        "{} ({} @{}) listening on {}",
        handle.shared.name,
        handle.shared.role,
        handle.shared.perf_role,
        local_addr
    );
    Ok(handle)
}

fn advertised_host(listen: &str) -> String {
    let host = listen.rsplit_once(':').map(|(h, _)| h).unwrap_or(listen);
    let host = host.trim_start_matches('[').trim_end_matches(']');
    match host {
        "" | "0.0.0.0" | "::" => "127.0.0.1".to_owned(),
        h => h.to_owned(),
    }
}

async fn register(shared: &Shared, upstream: &Endpoint) -> Result<(), ClientError> {
    let mut conn = KvConnection::connect_patiently(
        upstream,
        shared.perf_role,
        &shared.profile,
        REGISTER_PATIENCE,
    )
    .await?;
    conn.register_slave(&shared.endpoint).await
}

impl NodeHandle {
    pub fn name(&self) -> &str {
        &self.shared.name
    }

    pub fn role(&self) -> NodeRole {
        self.shared.role
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn admin_addr(&self) -> Option<SocketAddr> {
        self.admin_addr
    }

    /// The endpoint peers should use to reach this node.
    pub fn endpoint(&self) -> Endpoint {
        self.shared.endpoint.clone()
    }

    pub fn status(&self) -> StatusReport {
        self.shared.status()
    }

    /// Runs a command as if it arrived on a connection (minus the hop).
    pub async fn execute(&self, cmd: &Command) -> Reply {
        self.shared.execute(cmd, Instant::now(), &mut None).await
    }

    /// Stops accepting work, finishes what has already arrived, and writes
    /// out every queued replication frame before returning.
    pub async fn shutdown(self) {
        self.shared.shutdown.cancel();
        let _ = self.accept.await;
        self.tracker.close();
        self.tracker.wait().await;
        match &self.shared.state {
            RoleState::Master { fanout, .. } | RoleState::Proxy { fanout } => fanout.drain().await,
            _ => {}
        }
        if let Some(admin) = self.admin {
            let _ = admin.await;
        }
        tracing::info!("{} stopped", self.shared.name);
    }
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>, tracker: TaskTracker) {
    loop {
        tokio::select! {
            _ = shared.shutdown.cancelled() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    tracker.spawn(serve_connection(shared.clone(), stream));
                }
                Err(e) => {
                    tracing::warn!("{}: accept failed: {e}", shared.name);
                    tokio::time::sleep(Duration::from_millis(10)).await;
                }
            },
        }
    }
}

/// Frames are read by a separate task that stamps their arrival, so the
/// injected hop of a frame that queued behind others overlaps with the
/// processing of its predecessors, as it would on a real link.
async fn serve_connection(shared: Arc<Shared>, stream: TcpStream) {
    stream.set_nodelay(true).ok();
    let (rd, wr) = stream.into_split();
    let (tx, mut inbox) = mpsc::channel::<(Instant, Frame)>(INBOX_DEPTH);
    let reader = tokio::spawn(read_frames(
        shared.clone(),
        FramedRead::new(rd, FrameCodec),
        tx,
    ));

    let mut out = BufWriter::new(wr);
    let mut upstream: Option<KvConnection> = None;
    while let Some((arrived, frame)) = inbox.recv().await {
        shared.counters.frames_received.inc();
        let src = match frame.kind {
            FrameKind::Replicate => shared.replicate_source(),
            FrameKind::RegisterSlave => Endpoint::decode(&frame.payload)
                .map(|e| e.role)
                .unwrap_or(shared.inbound_role),
            _ => shared.inbound_role,
        };
        // Handlers fold this into their CPU charge.
        let ready = arrived + shared.profile.hop_wait(src, shared.perf_role);

        let response = match frame.kind {
            FrameKind::Request => {
                shared.counters.requests.inc();
                let reply = match Command::decode(&frame.payload) {
                    Ok(cmd) => shared.execute(&cmd, ready, &mut upstream).await,
                    Err(e) => {
                        wait_until(ready).await;
                        shared.counters.protocol_violations.inc();
                        Reply::error(e.to_string())
                    }
                };
                Some(Frame::reply(&reply))
            }
            FrameKind::Replicate => {
                shared.on_replicate(frame.payload, ready).await;
                None
            }
            FrameKind::RegisterSlave => {
                wait_until(ready).await;
                Some(shared.on_register(&frame.payload))
            }
            FrameKind::Reply | FrameKind::Ack => {
                shared.counters.protocol_violations.inc();
                None
            }
        };
        if let Some(f) = response {
            let mut r = out.write_all(&f.encode()).await;
            if r.is_ok() && inbox.is_empty() {
                r = out.flush().await;
            }
            if r.is_err() {
                break;
            }
        }
    }
    let _ = out.flush().await;
    reader.abort();
}

async fn read_frames(
    shared: Arc<Shared>,
    mut frames: FramedRead<tokio::net::tcp::OwnedReadHalf, FrameCodec>,
    tx: mpsc::Sender<(Instant, Frame)>,
) {
    loop {
        let next = if shared.shutdown.is_cancelled() {
            // Draining: take what is still in flight, stop once the peer
            // goes quiet.
            match tokio::time::timeout(DRAIN_IDLE, frames.next()).await {
                Ok(next) => next,
                Err(_) => break,
            }
        } else {
            tokio::select! {
                _ = shared.shutdown.cancelled() => continue,
                next = frames.next() => next,
            }
        };
        match next {
            Some(Ok(frame)) => {
                if tx.send((Instant::now(), frame)).await.is_err() {
                    break;
                }
            }
            Some(Err(e)) => {
                shared.counters.protocol_violations.inc();
                tracing::warn!("{}: dropping connection: {e}", shared.name);
                break;
            }
            None => break,
        }
    }
}

impl Shared {
    pub fn shutdown_token(&self) -> CancellationToken {
        self.shutdown.clone()
    }

    fn replicate_source(&self) -> PerfRole {
        match &self.state {
            RoleState::Slave { upstream } => upstream.role,
            _ => PerfRole::Host,
        }
    }

    fn op_cost(&self) -> Duration {
        self.profile.op_cost(self.perf_role)
    }

    fn send_cost(&self) -> Duration {
        self.profile.send_cost(self.perf_role)
    }

    /// Serves one client command according to the node's role.
    /// `upstream` is the connection a cache front forwards on.
    /// `ready` is when the request has fully arrived.
    pub async fn execute(
        &self,
        cmd: &Command,
        ready: Instant,
        upstream: &mut Option<KvConnection>,
    ) -> Reply {
        let work = self.op_cost() + self.send_cost();
        match &self.state {
            RoleState::CacheFront {
                host,
                cache,
                fetches,
                host_errors,
            } => {
                self.cache_front(cmd, ready, host, cache, fetches, host_errors, upstream)
                    .await
            }
            RoleState::Proxy { .. } => {
                self.cpu.charge_after(ready, work).await;
                Reply::error("a replication proxy does not serve clients")
            }
            RoleState::Slave { .. } if cmd.is_write() => {
                self.cpu.charge_after(ready, work).await;
                Reply::error("read-only replica")
            }
            RoleState::Shard {
                slots,
                side,
                misrouted,
            } if !matches!(cmd, Command::Scan { .. }) && slots.side_of_key(cmd.key()) != *side => {
                self.cpu.charge_after(ready, work).await;
                misrouted.fetch_add(1, Ordering::Relaxed);
                Reply::error("key belongs to the other shard")
            }
            RoleState::Master { fanout, .. } => {
                self.cpu.charge_after(ready, work).await;
                let mut store = self.store.lock();
                let reply = store.apply(cmd);
                // Queued under the store lock, so downstream order is apply order.
                if cmd.is_write() {
                    fanout.send(&Frame::replicate(cmd).encode());
                }
                reply
            }
            _ => {
                self.cpu.charge_after(ready, work).await;
                self.store.lock().apply(cmd)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    async fn cache_front(
        &self,
        cmd: &Command,
        ready: Instant,
        host: &Endpoint,
        cache: &Mutex<CacheState>,
        fetches: &AtomicU64,
        host_errors: &AtomicU64,
        upstream: &mut Option<KvConnection>,
    ) -> Reply {
        // Either the reply goes out now or the request is forwarded: one send.
        self.cpu
            .charge_after(ready, self.op_cost() + self.send_cost())
            .await;
        if let Command::Get { key } = cmd {
            if let Some(v) = cache.lock().lookup(key) {
                return Reply::ok_with(v);
            }
            fetches.fetch_add(1, Ordering::Relaxed);
        }
        let reply = match self.forward(cmd, host, upstream).await {
            Ok(r) => r,
            Err(e) => {
                host_errors.fetch_add(1, Ordering::Relaxed);
                tracing::warn!("{}: host unavailable: {e}", self.name);
                return Reply::error("host unavailable");
            }
        };
        match cmd {
            Command::Get { key } | Command::Set { key, .. } if reply.is_ok() => {
                let value = match cmd {
                    Command::Set { value, .. } => value.clone(),
                    _ => reply.value().clone(),
                };
                cache.lock().fill(key.clone().into_bytes(), value);
            }
            Command::Set { key, .. } | Command::Del { key } => cache.lock().invalidate(key),
            _ => {}
        }
        self.cpu.charge(self.send_cost()).await;
        reply
    }

    async fn forward(
        &self,
        cmd: &Command,
        host: &Endpoint,
        upstream: &mut Option<KvConnection>,
    ) -> Result<Reply, ClientError> {
        if upstream.is_none() {
            *upstream = Some(KvConnection::connect(host, self.perf_role, &self.profile).await?);
        }
        let conn = upstream.as_mut().expect("connected above");
        let result = conn.execute(cmd).await;
        if result.is_err() {
            *upstream = None;
        }
        result
    }

    async fn on_replicate(&self, payload: Bytes, ready: Instant) {
        let cmd = match Command::decode(&payload) {
            Ok(cmd) if cmd.is_write() => cmd,
            _ => {
                wait_until(ready).await;
                self.counters.protocol_violations.inc();
                return;
            }
        };
        match &self.state {
            RoleState::Slave { .. } => {
                self.cpu.charge_after(ready, self.op_cost()).await;
                self.store.lock().apply(&cmd);
                self.counters.applied.inc();
            }
            RoleState::Proxy { fanout } => {
                self.cpu.charge_after(ready, self.op_cost()).await;
                fanout.send(&Frame::new(FrameKind::Replicate, payload).encode());
            }
            _ => self.counters.protocol_violations.inc(),
        }
    }

    fn on_register(&self, payload: &[u8]) -> Frame {
        let fanout = match &self.state {
            RoleState::Proxy { fanout } => Some((fanout, None)),
            RoleState::Master {
                mode: ReplicationMode::Direct,
                fanout,
            } => Some((fanout, Some(self.cpu.clone()))),
            _ => None,
        };
        match (fanout, Endpoint::decode(payload)) {
            (Some((fanout, cpu)), Ok(ep)) => {
                // Proxy links each get a NIC core of their own; a master's
                // links share the master's core.
                let cpu = cpu.unwrap_or_else(|| Arc::new(NodeCpu::new(self.profile.cpu_model())));
                if fanout.add(ep.clone(), cpu) {
                    tracing::info!("{}: registered {ep}", self.name);
                }
                Frame::ack()
            }
            (Some(_), Err(e)) => {
                self.counters.protocol_violations.inc();
                Frame::reply(&Reply::error(e.to_string()))
            }
            (None, _) => {
                self.counters.protocol_violations.inc();
                Frame::reply(&Reply::error(format!(
                    "a {} does not take slaves",
                    self.role
                )))
            }
        }
    }

    pub fn status(&self) -> StatusReport {
        let (write_count, digest) = {
            let store = self.store.lock();
            (store.write_count(), store.digest())
        };
        let fanout_stats = |mode: &str, fanout: &Fanout| {
            let c = fanout.counters();
            ReplicationStats {
                mode: mode.to_owned(),
                downstream: fanout.endpoints(),
                frames_sent: c.sent.get(),
                frames_dropped: c.dropped.get(),
                pending: c.pending.get(),
                applied: 0,
            }
        };
        let mut report = StatusReport {
            name: self.name.clone(),
            role: self.role,
            perf_role: self.perf_role,
            listen: self.endpoint.authority(),
            write_count,
            digest,
            frames_received: self.counters.frames_received.get(),
            requests: self.counters.requests.get(),
            protocol_violations: self.counters.protocol_violations.get(),
            busy_us: self.cpu.busy_time().as_micros() as u64,
            replication: None,
            cache: None,
            shard: None,
        };
        match &self.state {
            RoleState::Plain => {}
            RoleState::Master { mode, fanout } => {
                report.replication = Some(fanout_stats(mode.name(), fanout))
            }
            RoleState::Proxy { fanout } => report.replication = Some(fanout_stats("proxy", fanout)),
            RoleState::Slave { upstream } => {
                report.replication = Some(ReplicationStats {
                    mode: "slave".to_owned(),
                    downstream: vec![upstream.to_string()],
                    frames_sent: 0,
                    frames_dropped: 0,
                    pending: 0,
                    applied: self.counters.applied.get(),
                })
            }
            RoleState::Shard {
                slots, misrouted, ..
            } => {
                report.shard = Some(ShardStats {
                    host_slots: slots.host_slot_count(),
                    misrouted: misrouted.load(Ordering::Relaxed),
                })
            }
            RoleState::CacheFront {
                cache,
                fetches,
                host_errors,
                ..
            } => {
                let cache = cache.lock();
                report.cache = Some(CacheStats {
                    capacity: cache.capacity(),
                    len: cache.len(),
                    hits: cache.hits(),
                    misses: cache.misses(),
                    host_fetches: fetches.load(Ordering::Relaxed),
                    host_errors: host_errors.load(Ordering::Relaxed),
                });
            }
        }
        report
    }
}
