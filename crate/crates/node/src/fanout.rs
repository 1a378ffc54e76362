//! Replication downstream links. Each link is one persistent connection fed
//! by its own FIFO queue, so every downstream sees frames in the order they
//! were queued.

use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::Mutex;
use snickv_core::emulation::NodeCpu;
use snickv_core::replication::{Endpoint, ReplicationList};
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::stats::FanoutCounters;

/// Frames written per wake-up of a sender before it checks for a flush.
const MAX_BATCH: usize = 64;
const RECONNECT_BACKOFF: Duration = Duration::from_millis(100);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

struct Link {
    tx: mpsc::UnboundedSender<Bytes>,
}

#[derive(Default)]
struct Inner {
    list: ReplicationList,
    links: Vec<Link>,
    tasks: Vec<JoinHandle<()>>,
}

pub(crate) struct Fanout {
    inner: Mutex<Inner>,
    counters: Arc<FanoutCounters>,
    send_cost: Duration,
}

impl Fanout {
    pub fn new(send_cost: Duration) -> Self {
        Fanout {
            inner: Mutex::default(),
            counters: Arc::default(),
            send_cost,
        }
    }

    /// Adds `ep` unless an endpoint with the same socket is already present.
    /// Transmissions on the new link are charged to `cpu`.
    pub fn add(&self, ep: Endpoint, cpu: Arc<NodeCpu>) -> bool {
        let mut inner = self.inner.lock();
        if !inner.list.register(ep.clone()) {
            return false;
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let task = tokio::spawn(sender(ep, rx, cpu, self.send_cost, self.counters.clone()));
        inner.links.push(Link { tx });
        inner.tasks.push(task);
        true
    }

    /// Queues one encoded frame on every link; returns the number of links.
    pub fn send(&self, frame: &Bytes) -> usize {
        let inner = self.inner.lock();
        for link in &inner.links {
            self.counters.pending.inc();
            if link.tx.send(frame.clone()).is_err() {
                self.counters.pending.sub(1);
                self.counters.dropped.inc();
            }
        }
        inner.links.len()
    }

    pub fn endpoints(&self) -> Vec<String> {
        self.inner
            .lock()
            .list
            .slaves()
            .iter()
            .map(|e| e.to_string())
            .collect()
    }

    pub fn counters(&self) -> &FanoutCounters {
        &self.counters
    }

    /// Closes every queue and waits until the senders have written out what
    /// was already queued.
    pub async fn drain(&self) {
        let tasks = {
            let mut inner = self.inner.lock();
            inner.links.clear();
            std::mem::take(&mut inner.tasks)
        };
        for t in tasks {
            let _ = t.await;
        }
    }
}

async fn sender(
    ep: Endpoint,
    mut rx: mpsc::UnboundedReceiver<Bytes>,
    cpu: Arc<NodeCpu>,
    send_cost: Duration,
    counters: Arc<FanoutCounters>,
) {
    let mut conn: Option<BufWriter<TcpStream>> = None;
    let mut retry_at = Instant::now();
    let mut batch = Vec::with_capacity(MAX_BATCH);
    while let Some(first) = rx.recv().await {
        batch.push(first);
        while batch.len() < MAX_BATCH {
            match rx.try_recv() {
                Ok(f) => batch.push(f),
                Err(_) => break,
            }
        }
        let n = batch.len() as u64;
        cpu.charge(send_cost * n as u32).await;

        if conn.is_none() && Instant::now() >= retry_at {
            match connect(&ep).await {
                Ok(s) => conn = Some(BufWriter::new(s)),
                Err(e) => {
                    tracing::warn!("replication to {ep} unavailable: {e}");
                    retry_at = Instant::now() + RECONNECT_BACKOFF;
                }
            }
        }
        let written = match conn.as_mut() {
            Some(w) => write_batch(w, &batch, rx.is_empty()).await,
            None => Err(std::io::ErrorKind::NotConnected.into()),
        };
        match written {
            Ok(()) => counters.sent.add(n),
            Err(e) => {
                if conn.take().is_some() {
                    tracing::warn!("replication to {ep} failed: {e}");
                    retry_at = Instant::now() + RECONNECT_BACKOFF;
                }
                counters.dropped.add(n);
            }
        }
        counters.pending.sub(n);
        batch.clear();
    }
    if let Some(mut w) = conn {
        let _ = w.flush().await;
        let _ = w.shutdown().await;
    }
}

async fn connect(ep: &Endpoint) -> std::io::Result<TcpStream> {
    let s = tokio::time::timeout(
        CONNECT_TIMEOUT,
        TcpStream::connect((ep.address.as_str(), ep.port)),
    )
    .await
    .map_err(|_| std::io::Error::from(std::io::ErrorKind::TimedOut))??;
    s.set_nodelay(true)?;
    Ok(s)
}

async fn write_batch(
    w: &mut BufWriter<TcpStream>,
    batch: &[Bytes],
    flush: bool,
) -> std::io::Result<()> {
    for f in batch {
        w.write_all(f).await?;
    }
    if flush {
        w.flush().await?;
    }
    Ok(())
}
