#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use futures::{SinkExt, StreamExt};
use parking_lot::Mutex;
use snickv_core::codec::FrameCodec;
use snickv_core::replication::Endpoint;
use snickv_core::wire::{Command, Frame, FrameKind, Reply};
use snickv_core::{PerfRole, Store};
use tokio::net::TcpListener;
use tokio_util::codec::Framed;

/// A bare-bones in-process server: applies requests to a store, acks
/// registrations and counts frames.
pub struct FakeServer {
    pub endpoint: Endpoint,
    pub store: Arc<Mutex<Store>>,
    pub frames: Arc<AtomicU64>,
    task: tokio::task::JoinHandle<()>,
}

impl FakeServer {
    pub async fn start(role: PerfRole) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let port = listener.local_addr().unwrap().port();
        let store = Arc::new(Mutex::new(Store::new()));
        let frames = Arc::new(AtomicU64::new(0));
        let (st, fr) = (store.clone(), frames.clone());
        let task = tokio::spawn(async move {
            while let Ok((stream, _)) = listener.accept().await {
                let (st, fr) = (st.clone(), fr.clone());
                tokio::spawn(async move {
                    let mut framed = Framed::new(stream, FrameCodec);
                    while let Some(Ok(f)) = framed.next().await {
                        fr.fetch_add(1, Ordering::SeqCst);
                        let out = match f.kind {
                            FrameKind::Request => match Command::decode(&f.payload) {
                                Ok(cmd) => Frame::reply(&st.lock().apply(&cmd)),
                                Err(e) => Frame::reply(&Reply::error(e.to_string())),
                            },
                            FrameKind::RegisterSlave => Frame::ack(),
                            _ => Frame::reply(&Reply::error("unexpected")),
                        };
                        if framed.send(out).await.is_err() {
                            break;
                        }
                    }
                });
            }
        });
        FakeServer {
            endpoint: Endpoint::new("127.0.0.1", port, role).unwrap(),
            store,
            frames,
            task,
        }
    }

    pub fn frames(&self) -> u64 {
        self.frames.load(Ordering::SeqCst)
    }

    /// Stops accepting. Existing connections stay up.
    pub fn stop_accepting(&self) {
        self.task.abort();
    }
}

/// A port nothing listens on.
pub fn dead_endpoint(role: PerfRole) -> Endpoint {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    Endpoint::new("127.0.0.1", port, role).unwrap()
}
