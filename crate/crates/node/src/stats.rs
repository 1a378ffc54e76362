use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Default)]
pub(crate) struct Counter(AtomicU64);

impl Counter {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn inc(&self) {
        self.add(1);
    }

    pub fn sub(&self, n: u64) {
        self.0.fetch_sub(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Default)]
pub(crate) struct NodeCounters {
    pub frames_received: Counter,
    pub requests: Counter,
    pub protocol_violations: Counter,
    /// Replicate frames applied to the local store.
    pub applied: Counter,
}

#[derive(Debug, Default)]
pub(crate) struct FanoutCounters {
    pub sent: Counter,
    pub dropped: Counter,
    pub pending: Counter,
}
