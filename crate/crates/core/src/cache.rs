//! LRU read cache state for the NIC-resident cache front.

use std::num::NonZeroUsize;

use bytes::Bytes;
use lru::LruCache;

#[derive(Debug)]
pub struct CacheState {
    entries: LruCache<Bytes, Bytes>,
    hits: u64,
    misses: u64,
}

impl CacheState {
    pub fn new(capacity: NonZeroUsize) -> Self {
        CacheState {
            entries: LruCache::new(capacity),
            hits: 0,
            misses: 0,
        }
    }

    /// `None` when `capacity` is zero.
    pub fn with_capacity(capacity: usize) -> Option<Self> {
        NonZeroUsize::new(capacity).map(Self::new)
    }

    /// Serves a GET from the cache. A hit promotes the key to most recently
    /// used; every call counts as exactly one hit or one miss.
    pub fn lookup(&mut self, key: &[u8]) -> Option<Bytes> {
        match self.entries.get(key) {
            Some(v) => {
                self.hits += 1;
                Some(v.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Inserts or refreshes an entry, evicting the least recently used one
    /// when full.
    pub fn fill(&mut self, key: Bytes, value: Bytes) {
        self.entries.put(key, value);
    }

    pub fn invalidate(&mut self, key: &[u8]) {
        self.entries.pop(key);
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.entries.contains(key)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.entries.cap().get()
    }
}
