//! Ordered in-memory key-value engine. Every node role that holds data runs
//! commands through [`Store::apply`], so master, slaves and shards share one
//! execution path.

use std::collections::BTreeMap;
use std::ops::Bound;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::wire::{encode_scan_entries, Command, Reply};

#[derive(Debug, Default, Clone)]
pub struct Store {
    entries: BTreeMap<Bytes, Bytes>,
    write_count: u64,
}

/// Order-insensitive fingerprint of a store's key/value set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoreDigest {
    pub hash: u64,
    pub entry_count: u64,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, cmd: &Command) -> Reply {
        match cmd {
            Command::Set { key, value } => {
                self.entries.insert(key.clone().into_bytes(), value.clone());
                self.write_count += 1;
                Reply::ok()
            }
            Command::Get { key } => match self.entries.get(key.as_bytes()) {
                Some(v) => Reply::ok_with(v.clone()),
                None => Reply::not_found(),
            },
            Command::Del { key } => match self.entries.remove(key.as_bytes()) {
                Some(_) => {
                    self.write_count += 1;
                    Reply::ok()
                }
                None => Reply::not_found(),
            },
            Command::Scan { start, count } => {
                let from: Bound<&[u8]> = Bound::Included(start.as_bytes());
                let hits = self
                    .entries
                    .range::<[u8], _>((from, Bound::Unbounded))
                    .take(count.get() as usize)
                    .map(|(k, v)| (&k[..], &v[..]));
                Reply::ok_with(encode_scan_entries(hits))
            }
        }
    }

    pub fn get(&self, key: &[u8]) -> Option<&Bytes> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mutations applied so far. A DEL of a missing key is not a mutation.
    pub fn write_count(&self) -> u64 {
        self.write_count
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Bytes, &Bytes)> {
        self.entries.iter()
    }

    pub fn digest(&self) -> StoreDigest {
        let hash = self
            .entries
            .iter()
            .fold(0u64, |acc, (k, v)| acc.wrapping_add(entry_hash(k, v)));
        StoreDigest {
            hash,
            entry_count: self.entries.len() as u64,
        }
    }
}

/// FNV-1a over `(key_len BE, key, val_len BE, value)`, finished with the
/// splitmix64 mixer so that summing entry hashes does not cancel structure.
pub fn entry_hash(key: &[u8], value: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&(key.len() as u32).to_be_bytes());
    feed(key);
    feed(&(value.len() as u32).to_be_bytes());
    feed(value);
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
