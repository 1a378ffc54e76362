//! Hash-slot partitioning of the key space between a host endpoint and a
//! NIC endpoint.
//!
//! A key lives in slot `crc16(key) mod 16384`. The slot map is a 2048-byte
//! bitmap, one bit per slot: `1` means the host owns the slot, `0` the NIC.
//! Slot `i` is bit `i % 8` (least significant first) of byte `i / 8`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replication::Endpoint;

pub const SLOT_COUNT: usize = 16_384;
pub const SLOT_MAP_BYTES: usize = SLOT_COUNT / 8;

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("slot {0} is out of range (0..16384)")]
    SlotOutOfRange(usize),
    #[error("slot map must be exactly 2048 bytes, got {0}")]
    BadSlotMapLength(usize),
    #[error("host and nic endpoints must differ, both are {0}")]
    DuplicateEndpoints(String),
    #[error("host fraction {0} is outside [0, 1]")]
    BadFraction(f64),
    #[error("slot map file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const CRC16_POLY: u16 = 0x1021;

const fn crc16_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ CRC16_POLY
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC16_TABLE: [u16; 256] = crc16_table();

/// CRC16/XMODEM: polynomial 0x1021, init 0, no reflection, no final xor.
/// Same variant Redis Cluster uses for key slots.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0u16, |crc, &b| {
        (crc << 8) ^ CRC16_TABLE[((crc >> 8) as u8 ^ b) as usize]
    })
}

pub fn slot_of(key: &[u8]) -> u16 {
    crc16(key) % SLOT_COUNT as u16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShardSide {
    Host,
    Nic,
}

impl fmt::Display for ShardSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShardSide::Host => "host",
            ShardSide::Nic => "nic",
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SlotMap {
    bits: Box<[u8; SLOT_MAP_BYTES]>,
}

impl SlotMap {
    pub fn build(mut assign: impl FnMut(u16) -> ShardSide) -> Self {
        let mut bits = Box::new([0u8; SLOT_MAP_BYTES]);
        for slot in 0..SLOT_COUNT as u16 {
            if assign(slot) == ShardSide::Host {
                bits[slot as usize / 8] |= 1 << (slot % 8);
            }
        }
        SlotMap { bits }
    }

    pub fn all(side: ShardSide) -> Self {
        Self::build(|_| side)
    }

    /// Slots 0..8192 on the host, 8192..16384 on the NIC.
    pub fn halves() -> Self {
        Self::build(|s| {
            if (s as usize) < SLOT_COUNT / 2 {
                ShardSide::Host
            } else {
                ShardSide::Nic
            }
        })
    }

    /// Even slots on the host, odd slots on the NIC.
    pub fn even_odd() -> Self {
        Self::build(|s| {
            if s % 2 == 0 {
                ShardSide::Host
            } else {
                ShardSide::Nic
            }
        })
    }

    /// Gives the host `round(16384 * host_fraction)` slots, interleaved evenly
    /// across the slot range.
    pub fn weighted(host_fraction: f64) -> Result<Self, ShardError> {
        if !(0.0..=1.0).contains(&host_fraction) {
            return Err(ShardError::BadFraction(host_fraction));
        }
        let host_slots = (SLOT_COUNT as f64 * host_fraction).round() as usize;
        Ok(Self::build(|s| {
            let s = s as usize;
            if (s + 1) * host_slots / SLOT_COUNT > s * host_slots / SLOT_COUNT {
                ShardSide::Host
            } else {
                ShardSide::Nic
            }
        }))
    }

    pub fn lookup(&self, slot: usize) -> Result<ShardSide, ShardError> {
        if slot >= SLOT_COUNT {
            return Err(ShardError::SlotOutOfRange(slot));
        }
        Ok(self.side_of_slot(slot as u16))
    }

    fn side_of_slot(&self, slot: u16) -> ShardSide {
        if self.bits[slot as usize / 8] & (1 << (slot % 8)) != 0 {
            ShardSide::Host
        } else {
            ShardSide::Nic
        }
    }

    pub fn side_of_key(&self, key: &[u8]) -> ShardSide {
        self.side_of_slot(slot_of(key))
    }

    pub fn host_slot_count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn as_bytes(&self) -> &[u8; SLOT_MAP_BYTES] {
        &self.bits
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShardError> {
        let bits: [u8; SLOT_MAP_BYTES] = bytes
            .try_into()
            .map_err(|_| ShardError::BadSlotMapLength(bytes.len()))?;
        Ok(SlotMap {
            bits: Box::new(bits),
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ShardError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ShardError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ShardError> {
        let path = path.as_ref();
        std::fs::write(path, &self.bits[..]).map_err(|source| ShardError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl Default for SlotMap {
    fn default() -> Self {
        Self::halves()
    }
}

impl fmt::Debug for SlotMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlotMap")
            .field("host_slots", &self.host_slot_count())
            .finish()
    }
}

/// Two non-overlapping shards plus the map that decides between them.
#[derive(Debug, Clone)]
pub struct ShardTopology {
    host: Endpoint,
    nic: Endpoint,
    slots: SlotMap,
}

impl ShardTopology {
    pub fn new(host: Endpoint, nic: Endpoint, slots: SlotMap) -> Result<Self, ShardError> {
        if host.address == nic.address && host.port == nic.port {
            return Err(ShardError::DuplicateEndpoints(host.to_string()));
        }
        Ok(ShardTopology { host, nic, slots })
    }

    pub fn host(&self) -> &Endpoint {
        &self.host
    }

    pub fn nic(&self) -> &Endpoint {
        &self.nic
    }

    pub fn slots(&self) -> &SlotMap {
        &self.slots
    }

    pub fn owner(&self, key: &[u8]) -> (ShardSide, &Endpoint) {
        match self.slots.side_of_key(key) {
            ShardSide::Host => (ShardSide::Host, &self.host),
            ShardSide::Nic => (ShardSide::Nic, &self.nic),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf::PerfRole;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent bit-at-a-time CRC16/XMODEM, no table.
    fn crc16_bitwise(data: &[u8]) -> u16 {
        let mut crc: u16 = 0;
        for &byte in data {
            crc ^= (byte as u16) << 8;
            for _ in 0..8 {
                if crc & 0x8000 != 0 {
                    crc = (crc << 1) ^ 0x1021;
                } else {
                    crc <<= 1;
                }
            }
        }
        crc
    }

    #[test]
    fn crc16_check_values() {
        assert_eq!(crc16_bitwise(b"123456789"), 0x31C3);
        assert_eq!(crc16(b"123456789"), 0x31C3);
        assert_eq!(crc16(b""), 0);
    }

    #[test]
    fn table_and_bitwise_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let len = rng.gen_range(0..64);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(crc16(&data), crc16_bitwise(&data));
        }
    }

    #[test]
    fn slot_wraps_modulo() {
        // Search small keys for ones whose crc16 is 0 and 16384.
        let mut found_zero = false;
        let mut found_wrap = false;
        for i in 0u32..2_000_000 {
            let key = i.to_be_bytes();
            match crc16(&key) {
                0 => {
                    assert_eq!(slot_of(&key), 0);
                    found_zero = true;
                }
                16_384 => {
                    assert_eq!(slot_of(&key), 0);
                    found_wrap = true;
                }
                _ => {}
            }
            if found_zero && found_wrap {
                break;
            }
        }
        assert!(found_zero && found_wrap);
    }

    #[test]
    fn single_bit_map() {
        let map = SlotMap::build(|s| {
            if s == 0 {
                ShardSide::Host
            } else {
                ShardSide::Nic
            }
        });
        assert_eq!(map.as_bytes()[0], 0x01);
        assert_eq!(map.lookup(0).unwrap(), ShardSide::Host);
        assert!((1..SLOT_COUNT).all(|s| map.lookup(s).unwrap() == ShardSide::Nic));
    }

    #[test]
    fn all_ones_map() {
        let map = SlotMap::all(ShardSide::Host);
        assert!(map.as_bytes().iter().all(|&b| b == 0xff));
        assert!((0..SLOT_COUNT).all(|s| map.lookup(s).unwrap() == ShardSide::Host));
    }

    #[test]
    fn random_assignment_round_trips_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let truth: Vec<ShardSide> = (0..SLOT_COUNT)
            .map(|_| {
                if rng.gen() {
                    ShardSide::Host
                } else {
                    ShardSide::Nic
                }
            })
            .collect();
        let map = SlotMap::build(|s| truth[s as usize]);
        for (s, want) in truth.iter().enumerate() {
            assert_eq!(map.lookup(s).unwrap(), *want);
        }
        let reparsed = SlotMap::from_bytes(map.as_bytes()).unwrap();
        assert_eq!(reparsed, map);
    }

    #[test]
    fn out_of_range_and_bad_length() {
        assert!(matches!(
            SlotMap::halves().lookup(SLOT_COUNT),
            Err(ShardError::SlotOutOfRange(16_384))
        ));
        assert!(matches!(
            SlotMap::from_bytes(&[0u8; 2047]),
            Err(ShardError::BadSlotMapLength(2047))
        ));
    }

    #[test]
    fn presets() {
        let halves = SlotMap::halves();
        assert_eq!(halves.host_slot_count(), 8192);
        assert_eq!(halves.lookup(8191).unwrap(), ShardSide::Host);
        assert_eq!(halves.lookup(8192).unwrap(), ShardSide::Nic);
        let eo = SlotMap::even_odd();
        assert_eq!(eo.host_slot_count(), 8192);
        assert_eq!(eo.as_bytes()[0], 0b0101_0101);
        let w = SlotMap::weighted(0.7).unwrap();
        assert_eq!(w.host_slot_count(), (16384.0f64 * 0.7).round() as usize);
        assert_eq!(
            SlotMap::weighted(1.0).unwrap(),
            SlotMap::all(ShardSide::Host)
        );
        assert_eq!(
            SlotMap::weighted(0.0).unwrap(),
            SlotMap::all(ShardSide::Nic)
        );
        assert!(SlotMap::weighted(1.5).is_err());
    }

    fn histogram(keys: usize, seed: u64) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hist = vec![0u32; SLOT_COUNT];
        for _ in 0..keys {
            let key: [u8; 16] = rng.gen();
            hist[slot_of(&key) as usize] += 1;
        }
        hist
    }

    #[test]
    fn slot_histogram_passes_chi_square() {
        let hist = histogram(1_000_000, 5);
        let mean = 1_000_000.0 / SLOT_COUNT as f64;
        let chi2: f64 = hist.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        let dof = (SLOT_COUNT - 1) as f64;
        assert!((chi2 - dof).abs() < 5.0 * (2.0 * dof).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn slot_histogram_spread_under_one_and_a_half() {
        // ~1000 keys per slot keeps the extreme slots within about 4.5 sigma
        // (+/-14%) of the mean.
        let hist = histogram(16 * SLOT_COUNT * 64, 6);
        let max = *hist.iter().max().unwrap() as f64;
        let min = *hist.iter().min().unwrap() as f64;
        assert!(max / min < 1.5, "max {max} min {min}");
    }

    #[test]
    fn topology_rejects_same_endpoint() {
        let ep = Endpoint::new("127.0.0.1", 7000, PerfRole::Host).unwrap();
        assert!(ShardTopology::new(ep.clone(), ep, SlotMap::halves()).is_err());
    }

    #[test]
    fn slot_map_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slots.bin");
        let map = SlotMap::weighted(0.3).unwrap();
        map.write_file(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 2048);
        assert_eq!(SlotMap::read_file(&path).unwrap(), map);
    }
}
