//! Workload generation, latency statistics and CSV reporting for the
//! closed-loop benchmark. The networked runner lives in `snickv-client`.

use std::fmt;
use std::fs::OpenOptions;
use std::path::Path;
use std::str::FromStr;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::Command;

/// Success probability of the geometric recency draw used by `Latest`
/// (mean offset of about 19 writes back).
pub const LATEST_GEOMETRIC_P: f64 = 0.05;
pub const DEFAULT_MAX_SCAN_LEN: u32 = 100;
/// redis-benchmark's default payload.
pub const DEFAULT_VALUE_SIZE: usize = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("percentile of an empty sample set")]
    EmptySamples,
    #[error("percentile fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("unknown workload `{0}` (expected A, B, C, D, E or custom)")]
    UnknownPreset(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Read/write/scan percentages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mix {
    pub read: u8,
    pub write: u8,
    pub scan: u8,
}

impl Mix {
    pub const fn new(read: u8, write: u8, scan: u8) -> Self {
        Mix { read, write, scan }
    }

    pub fn is_valid(&self) -> bool {
        self.read as u32 + self.write as u32 + self.scan as u32 == 100
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.read, self.write, self.scan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    #[default]
    Uniform,
    /// Writes insert fresh keys; reads favour the most recently written ones.
    Latest,
}

/// The YCSB-style presets. C is read-only: its numeric mix is 100-0-0 even
/// though it is commonly labelled a scan workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    A,
    B,
    C,
    D,
    E,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::A, Preset::B, Preset::C, Preset::D, Preset::E];

    pub fn mix(self) -> Mix {
        match self {
            Preset::A => Mix::new(50, 50, 0),
            Preset::B => Mix::new(95, 5, 0),
            Preset::C => Mix::new(100, 0, 0),
            Preset::D => Mix::new(95, 5, 0),
            Preset::E => Mix::new(0, 5, 95),
        }
    }

    pub fn distribution(self) -> Distribution {
        match self {
            Preset::D => Distribution::Latest,
            _ => Distribution::Uniform,
        }
    }
}

impl FromStr for Preset {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Preset::A),
            "B" => Ok(Preset::B),
            "C" => Ok(Preset::C),
            "D" => Ok(Preset::D),
            "E" => Ok(Preset::E),
            _ => Err(BenchError::UnknownPreset(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub mix: Mix,
    pub key_count: u64,
    pub value_size: usize,
    pub distribution: Distribution,
    pub op_count: u64,
    pub seed: u64,
    #[serde(default = "default_max_scan_len")]
    pub max_scan_len: u32,
}

fn default_max_scan_len() -> u32 {
    DEFAULT_MAX_SCAN_LEN
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            mix: Mix::new(0, 100, 0),
            key_count: 10_000,
            value_size: DEFAULT_VALUE_SIZE,
            distribution: Distribution::Uniform,
            op_count: 100_000,
            seed: 1,
            max_scan_len: DEFAULT_MAX_SCAN_LEN,
        }
    }
}

impl WorkloadSpec {
    pub fn preset(p: Preset) -> Self {
        WorkloadSpec {
            mix: p.mix(),
            distribution: p.distribution(),
            ..Self::default()
        }
    }

    /// SET-only workload, the replication and sharding experiments' load.
    pub fn write_only() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if !self.mix.is_valid() {
            return Err(BenchError::InvalidWorkload(format!(
                "mix {} does not sum to 100",
                self.mix
            )));
        }
        if self.op_count == 0 {
            return Err(BenchError::InvalidWorkload("op_count must be >= 1".into()));
        }
        if self.key_count == 0 {
            return Err(BenchError::InvalidWorkload("key_count must be >= 1".into()));
        }
        if self.max_scan_len == 0 {
            return Err(BenchError::InvalidWorkload(
                "max_scan_len must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed-width decimal keys, so byte order equals numeric order.
pub fn key_name(index: u64) -> Bytes {
    Bytes::from(format!("key:{index:012}"))
}

/// SETs for every key in the initial key space, for read-bearing workloads.
pub fn preload_commands(spec: &WorkloadSpec) -> Vec<Command> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x005e_ed0f_10ad);
    (0..spec.key_count)
        .map(|i| Command::set(key_name(i), random_value(&mut rng, spec.value_size)).unwrap())
        .collect()
}

fn random_value(rng: &mut ChaCha8Rng, size: usize) -> Bytes {
    let mut v = vec![0u8; size];
    rng.fill(&mut v[..]);
    Bytes::from(v)
}

/// The command sequence for `spec`; a pure function of the spec.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<Vec<Command>, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut inserted: Vec<u64> = Vec::new();
    let mut ops = Vec::with_capacity(spec.op_count as usize);
    let read_cut = spec.mix.read as u32;
    let write_cut = read_cut + spec.mix.write as u32;

    for _ in 0..spec.op_count {
        let roll = rng.gen_range(0..100u32);
        let cmd = if roll < read_cut {
            let idx = match spec.distribution {
                Distribution::Uniform => rng.gen_range(0..spec.key_count),
                Distribution::Latest => latest_key(&mut rng, spec.key_count, &inserted),
            };
            Command::get(key_name(idx))
        } else if roll < write_cut {
            let idx = match spec.distribution {
                Distribution::Uniform => rng.gen_range(0..spec.key_count),
                Distribution::Latest => {
                    let idx = spec.key_count + inserted.len() as u64;
                    inserted.push(idx);
                    idx
                }
            };
            Command::set(key_name(idx), random_value(&mut rng, spec.value_size))
        } else {
            let start = rng.gen_range(0..spec.key_count);
            let count = rng.gen_range(1..=spec.max_scan_len);
            Command::scan(key_name(start), count)
        };
        ops.push(cmd.expect("generated keys are never empty"));
    }
    Ok(ops)
}

/// Walks back a geometric number of steps from the newest key, through the
/// inserted keys first and then the preloaded key space in descending order.
fn latest_key(rng: &mut ChaCha8Rng, key_count: u64, inserted: &[u64]) -> u64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let back = (u.ln() / (1.0 - LATEST_GEOMETRIC_P).ln()).floor() as u64;
    let total = key_count + inserted.len() as u64;
    let back = back.min(total - 1);
    if (back as usize) < inserted.len() {
        inserted[inserted.len() - 1 - back as usize]
    } else {
        key_count - 1 - (back - inserted.len() as u64)
    }
}

/// Nearest-rank percentile: the element at index `ceil(p * n) - 1` of the
/// ascending samples.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::EmptySamples);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(BenchError::BadFraction(p));
    }
    let n = samples.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    let mut scratch = samples.to_vec();
    let (_, nth, _) = scratch.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Ok(*nth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub avg_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Result<Self, BenchError> {
        let count = samples.len();
        if count == 0 {
            return Err(BenchError::EmptySamples);
        }
        Ok(LatencySummary {
            count,
            avg_us: samples.iter().sum::<f64>() / count as f64,
            median_us: percentile(samples, 0.5)?,
            p99_us: percentile(samples, 0.99)?,
            max_us: samples.iter().copied().fold(f64::MIN, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: String,
    pub workload: String,
    pub clients: usize,
    pub slaves: usize,
    pub value_size: usize,
    pub op_count: u64,
    pub error_count: u64,
    /// Commands that produced a latency sample; `op_count - error_count`.
    pub sample_count: u64,
    pub duration_s: f64,
    pub throughput_ops: f64,
    pub avg_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub seed: u64,
    pub profile: String,
}

impl BenchReport {
    pub fn is_partial(&self) -> bool {
        self.error_count > 0
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            mode: self.mode.clone(),
            clients: self.clients,
            slaves: self.slaves,
            value_size: self.value_size,
            throughput_ops: self.throughput_ops,
            avg_us: self.avg_us,
            p99_us: self.p99_us,
            errors: self.error_count,
            seed: self.seed,
            profile: self.profile.clone(),
        }
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} workload={} clients={} slaves={} value_size={} ops={} errors={} \
             duration={:.3}s throughput={:.0} ops/s avg={:.1}us median={:.1}us p99={:.1}us",
            self.mode,
            self.workload,
            self.clients,
            self.slaves,
            self.value_size,
            self.op_count,
            self.error_count,
            self.duration_s,
            self.throughput_ops,
            self.avg_us,
            self.median_us,
            self.p99_us
        )
    }
}

pub const CSV_HEADER: &str =
    "mode,clients,slaves,value_size,throughput_ops,avg_us,p99_us,errors,seed,profile";

/// One CSV data row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub mode: String,
    pub clients: usize,
    pub slaves: usize,
    pub value_size: usize,
    pub throughput_ops: f64,
    pub avg_us: f64,
    pub p99_us: f64,
    pub errors: u64,
    pub seed: u64,
    pub profile: String,
}

/// Appends one row, writing the header first when the file is new or empty.
pub fn report_csv(report: &BenchReport, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    w.serialize(report.csv_row())?;
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<CsvRow>, _>>()?;
    Ok(rows)
}
