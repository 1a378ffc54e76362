//! Performance profile for emulating a weak-core, high-latency off-path NIC
//! on commodity machines.
//!
//! Two knobs matter: a per-role compute slowdown applied to emulated CPU work,
//! and a symmetric one-way hop latency between roles. The NIC slowdown
//! defaults to the host/NIC throughput ratio of the `hash` stress test
//! (82835.08 vs 35500.64 bogo-ops/s, about 2.33); the `cpu` stress ratio
//! (1389.20 vs 151.27, about 9.18) is available as an alternative. A host to
//! NIC hop costs slightly more than a host to host hop.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HASH_STRESSOR_HOST_OPS: f64 = 82_835.08;
pub const HASH_STRESSOR_NIC_OPS: f64 = 35_500.64;
pub const CPU_STRESSOR_HOST_OPS: f64 = 1_389.20;
pub const CPU_STRESSOR_NIC_OPS: f64 = 151.27;

/// Hash-stressor ratio, rounded.
pub const DEFAULT_NIC_SLOWDOWN: f64 = 2.33;
/// CPU-stressor ratio, rounded.
pub const CPU_STRESSOR_NIC_SLOWDOWN: f64 = 9.18;
pub const DEFAULT_HOST_HOP_US: f64 = 10.0;
pub const HOST_NIC_HOP_RATIO: f64 = 1.1;
pub const DEFAULT_BASE_OP_COST_US: f64 = 2.0;
pub const DEFAULT_PER_SEND_COST_US: f64 = 2.0;
/// Emulated durations are stretched by this factor when they are waited
/// out, so they stay well above the real per-message cost of the runtime.
pub const DEFAULT_TIME_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("profile parse error: {0}")]
    Parse(String),
    #[error("invalid profile field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

/// Where a node runs. Clients count as remote hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerfRole {
    Host,
    Nic,
}

impl PerfRole {
    fn index(self) -> usize {
        match self {
            PerfRole::Host => 0,
            PerfRole::Nic => 1,
        }
    }
}

impl fmt::Display for PerfRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerfRole::Host => "host",
            PerfRole::Nic => "nic",
        })
    }
}

impl FromStr for PerfRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "host" => Ok(PerfRole::Host),
            "nic" => Ok(PerfRole::Nic),
            other => Err(format!("unknown role `{other}` (expected host or nic)")),
        }
    }
}

/// How emulated CPU work is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpuModel {
    /// Each node owns a virtual core: work is reserved on a per-node timeline
    /// and the caller waits for its slot without burning a physical core.
    /// Node cores stay independent even when every node shares one machine.
    #[default]
    Virtual,
    /// Work is burned by busy-spinning the calling thread. Faithful only when
    /// each node process has a dedicated physical core.
    Spin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfProfile {
    slowdown: [f64; 2],
    hop_us: [[f64; 2]; 2],
    base_op_cost_us: f64,
    per_send_cost_us: f64,
    time_scale: f64,
    cpu_model: CpuModel,
}

impl Default for PerfProfile {
    fn default() -> Self {
        PerfProfile {
            slowdown: [1.0, DEFAULT_NIC_SLOWDOWN],
            hop_us: hop_matrix(DEFAULT_HOST_HOP_US, None, None),
            base_op_cost_us: DEFAULT_BASE_OP_COST_US,
            per_send_cost_us: DEFAULT_PER_SEND_COST_US,
            time_scale: DEFAULT_TIME_SCALE,
            cpu_model: CpuModel::Virtual,
        }
    }
}

fn hop_matrix(host_host: f64, host_nic: Option<f64>, nic_nic: Option<f64>) -> [[f64; 2]; 2] {
    let host_nic = host_nic.unwrap_or(host_host * HOST_NIC_HOP_RATIO);
    let nic_nic = nic_nic.unwrap_or(host_host);
    [[host_host, host_nic], [host_nic, nic_nic]]
}

/// On-disk JSON form. Every field is optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_slowdown: Option<BTreeMap<PerfRole, f64>>,
    /// Keys: `host-host`, `host-nic`, `nic-host`, `nic-nic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_latency_us: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_op_cost_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_send_cost_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_model: Option<CpuModel>,
}

fn check(field: &str, v: f64) -> Result<f64, ProfileError> {
    if !v.is_finite() || v < 0.0 {
        return Err(ProfileError::Invalid {
            field: field.to_owned(),
            reason: format!("must be a finite value >= 0, got {v}"),
        });
    }
    Ok(v)
}

impl PerfProfile {
    /// Every cost and latency zero: emulation becomes a no-op.
    pub fn zero() -> Self {
        PerfProfile {
            slowdown: [0.0, 0.0],
            hop_us: [[0.0; 2]; 2],
            base_op_cost_us: 0.0,
            per_send_cost_us: 0.0,
            ..Self::default()
        }
    }

    /// Default profile with the NIC slowdown taken from the `cpu` stressor.
    pub fn cpu_stressor() -> Self {
        Self::default().with_slowdown(PerfRole::Nic, CPU_STRESSOR_NIC_SLOWDOWN)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let file: ProfileFile = if text.trim().is_empty() {
            ProfileFile::default()
        } else {
            serde_json::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?
        };
        Self::from_file(file)
    }

    pub fn from_file(file: ProfileFile) -> Result<Self, ProfileError> {
        let mut p = PerfProfile::default();
        if let Some(map) = file.compute_slowdown {
            for (role, v) in map {
                p.slowdown[role.index()] = check(&format!("compute_slowdown.{role}"), v)?;
            }
        }
        if let Some(map) = file.hop_latency_us {
            let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for (name, v) in &map {
                let (a, b) = name.split_once('-').ok_or_else(|| {
                    ProfileError::Parse(format!("hop_latency_us: bad key `{name}`"))
                })?;
                let a: PerfRole = a
                    .parse()
                    .map_err(|e| ProfileError::Parse(format!("hop_latency_us.{name}: {e}")))?;
                let b: PerfRole = b
                    .parse()
                    .map_err(|e| ProfileError::Parse(format!("hop_latency_us.{name}: {e}")))?;
                let v = check(&format!("hop_latency_us.{name}"), *v)?;
                entries.insert((a.index(), b.index()), v);
            }
            if let (Some(x), Some(y)) = (entries.get(&(0, 1)), entries.get(&(1, 0))) {
                if x != y {
                    return Err(ProfileError::Invalid {
                        field: "hop_latency_us".into(),
                        reason: format!("host-nic ({x}) and nic-host ({y}) must be equal"),
                    });
                }
            }
            let host_host = entries.get(&(0, 0)).copied().unwrap_or(DEFAULT_HOST_HOP_US);
            let host_nic = entries
                .get(&(0, 1))
                .or_else(|| entries.get(&(1, 0)))
                .copied();
            let nic_nic = entries.get(&(1, 1)).copied();
            p.hop_us = hop_matrix(host_host, host_nic, nic_nic);
        }
        if let Some(v) = file.base_op_cost_us {
            p.base_op_cost_us = check("base_op_cost_us", v)?;
        }
        if let Some(v) = file.per_send_cost_us {
            p.per_send_cost_us = check("per_send_cost_us", v)?;
        }
        if let Some(v) = file.time_scale {
            p.time_scale = check("time_scale", v)?;
        }
        if let Some(m) = file.cpu_model {
            p.cpu_model = m;
        }
        Ok(p)
    }

    pub fn to_file(&self) -> ProfileFile {
        let mut slow = BTreeMap::new();
        slow.insert(PerfRole::Host, self.slowdown[0]);
        slow.insert(PerfRole::Nic, self.slowdown[1]);
        let mut hops = BTreeMap::new();
        hops.insert("host-host".to_owned(), self.hop_us[0][0]);
        hops.insert("host-nic".to_owned(), self.hop_us[0][1]);
        hops.insert("nic-nic".to_owned(), self.hop_us[1][1]);
        ProfileFile {
            compute_slowdown: Some(slow),
            hop_latency_us: Some(hops),
            base_op_cost_us: Some(self.base_op_cost_us),
            per_send_cost_us: Some(self.per_send_cost_us),
            time_scale: Some(self.time_scale),
            cpu_model: Some(self.cpu_model),
        }
    }

    pub fn with_slowdown(mut self, role: PerfRole, factor: f64) -> Self {
        self.slowdown[role.index()] = factor;
        self
    }

    /// Sets the host-host hop and derives the others from it.
    pub fn with_host_hop_us(mut self, us: f64) -> Self {
        self.hop_us = hop_matrix(us, None, None);
        self
    }

    pub fn with_hop_us(mut self, a: PerfRole, b: PerfRole, us: f64) -> Self {
        self.hop_us[a.index()][b.index()] = us;
        self.hop_us[b.index()][a.index()] = us;
        self
    }

    pub fn with_base_op_cost_us(mut self, us: f64) -> Self {
        self.base_op_cost_us = us;
        self
    }

    pub fn with_per_send_cost_us(mut self, us: f64) -> Self {
        self.per_send_cost_us = us;
        self
    }

    pub fn with_time_scale(mut self, scale: f64) -> Self {
        self.time_scale = scale;
        self
    }

    pub fn with_cpu_model(mut self, model: CpuModel) -> Self {
        self.cpu_model = model;
        self
    }

    pub fn compute_slowdown(&self, role: PerfRole) -> f64 {
        self.slowdown[role.index()]
    }

    pub fn hop_latency_us(&self, a: PerfRole, b: PerfRole) -> f64 {
        self.hop_us[a.index()][b.index()]
    }

    pub fn base_op_cost_us(&self) -> f64 {
        self.base_op_cost_us
    }

    pub fn per_send_cost_us(&self) -> f64 {
        self.per_send_cost_us
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn cpu_model(&self) -> CpuModel {
        self.cpu_model
    }

    /// `base_cost_us * slowdown(role)`, in model time.
    pub fn compute_penalty(&self, role: PerfRole, base_cost_us: f64) -> Duration {
        micros(base_cost_us.max(0.0) * self.compute_slowdown(role))
    }

    /// One-way latency from `src` to `dst`, in model time.
    pub fn hop_delay(&self, src: PerfRole, dst: PerfRole) -> Duration {
        micros(self.hop_latency_us(src, dst))
    }

    /// Model time to wall-clock time.
    pub fn scaled(&self, d: Duration) -> Duration {
        Duration::from_nanos((d.as_nanos() as f64 * self.time_scale).round() as u64)
    }

    /// Wall-clock CPU time a node of `role` spends per command.
    pub fn op_cost(&self, role: PerfRole) -> Duration {
        self.scaled(self.compute_penalty(role, self.base_op_cost_us))
    }

    /// Wall-clock CPU time a node of `role` spends per frame it sends.
    pub fn send_cost(&self, role: PerfRole) -> Duration {
        self.scaled(self.compute_penalty(role, self.per_send_cost_us))
    }

    /// Wall-clock wait injected for a frame travelling `src` -> `dst`.
    pub fn hop_wait(&self, src: PerfRole, dst: PerfRole) -> Duration {
        self.scaled(self.hop_delay(src, dst))
    }

    pub fn is_zero(&self) -> bool {
        self.base_op_cost_us == 0.0
            && self.per_send_cost_us == 0.0
            && self.hop_us.iter().flatten().all(|&h| h == 0.0)
    }
}

fn micros(us: f64) -> Duration {
    Duration::from_nanos((us * 1_000.0).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use PerfRole::*;

    #[test]
    fn stressor_ratios_round_to_the_constants() {
        let hash = HASH_STRESSOR_HOST_OPS / HASH_STRESSOR_NIC_OPS;
        let cpu = CPU_STRESSOR_HOST_OPS / CPU_STRESSOR_NIC_OPS;
        assert_eq!((hash * 100.0).round() / 100.0, DEFAULT_NIC_SLOWDOWN);
        assert_eq!((cpu * 100.0).round() / 100.0, CPU_STRESSOR_NIC_SLOWDOWN);
    }

    #[test]
    fn empty_config_gives_defaults() {
        for text in ["", "{}", "  \n"] {
            let p = PerfProfile::from_json(text).unwrap();
            assert_eq!(p, PerfProfile::default());
            assert_eq!(p.compute_slowdown(Nic), 2.33);
            assert_eq!(p.compute_slowdown(Host), 1.0);
            assert_eq!(
                p.hop_latency_us(Host, Nic) / p.hop_latency_us(Host, Host),
                1.1
            );
        }
    }

    #[test]
    fn slowdown_override() {
        let p = PerfProfile::from_json(r#"{"compute_slowdown":{"nic":9.18}}"#).unwrap();
        assert_eq!(p.compute_slowdown(Nic), 9.18);
        assert_eq!(p.compute_slowdown(Host), 1.0);
        assert_eq!(p, PerfProfile::cpu_stressor());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let neg = PerfProfile::from_json(r#"{"hop_latency_us":{"host-host":-1}}"#);
        assert!(
            matches!(neg, Err(ProfileError::Invalid { ref field, .. }) if field == "hop_latency_us.host-host")
        );
        let asym = PerfProfile::from_json(r#"{"hop_latency_us":{"host-nic":5,"nic-host":6}}"#);
        assert!(matches!(asym, Err(ProfileError::Invalid { .. })));
        let neg_cost = PerfProfile::from_json(r#"{"base_op_cost_us":-0.5}"#);
        assert!(
            matches!(neg_cost, Err(ProfileError::Invalid { ref field, .. }) if field == "base_op_cost_us")
        );
    }

    #[test]
    fn parse_errors_name_the_field() {
        let err = PerfProfile::from_json(r#"{"hop_latency":{}}"#).unwrap_err();
        assert!(
            matches!(&err, ProfileError::Parse(m) if m.contains("hop_latency")),
            "{err}"
        );
        let err = PerfProfile::from_json(r#"{"compute_slowdown":{"gpu":1}}"#).unwrap_err();
        assert!(matches!(err, ProfileError::Parse(_)));
        let err = PerfProfile::from_json(r#"{"hop_latency_us":{"host":1}}"#).unwrap_err();
        assert!(matches!(&err, ProfileError::Parse(m) if m.contains("host")));
        let err = PerfProfile::from_json(r#"{"base_op_cost_us":"two"}"#).unwrap_err();
        assert!(matches!(&err, ProfileError::Parse(m) if m.contains("invalid type")));
    }

    #[test]
    fn derived_hops_follow_host_hop() {
        let p = PerfProfile::from_json(r#"{"hop_latency_us":{"host-host":20}}"#).unwrap();
        assert_eq!(p.hop_latency_us(Host, Nic), 22.0);
        assert_eq!(p.hop_latency_us(Nic, Host), 22.0);
        assert_eq!(p.hop_latency_us(Nic, Nic), 20.0);
    }

    #[test]
    fn compute_penalty_examples() {
        let p = PerfProfile::default();
        assert_eq!(p.compute_penalty(Host, 2.0), Duration::from_micros(2));
        assert_eq!(p.compute_penalty(Nic, 2.0), Duration::from_nanos(4_660));
        let z = PerfProfile::zero();
        assert_eq!(z.compute_penalty(Host, 2.0), Duration::ZERO);
        assert_eq!(z.compute_penalty(Nic, 2.0), Duration::ZERO);
        assert!(z.is_zero());
    }

    #[test]
    fn hop_delay_examples() {
        let p = PerfProfile::default();
        assert_eq!(p.hop_delay(Host, Host), Duration::from_micros(10));
        assert_eq!(p.hop_delay(Host, Nic), Duration::from_micros(11));
        assert_eq!(p.hop_delay(Nic, Host), p.hop_delay(Host, Nic));
    }

    #[test]
    fn time_scale_stretches_everything() {
        let p = PerfProfile::default().with_time_scale(3.0);
        assert_eq!(p.hop_delay(Host, Host), Duration::from_micros(10));
        assert_eq!(p.hop_wait(Host, Host), Duration::from_micros(30));
        assert_eq!(p.op_cost(Host), Duration::from_micros(6));
        assert_eq!(p.send_cost(Nic), Duration::from_nanos(13_980));
        let unit = p.with_time_scale(1.0);
        assert_eq!(unit.op_cost(Nic), Duration::from_nanos(4_660));
    }

    #[test]
    fn file_round_trip() {
        let p = PerfProfile::cpu_stressor()
            .with_host_hop_us(7.5)
            .with_time_scale(3.0)
            .with_cpu_model(CpuModel::Spin);
        let json = serde_json::to_string(&p.to_file()).unwrap();
        assert_eq!(PerfProfile::from_json(&json).unwrap(), p);
    }
}
