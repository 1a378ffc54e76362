//! Closed-loop benchmark runner: `clients` connections, each waiting for a
//! reply before sending its next command.

use std::time::Instant;

use snickv_core::bench::{
    gen_workload, preload_commands, BenchError, BenchReport, LatencySummary, WorkloadSpec,
};
use snickv_core::replication::Endpoint;
use snickv_core::sharding::ShardTopology;
use snickv_core::wire::{Command, Reply, Status};
use snickv_core::{PerfProfile, PerfRole};
use thiserror::Error;

use crate::connection::{ClientError, KvConnection};
use crate::router::{RouterError, ShardRouter};

#[derive(Debug, Clone)]
pub enum BenchTarget {
    Node(Endpoint),
    Sharded(ShardTopology),
}

impl BenchTarget {
    fn label(&self) -> &'static str {
        match self {
            BenchTarget::Node(_) => "node",
            BenchTarget::Sharded(_) => "sharded",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub clients: usize,
    /// Role of the machine the clients run on.
    pub local_role: PerfRole,
    pub profile: PerfProfile,
    /// Load every key of the key space before the timed run. Only matters
    /// for read-bearing workloads.
    pub preload: bool,
}

impl BenchOptions {
    pub fn new(clients: usize, profile: PerfProfile) -> Self {
        BenchOptions {
            clients,
            local_role: PerfRole::Host,
            profile,
            preload: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchRunError {
    #[error(transparent)]
    Workload(#[from] BenchError),
    #[error("at least one client is required")]
    NoClients,
    #[error("target unavailable: {0}")]
    TargetUnavailable(String),
}

enum Conn {
    Node(KvConnection),
    Router(Box<ShardRouter>),
}

impl Conn {
    async fn open(target: &BenchTarget, opts: &BenchOptions) -> Result<Self, BenchRunError> {
        match target {
            BenchTarget::Node(ep) => KvConnection::connect(ep, opts.local_role, &opts.profile)
                .await
                .map(Conn::Node)
                .map_err(|e| BenchRunError::TargetUnavailable(e.to_string())),
            BenchTarget::Sharded(topo) => {
                ShardRouter::connect(topo.clone(), opts.local_role, opts.profile.clone())
                    .await
                    .map(|r| Conn::Router(Box::new(r)))
                    .map_err(|e| BenchRunError::TargetUnavailable(e.to_string()))
            }
        }
    }

    async fn execute(&mut self, cmd: &Command) -> Result<Reply, ExecError> {
        match self {
            Conn::Node(c) => c.execute(cmd).await.map_err(ExecError::Fatal),
            Conn::Router(r) => r.route_and_execute(cmd).await.map_err(|e| match e {
                RouterError::UnsupportedOperation => ExecError::Rejected,
                RouterError::EndpointUnavailable { source, .. } => ExecError::Fatal(source),
            }),
        }
    }
}

enum ExecError {
    /// This command failed; the connection is still usable.
    Rejected,
    Fatal(ClientError),
}

struct ClientResult {
    samples: Vec<f64>,
    errors: u64,
}

/// Runs `spec` against `target` and aggregates every client's samples.
/// Commands are dealt round-robin across clients. A client whose
/// connection breaks counts all its remaining commands as errors.
pub async fn run_bench(
    target: &BenchTarget,
    spec: &WorkloadSpec,
    opts: &BenchOptions,
) -> Result<BenchReport, BenchRunError> {
    if opts.clients == 0 {
        return Err(BenchRunError::NoClients);
    }
    let ops = gen_workload(spec)?;
    let mut conns = Vec::with_capacity(opts.clients);
    for _ in 0..opts.clients {
        conns.push(Conn::open(target, opts).await?);
    }
    if opts.preload && spec.mix.read + spec.mix.scan > 0 {
        preload(&mut conns, spec).await?;
    }

    let n = opts.clients;
    let mut shares: Vec<Vec<Command>> = (0..n)
        .map(|_| Vec::with_capacity(ops.len() / n + 1))
        .collect();
    for (i, cmd) in ops.into_iter().enumerate() {
        shares[i % n].push(cmd);
    }

    let started = Instant::now();
    let tasks: Vec<_> = conns
        .into_iter()
        .zip(shares)
        .map(|(conn, share)| tokio::spawn(client_loop(conn, share)))
        .collect();
    let mut samples = Vec::with_capacity(spec.op_count as usize);
    let mut errors = 0;
    for task in tasks {
        let r = task.await.expect("bench client panicked");
        samples.extend(r.samples);
        errors += r.errors;
    }
    let duration_s = started.elapsed().as_secs_f64();

    let summary = LatencySummary::from_samples(&samples).unwrap_or(LatencySummary {
        count: 0,
        avg_us: 0.0,
        median_us: 0.0,
        p99_us: 0.0,
        max_us: 0.0,
    });
    Ok(BenchReport {
        mode: target.label().to_owned(),
        workload: "custom".to_owned(),
        clients: n,
        slaves: 0,
        value_size: spec.value_size,
        op_count: spec.op_count,
        error_count: errors,
        sample_count: samples.len() as u64,
        duration_s,
        throughput_ops: spec.op_count as f64 / duration_s,
        avg_us: summary.avg_us,
        median_us: summary.median_us,
        p99_us: summary.p99_us,
        seed: spec.seed,
        profile: "default".to_owned(),
    })
}

async fn client_loop(mut conn: Conn, share: Vec<Command>) -> ClientResult {
    let mut samples = Vec::with_capacity(share.len());
    let mut errors = 0;
    let total = share.len() as u64;
    for cmd in &share {
        let t = Instant::now();
        match conn.execute(cmd).await {
            Ok(reply) if reply.status() != Status::Error => {
                samples.push(t.elapsed().as_secs_f64() * 1e6);
            }
            Ok(_) | Err(ExecError::Rejected) => errors += 1,
            Err(ExecError::Fatal(e)) => {
                tracing::warn!("bench client stopping: {e}");
                errors = total - samples.len() as u64;
                break;
            }
        }
    }
    ClientResult { samples, errors }
}

async fn preload(conns: &mut [Conn], spec: &WorkloadSpec) -> Result<(), BenchRunError> {
    let cmds = preload_commands(spec);
    let n = conns.len();
    let work = conns.iter_mut().enumerate().map(|(i, conn)| {
        let cmds = &cmds;
        async move {
            for cmd in cmds.iter().skip(i).step_by(n) {
                match conn.execute(cmd).await {
                    Ok(r) if r.is_ok() => {}
                    Ok(r) => {
                        return Err(BenchRunError::TargetUnavailable(format!(
                            "preload rejected: {:?}",
                            r.status()
                        )))
                    }
                    Err(ExecError::Rejected) => {}
                    Err(ExecError::Fatal(e)) => {
                        return Err(BenchRunError::TargetUnavailable(e.to_string()))
                    }
                }
            }
            Ok(())
        }
    });
    for r in futures::future::join_all(work).await {
        r?;
    }
    Ok(())
}
