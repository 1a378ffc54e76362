//! `snickv`: launch nodes, run benchmarks, query status.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use snickv_client::bench::{run_bench, BenchOptions, BenchTarget};
use snickv_client::AdminClient;
use snickv_core::bench::{report_csv, Mix, Preset, WorkloadSpec, DEFAULT_VALUE_SIZE};
use snickv_core::config::{ConfigError, ModeName, NodeConfig, NodeRole, SlotSplit, TopologyConfig};
use snickv_core::replication::Endpoint;
use snickv_core::sharding::{ShardSide, ShardTopology};
use snickv_core::{PerfProfile, PerfRole, SlotMap};
use snickv_node::{NodeError, Topology, TopologyError};

#[derive(Parser)]
#[command(name = "snickv", version, about = "SmartNIC-offload key-value testbed")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one node until interrupted.
    Node(NodeArgs),
    /// Run every node of a topology file in this process.
    Topology(TopologyArgs),
    /// Closed-loop benchmark against a node or a shard pair.
    Bench(BenchArgs),
    /// Query a node's admin plane.
    Status(StatusArgs),
    /// Write a 2048-byte slot map file.
    Slotmap(SlotmapArgs),
}

#[derive(Args)]
struct NodeArgs {
    /// JSON node config; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    role: Option<NodeRole>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    perf_role: Option<PerfRole>,
    #[arg(long)]
    inbound_role: Option<PerfRole>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Offload proxy, `addr:port[@nic|@host]`.
    #[arg(long)]
    proxy: Option<String>,
    /// Where a slave registers: the master (direct) or the proxy (offload).
    #[arg(long)]
    upstream: Option<String>,
    #[arg(long)]
    host_endpoint: Option<String>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long, value_enum)]
    slot_split: Option<SplitArg>,
    #[arg(long)]
    slot_map: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// HTTP admin listener, e.g. 127.0.0.1:8080.
    #[arg(long)]
    admin: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Offload,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Even,
    Half,
    File,
}

impl From<SplitArg> for SlotSplit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Even => SlotSplit::Even,
            SplitArg::Half => SlotSplit::Half,
            SplitArg::File => SlotSplit::File,
        }
    }
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long)]
    file: PathBuf,
    /// Profile for nodes that name none (overrides the file's default).
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Node to drive; with --nic-target, the host shard.
    #[arg(long)]
    target: String,
    /// NIC shard; enables hash-slot routing between --target and this.
    #[arg(long)]
    nic_target: Option<String>,
    #[arg(long, value_enum)]
    slot_split: Option<SplitArg>,
    #[arg(long)]
    slot_map: Option<PathBuf>,
    /// A, B, C, D, E or custom.
    #[arg(long, default_value = "custom")]
    workload: String,
    /// Read/write/scan percentages for the custom workload, e.g. 0,100,0.
    #[arg(long, default_value = "0,100,0")]
    mix: String,
    #[arg(long, default_value_t = 8)]
    clients: usize,
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, default_value_t = DEFAULT_VALUE_SIZE)]
    value_size: usize,
    #[arg(long, default_value_t = 10_000)]
    key_count: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Role of the machine running the clients.
    #[arg(long, default_value = "host")]
    local_role: PerfRole,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Label for the CSV `mode` column.
    #[arg(long)]
    label: Option<String>,
    /// Value for the CSV `slaves` column.
    #[arg(long, default_value_t = 0)]
    slaves: usize,
    /// Append the report to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StatusArgs {
    /// Admin address of the node.
    #[arg(long)]
    target: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SlotmapArgs {
    #[arg(long, value_enum, default_value = "half")]
    split: MapArg,
    /// Fraction of slots on the host, for --split weighted.
    #[arg(long, default_value_t = 0.7)]
    host_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MapArg {
    Half,
    Even,
    Weighted,
    Host,
    Nic,
}

/// Exit codes: 2 for a rejected configuration, 3 for a socket that could
/// not be bound, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(NodeError::Bind { .. }) = cause.downcast_ref::<NodeError>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_max_level(if cli.quiet {
            tracing::Level::WARN
        } else {
            tracing::Level::INFO
        })
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

async fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Node(a) => node(a).await,
        Cmd::Topology(a) => topology(a).await,
        Cmd::Bench(a) => bench(a).await,
        Cmd::Status(a) => status(a).await,
        Cmd::Slotmap(a) => slotmap(a),
    }
}

fn load_profile(path: Option<&PathBuf>) -> anyhow::Result<PerfProfile> {
    match path {
        Some(p) => PerfProfile::load(p).with_context(|| format!("profile {}", p.display())),
        None => Ok(PerfProfile::default()),
    }
}

fn node_config(a: NodeArgs) -> anyhow::Result<NodeConfig> {
    let mut cfg = match &a.config {
        Some(path) => NodeConfig::load(path)?,
        None => NodeConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field { cfg.$field = Some(v.into()); }
        )*};
    }
    set!(
        name,
        role,
        listen,
        perf_role,
        inbound_role,
        proxy,
        upstream,
        host_endpoint,
        capacity,
        slot_map,
        profile,
        admin
    );
    if let Some(m) = a.mode {
        cfg.mode = Some(match m {
            ModeArg::Direct => ModeName::Direct,
            ModeArg::Offload => ModeName::Offload,
        });
    }
    if let Some(s) = a.slot_split {
        cfg.slot_split = Some(s.into());
    }
    Ok(cfg)
}

async fn node(a: NodeArgs) -> anyhow::Result<()> {
    let spec = node_config(a)?.validate()?;
    let profile = load_profile(spec.profile.as_ref())?;
    let name = spec.name.clone();
    let handle = snickv_node::start(spec, profile).await?;
    println!("{name} listening on {}", handle.local_addr());
    if let Some(admin) = handle.admin_addr() {
        println!("{name} admin on http://{admin}");
    }
    wait_for_signal().await;
    handle.shutdown().await;
    Ok(())
}

async fn topology(a: TopologyArgs) -> anyhow::Result<()> {
    let mut cfg = TopologyConfig::load(&a.file)?;
    if a.profile.is_some() {
        cfg.profile = a.profile;
    }
    let specs = cfg.validate()?;
    let default = load_profile(cfg.profile.as_ref())?;
    let topo = Topology::launch(specs, &default)
        .await
        .map_err(|e| match e {
            TopologyError::Node { node, source } => anyhow!(source).context(format!("node {node}")),
            other => anyhow!(other),
        })?;
    for n in topo.nodes() {
        let admin = n
            .admin_addr()
            .map(|a| format!(" admin http://{a}"))
            .unwrap_or_default();
        println!("{} {} {}{admin}", n.name(), n.role(), n.local_addr());
    }
    wait_for_signal().await;
    topo.shutdown().await;
    Ok(())
}

async fn wait_for_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down, draining replication queues");
}

fn parse_mix(s: &str) -> anyhow::Result<Mix> {
    let parts: Vec<u8> = s
        .split(',')
        .map(|p| p.trim().parse::<u8>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--mix `{s}`: expected read,write,scan"))?;
    match parts[..] {
        [read, write, scan] => Ok(Mix { read, write, scan }),
        _ => bail!("--mix `{s}`: expected three percentages"),
    }
}

async fn bench(a: BenchArgs) -> anyhow::Result<()> {
    let profile = load_profile(a.profile.as_ref())?;
    let mut spec = if a.workload.eq_ignore_ascii_case("custom") {
        WorkloadSpec {
            mix: parse_mix(&a.mix)?,
            ..WorkloadSpec::write_only()
        }
    } else {
        WorkloadSpec::preset(a.workload.parse::<Preset>()?)
    };
    spec.op_count = a.ops;
    spec.value_size = a.value_size;
    spec.key_count = a.key_count;
    spec.seed = a.seed;
    spec.validate()?;

    let host = Endpoint::parse(&a.target, PerfRole::Host).context("--target")?;
    let target = match &a.nic_target {
        None => BenchTarget::Node(host),
        Some(nic) => {
            let nic = Endpoint::parse(nic, PerfRole::Nic).context("--nic-target")?;
            let slots = match (a.slot_split, &a.slot_map) {
                (_, Some(path)) => SlotMap::read_file(path)?,
                (Some(SplitArg::Even), None) => SlotMap::even_odd(),
                (Some(SplitArg::File), None) => bail!("--slot-split file needs --slot-map"),
                (Some(SplitArg::Half) | None, None) => SlotMap::halves(),
            };
            BenchTarget::Sharded(ShardTopology::new(host, nic, slots)?)
        }
    };
    let opts = BenchOptions {
        local_role: a.local_role,
        ..BenchOptions::new(a.clients, profile)
    };
    let mut report = run_bench(&target, &spec, &opts).await?;
    report.workload = a.workload.to_ascii_uppercase();
    if let Some(label) = a.label {
        report.mode = label;
    }
    report.slaves = a.slaves;
    report.profile = a
        .profile
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "default".into());
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    if report.is_partial() {
        eprintln!("warning: partial run, {} errors", report.error_count);
    }
    if let Some(out) = &a.out {
        report_csv(&report, out)?;
    }
    Ok(())
}

async fn status(a: StatusArgs) -> anyhow::Result<()> {
    let client = AdminClient::new(&a.target)?;
    let s = client
        .status()
        .await
        .with_context(|| format!("target {} unavailable", client.base_url()))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
        return Ok(());
    }
    println!("{} ({} @{}) on {}", s.name, s.role, s.perf_role, s.listen);
    println!("  write_count   {}", s.write_count);
    println!(
        "  digest        {:016x} ({} entries)",
        s.digest.hash, s.digest.entry_count
    );
    println!("  requests      {}", s.requests);
    println!("  violations    {}", s.protocol_violations);
    if let Some(r) = &s.replication {
        println!(
            "  replication   {} sent={} dropped={} pending={} applied={}",
            r.mode, r.frames_sent, r.frames_dropped, r.pending, r.applied
        );
        for d in &r.downstream {
            println!("    {d}");
        }
    }
    if let Some(c) = &s.cache {
        println!(
            "  cache         {}/{} hits={} misses={} host_errors={}",
            c.len, c.capacity, c.hits, c.misses, c.host_errors
        );
    }
    if let Some(sh) = &s.shard {
        println!(
            "  shard         host_slots={} misrouted={}",
            sh.host_slots, sh.misrouted
        );
    }
    Ok(())
}

fn slotmap(a: SlotmapArgs) -> anyhow::Result<()> {
    let map = match a.split {
        MapArg::Half => SlotMap::halves(),
        MapArg::Even => SlotMap::even_odd(),
        MapArg::Weighted => SlotMap::weighted(a.host_fraction)?,
        MapArg::Host => SlotMap::all(ShardSide::Host),
        MapArg::Nic => SlotMap::all(ShardSide::Nic),
    };
    map.write_file(&a.out)?;
    println!(
        "{}: {} host slots, {} nic slots",
        a.out.display(),
        map.host_slot_count(),
        snickv_core::sharding::SLOT_COUNT - map.host_slot_count()
    );
    Ok(())
}
