mod common;

use std::time::Instant;

use snickv_client::KvConnection;
use snickv_core::bench::percentile;
use snickv_core::config::NodeRole;
use snickv_core::wire::Command;
use snickv_core::{PerfProfile, PerfRole};

use common::{cfg, node};

async fn median_get_us(profile: &PerfProfile, role: PerfRole) -> f64 {
    let mut c = cfg(NodeRole::Plain, "plain");
    c.perf_role = Some(role);
    let n = node(c, profile).await;
    let mut conn = KvConnection::connect(&n.endpoint(), PerfRole::Host, profile)
        .await
        .unwrap();
    conn.execute(&Command::set("k", "v").unwrap())
        .await
        .unwrap();
    let mut samples = Vec::new();
    for _ in 0..300 {
        let t = Instant::now();
        conn.execute(&Command::get("k").unwrap()).await.unwrap();
        samples.push(t.elapsed().as_secs_f64() * 1e6);
    }
    n.shutdown().await;
    percentile(&samples, 0.5).unwrap()
}

#[tokio::test(flavor = "current_thread")]
async fn latency_grows_with_hop_latency() {
    let mut last = 0.0;
    for hop in [0.0, 20.0, 60.0] {
        let p = PerfProfile::zero()
            .with_host_hop_us(hop)
            .with_time_scale(10.0);
        let m = median_get_us(&p, PerfRole::Host).await;
        assert!(m >= last, "hop {hop}: median {m} below {last}");
        // One request hop plus one reply hop, scaled.
        assert!(m >= 2.0 * hop * 10.0, "hop {hop}: median {m}");
        last = m;
    }
}

#[tokio::test(flavor = "current_thread")]
async fn slower_role_answers_slower() {
    let p = PerfProfile::default().with_host_hop_us(0.0);
    let host = median_get_us(&p, PerfRole::Host).await;
    let nic = median_get_us(&p, PerfRole::Nic).await;
    // Host: (2 + 2) us of work; Nic: 2.33x that, both scaled by 10.
    assert!(host >= 40.0, "{host}");
    assert!(nic >= 93.0 && nic > host, "{nic} vs {host}");
}

#[tokio::test(flavor = "current_thread")]
async fn zero_profile_adds_no_delay() {
    let z = PerfProfile::zero();
    for role in [PerfRole::Host, PerfRole::Nic] {
        let m = median_get_us(&z, role).await;
        assert!(m < 2_000.0, "{role}: {m} us");
    }
}
