mod common;

use snickv_client::{RouterError, ShardRouter};
use snickv_core::sharding::{slot_of, ShardSide};
use snickv_core::wire::Command;
use snickv_core::{PerfProfile, PerfRole, ShardTopology, SlotMap};

use common::{dead_endpoint, FakeServer};

fn key_on(parity: u16, skip: usize) -> String {
    (0..)
        .map(|i| format!("key{i}"))
        .filter(|k| slot_of(k.as_bytes()) % 2 == parity)
        .nth(skip)
        .unwrap()
}

#[tokio::test]
async fn each_command_reaches_exactly_its_owner() {
    let host = FakeServer::start(PerfRole::Host).await;
    let nic = FakeServer::start(PerfRole::Nic).await;
    let topo = ShardTopology::new(
        host.endpoint.clone(),
        nic.endpoint.clone(),
        SlotMap::even_odd(),
    )
    .unwrap();
    let mut r = ShardRouter::new(topo, PerfRole::Host, PerfProfile::zero());
    for i in 0..10 {
        r.route_and_execute(&Command::set(key_on(0, i), "h").unwrap())
            .await
            .unwrap();
    }
    for i in 0..4 {
        r.route_and_execute(&Command::set(key_on(1, i), "n").unwrap())
            .await
            .unwrap();
    }
    assert_eq!((host.frames(), nic.frames()), (10, 4));
    assert_eq!(
        (r.sent_to(ShardSide::Host), r.sent_to(ShardSide::Nic)),
        (10, 4)
    );
    assert_eq!(host.store.lock().write_count(), 10);
    assert_eq!(nic.store.lock().write_count(), 4);
}

#[tokio::test]
async fn all_host_map_never_touches_the_nic() {
    let host = FakeServer::start(PerfRole::Host).await;
    let nic = dead_endpoint(PerfRole::Nic);
    let topo =
        ShardTopology::new(host.endpoint.clone(), nic, SlotMap::all(ShardSide::Host)).unwrap();
    let mut r = ShardRouter::new(topo, PerfRole::Host, PerfProfile::zero());
    for i in 0..50 {
        r.route_and_execute(&Command::get(format!("k{i}")).unwrap())
            .await
            .unwrap();
    }
    assert_eq!(host.frames(), 50);
}

#[tokio::test]
async fn scan_is_unsupported() {
    let host = FakeServer::start(PerfRole::Host).await;
    let nic = FakeServer::start(PerfRole::Nic).await;
    let topo = ShardTopology::new(
        host.endpoint.clone(),
        nic.endpoint.clone(),
        SlotMap::halves(),
    )
    .unwrap();
    let mut r = ShardRouter::connect(topo, PerfRole::Host, PerfProfile::zero())
        .await
        .unwrap();
    let err = r
        .route_and_execute(&Command::scan("a", 1).unwrap())
        .await
        .unwrap_err();
    assert!(matches!(err, RouterError::UnsupportedOperation));
    assert_eq!(host.frames() + nic.frames(), 0);
}

#[tokio::test]
async fn eager_connect_reports_the_missing_side() {
    let host = FakeServer::start(PerfRole::Host).await;
    let topo = ShardTopology::new(
        host.endpoint.clone(),
        dead_endpoint(PerfRole::Nic),
        SlotMap::halves(),
    )
    .unwrap();
    let err = ShardRouter::connect(topo, PerfRole::Host, PerfProfile::zero())
        .await
        .unwrap_err();
    assert!(matches!(
        err,
        RouterError::EndpointUnavailable {
            side: ShardSide::Nic,
            ..
        }
    ));
    assert!(err.to_string().contains("nic"));
}
