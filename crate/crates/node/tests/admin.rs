mod common;

use snickv_client::AdminClient;
use snickv_core::api::StatusName;
use snickv_core::config::{ModeName, NodeRole};
use snickv_core::wire::Command;
use snickv_core::PerfProfile;

use common::{cfg, node, Replicated};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_status_and_commands_over_http() {
    let mut c = cfg(NodeRole::Plain, "plain");
    c.admin = Some("127.0.0.1:0".into());
    let n = node(c, &PerfProfile::zero()).await;
    let admin = AdminClient::new(&n.admin_addr().unwrap().to_string()).unwrap();

    let h = admin.health().await.unwrap();
    assert!(h.ok);
    assert_eq!(h.name, "plain");
    assert_eq!(admin.status().await.unwrap().write_count, 0);

    for i in 0..100 {
        let r = admin
            .command(&Command::set(format!("k{i:03}"), "v").unwrap())
            .await
            .unwrap();
        assert_eq!(r.status, StatusName::Ok);
    }
    let s = admin.status().await.unwrap();
    assert_eq!(s.write_count, 100);
    assert_eq!(s.digest, n.status().digest);

    let r = admin.command(&Command::get("k007").unwrap()).await.unwrap();
    assert_eq!(r.value.as_deref(), Some("v"));
    let r = admin.command(&Command::get("nope").unwrap()).await.unwrap();
    assert_eq!(r.status, StatusName::NotFound);
    let r = admin
        .command(&Command::scan("k098", 5).unwrap())
        .await
        .unwrap();
    let keys: Vec<_> = r.entries.unwrap().into_iter().map(|e| e.0).collect();
    assert_eq!(keys, ["k098", "k099"]);
    n.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_commands_are_rejected() {
    let mut c = cfg(NodeRole::Plain, "plain");
    c.admin = Some("127.0.0.1:0".into());
    let n = node(c, &PerfProfile::zero()).await;
    let url = format!("http://{}/command", n.admin_addr().unwrap());
    let http = reqwest::Client::new();
    for body in [
        r#"{"op":"get","key":"k","value":"x"}"#,
        r#"{"op":"scan","key":"k","count":-1}"#,
        r#"{"op":"set","key":"","value":"x"}"#,
        r#"{"op":"frobnicate","key":"k"}"#,
        "not json",
    ] {
        let r = http
            .post(&url)
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        assert!(r.status().is_client_error(), "{body}: {}", r.status());
    }
    assert_eq!(n.status().write_count, 0);
    n.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn writes_through_the_handle_replicate() {
    let t = Replicated::start(ModeName::Direct, 2, &PerfProfile::zero()).await;
    let s = t
        .master
        .execute(&Command::set("via", "handle").unwrap())
        .await;
    assert!(s.is_ok());
    t.drain().await;
    for slave in &t.slaves {
        assert_eq!(slave.status().write_count, 1);
        let st = slave.status().replication.unwrap();
        assert_eq!(st.applied, 1);
    }
    t.shutdown().await;
}
