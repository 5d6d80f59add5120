use std::net::SocketAddr;
use std::path::Path;
use std::time::{Duration, Instant};

use corridor::server::{self, ServeError};
use corridor::ScenarioFile;
use corridor_core::sim::{RunMode, Sim};
use serde_json::{json, Value};

fn crossing(mode: RunMode, horizon_s: f64) -> Sim {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/crossing.json");
    let mut f = ScenarioFile::load(&path).unwrap();
    f.sim.mode = mode;
    f.sim.horizon_s = horizon_s;
    Sim::new(f.to_scenario().unwrap()).unwrap()
}

fn any_port() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

async fn get(base: &str, path: &str) -> Value {
    reqwest::get(format!("{base}{path}")).await.unwrap().json().await.unwrap()
}

async fn post(base: &str, path: &str, body: Value) -> (u16, Value) {
    let r = reqwest::Client::new().post(format!("{base}{path}")).json(&body).send().await.unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

async fn signal_mode(base: &str) -> String {
    get(base, "/api/signals").await[0]["mode"].as_str().unwrap().to_owned()
}

#[tokio::test(flavor = "multi_thread")]
async fn read_endpoints_describe_the_scenario() {
    let running = server::start(crossing(RunMode::AutoPreempt, 300.0), any_port(), 5.0).await.unwrap();
    let base = format!("http://{}", running.addr);

    let graph = get(&base, "/api/graph").await;
    assert_eq!(graph["nodes"].as_array().unwrap().len(), 5);
    assert_eq!(graph["edges"].as_array().unwrap().len(), 4);
    assert_eq!(graph["hospitals"].as_array().unwrap().len(), 2);
    assert_eq!(graph["signals"][0]["id"], "X");

    let ambs = get(&base, "/api/ambulances").await;
    let ids: Vec<&str> = ambs.as_array().unwrap().iter().map(|a| a["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["AMB1", "AMB2"]);

    let sigs = get(&base, "/api/signals").await;
    assert_eq!(sigs.as_array().unwrap().len(), 1);
    assert_eq!(sigs[0]["id"], "X");
    assert!(sigs[0]["green"].is_array());

    running.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn operator_preempt_and_release() {
    let running = server::start(crossing(RunMode::Operator, 300.0), any_port(), 20.0).await.unwrap();
    let base = format!("http://{}", running.addr);

    let (status, _) = post(&base, "/api/controllers/NOPE/preempt", json!({ "approach": 2 })).await;
    assert_eq!(status, 404);
    let (status, body) = post(&base, "/api/controllers/X/preempt", json!({ "approach": 3 })).await;
    assert_eq!(status, 409);
    assert!(body["error"].is_string());

    let (status, _) = post(&base, "/api/controllers/X/preempt", json!({ "approach": 2 })).await;
    assert_eq!(status, 200);
    // Clearance is 4 s of simulated time: 0.2 s of wall time at this speed.
    let deadline = Instant::now() + Duration::from_secs(5);
    while signal_mode(&base).await != "PREEMPT" {
        assert!(Instant::now() < deadline, "controller never reached PREEMPT");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let sig = &get(&base, "/api/signals").await[0];
    assert_eq!(sig["green"], json!([2]));

    let (status, _) = post(&base, "/api/controllers/X/release", json!({})).await;
    assert_eq!(status, 200);
    let deadline = Instant::now() + Duration::from_secs(5);
    while signal_mode(&base).await != "NORMAL" {
        assert!(Instant::now() < deadline, "controller never returned to NORMAL");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }

    let events = running.shutdown().await.unwrap();
    let kinds: Vec<String> = events.iter().map(|e| serde_json::to_value(e).unwrap()["kind"].as_str().unwrap().to_owned()).collect();
    assert!(kinds.iter().any(|k| k == "OPERATOR_ACTION"));
    assert!(kinds.iter().any(|k| k == "PREEMPT_SENT"));
    assert!(kinds.iter().any(|k| k == "RELEASE_SENT"));
}

#[tokio::test(flavor = "multi_thread")]
async fn baseline_rejects_operator_commands() {
    let running = server::start(crossing(RunMode::Baseline, 300.0), any_port(), 5.0).await.unwrap();
    let base = format!("http://{}", running.addr);
    let (status, _) = post(&base, "/api/controllers/X/preempt", json!({ "approach": 2 })).await;
    assert_eq!(status, 409);
    running.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn events_long_poll_returns_new_records() {
    let running = server::start(crossing(RunMode::AutoPreempt, 300.0), any_port(), 10.0).await.unwrap();
    let base = format!("http://{}", running.addr);

    let first = get(&base, "/api/events?from=0&wait_ms=5000").await;
    let first = first.as_array().unwrap();
    assert!(!first.is_empty());
    let seqs: Vec<u64> = first.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));

    let next = seqs.last().unwrap() + 1;
    let later = get(&base, &format!("/api/events?from={next}&wait_ms=5000")).await;
    let later = later.as_array().unwrap();
    assert!(!later.is_empty());
    assert_eq!(later[0]["seq"].as_u64().unwrap(), next);

    // Past the end with no wait answers at once with nothing.
    let t = Instant::now();
    let none = get(&base, "/api/events?from=1000000000&wait_ms=0").await;
    assert_eq!(none, json!([]));
    assert!(t.elapsed() < Duration::from_secs(1));

    running.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn occupied_port_is_a_bind_error() {
    let first = server::start(crossing(RunMode::AutoPreempt, 300.0), any_port(), 1.0).await.unwrap();
    let err = server::start(crossing(RunMode::AutoPreempt, 300.0), first.addr, 1.0).await.err().unwrap();
    assert!(matches!(err, ServeError::Bind { addr, .. } if addr == first.addr), "{err}");
    first.shutdown().await.unwrap();
}

#[test]
fn speed_scales_wall_time() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut running = rt.block_on(server::start(crossing(RunMode::AutoPreempt, 30.0), any_port(), 10.0)).unwrap();
    let wall = running.join_sim().unwrap().as_secs_f64();
    assert!((wall - 3.0).abs() <= 0.3, "30 s at 10x took {wall} s");
    assert!(running.shared.lock().is_finished());
    rt.block_on(running.shutdown()).unwrap();
}
