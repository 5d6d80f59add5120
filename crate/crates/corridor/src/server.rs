//! Live control room: the simulation paced in real time behind the
//! operator HTTP API.
//!
//! The simulator sits behind one mutex. Ticks and API calls take it in
//! turn, so every state change is serialized and reads see whole ticks.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use corridor_core::control_room::{EventRecord, OperatorAction, TrackStatus, TrackSummary};
use corridor_core::ids::{AmbulanceId, ControllerId, EdgeId, NodeId};
use corridor_core::signals::ControllerSnapshot;
use corridor_core::sim::Sim;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Notify;

/// Operator id recorded for API calls.
pub const API_OPERATOR: &str = "console";
const MAX_POLL: Duration = Duration::from_secs(25);

#[derive(Clone)]
pub struct Shared {
    sim: Arc<Mutex<Sim>>,
    ticked: Arc<Notify>,
}

impl Shared {
    pub fn new(sim: Sim) -> Self {
        Self { sim: Arc::new(Mutex::new(sim)), ticked: Arc::new(Notify::new()) }
    }

    pub fn lock(&self) -> MutexGuard<'_, Sim> {
        // A panicked tick leaves no partial state worth protecting.
        self.sim.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn events_from(&self, from: u64) -> Vec<EventRecord> {
        self.lock().control_room().read_events(from).to_vec()
    }
}

/// Steps the simulation at `speed` × real time until it finishes or `stop`
/// is raised. Returns the wall time spent.
pub fn pace(shared: &Shared, speed: f64, stop: &AtomicBool) -> Duration {
    let start = Instant::now();
    loop {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let sim_s = {
            let mut sim = shared.lock();
            if sim.is_finished() {
                break;
            }
            sim.step();
            sim.now().as_secs_f64()
        };
        shared.ticked.notify_waiters();
        let target = start + Duration::from_secs_f64(sim_s / speed);
        if let Some(wait) = target.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    shared.ticked.notify_waiters();
    start.elapsed()
}

#[derive(Debug, Serialize)]
pub struct GraphView {
    pub nodes: Vec<NodeView>,
    pub edges: Vec<EdgeView>,
    pub hospitals: Vec<HospitalView>,
    pub signals: Vec<SignalPlacement>,
}

#[derive(Debug, Serialize)]
pub struct NodeView {
    pub id: NodeId,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Serialize)]
pub struct EdgeView {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Serialize)]
pub struct HospitalView {
    pub node: NodeId,
    pub name: String,
}

#[derive(Debug, Serialize)]
pub struct SignalPlacement {
    pub id: ControllerId,
    pub node: NodeId,
    pub approaches: Vec<EdgeId>,
}

fn graph_view(sim: &Sim) -> GraphView {
    let g = sim.graph();
    GraphView {
        nodes: g.nodes().map(|(id, p)| NodeView { id, lat: p.lat, lon: p.lon }).collect(),
        edges: g
            .edges()
            .map(|e| EdgeView { id: e.id, from: e.from, to: e.to, length_m: e.length_m, speed_mps: e.speed_mps })
            .collect(),
        hospitals: g.hospitals().map(|(node, name)| HospitalView { node, name: name.to_string() }).collect(),
        signals: sim
            .controllers()
            .map(|c| SignalPlacement { id: c.id.clone(), node: c.node, approaches: c.plan.approaches().iter().copied().collect() })
            .collect(),
    }
}

/// Every scenario ambulance, tracked or not yet heard from.
pub fn ambulance_views(sim: &Sim) -> Vec<TrackSummary> {
    let tracked = sim.control_room().summaries();
    sim.vehicles()
        .iter()
        .map(|v| {
            tracked.iter().find(|t| t.id == v.ambulance_id).cloned().unwrap_or(TrackSummary {
                id: v.ambulance_id.clone(),
                last_fix: None,
                last_fix_time: None,
                matched_node: None,
                status: TrackStatus::Active,
                destination: None,
                eta_s: None,
            })
        })
        .collect()
}

fn error(status: u16, msg: String) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_REQUEST);
    (code, Json(json!({ "error": msg }))).into_response()
}

fn operate(shared: &Shared, action: OperatorAction) -> Response {
    let result = shared.lock().operator(API_OPERATOR, action);
    shared.ticked.notify_waiters();
    match result {
        Ok(()) => Json(json!({ "ok": true })).into_response(),
        Err(e) => error(e.http_status(), e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct PreemptBody {
    approach: EdgeId,
}

#[derive(Debug, Deserialize)]
struct RouteBody {
    hospital: NodeId,
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
    /// Long-poll budget; 0 answers at once.
    #[serde(default = "default_wait")]
    wait_ms: u64,
}

fn default_wait() -> u64 {
    MAX_POLL.as_millis() as u64
}

async fn ambulances(State(s): State<Shared>) -> Json<Vec<TrackSummary>> {
    Json(ambulance_views(&s.lock()))
}

async fn signals(State(s): State<Shared>) -> Json<Vec<ControllerSnapshot>> {
    Json(s.lock().controller_snapshots())
}

async fn graph(State(s): State<Shared>) -> Json<GraphView> {
    Json(graph_view(&s.lock()))
}

fn controller_id(raw: &str) -> Result<ControllerId, Response> {
    ControllerId::new(raw).map_err(|e| error(404, e.to_string()))
}

async fn preempt(State(s): State<Shared>, Path(id): Path<String>, Json(body): Json<PreemptBody>) -> Response {
    match controller_id(&id) {
        Ok(controller) => operate(&s, OperatorAction::Preempt { controller, approach: body.approach }),
        Err(r) => r,
    }
}

async fn release(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match controller_id(&id) {
        Ok(controller) => operate(&s, OperatorAction::Release { controller }),
        Err(r) => r,
    }
}

async fn route(State(s): State<Shared>, Path(id): Path<String>, Json(body): Json<RouteBody>) -> Response {
    match AmbulanceId::new(&id) {
        Ok(ambulance) => operate(&s, OperatorAction::PinRoute { ambulance, hospital: body.hospital }),
        Err(e) => error(404, e.to_string()),
    }
}

async fn events(State(s): State<Shared>, Query(q): Query<EventsQuery>) -> Json<Vec<EventRecord>> {
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms).min(MAX_POLL);
    loop {
        let notified = s.ticked.notified();
        tokio::pin!(notified);
        notified.as_mut().enable();
        let ready = s.events_from(q.from);
        // Ticks without new records keep the poll waiting.
        if !ready.is_empty() || tokio::time::timeout_at(deadline, notified).await.is_err() {
            return Json(ready);
        }
    }
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/api/ambulances", get(ambulances))
        .route("/api/signals", get(signals))
        .route("/api/graph", get(graph))
        .route("/api/controllers/{id}/preempt", post(preempt))
        .route("/api/controllers/{id}/release", post(release))
        .route("/api/ambulances/{id}/route", post(route))
        .route("/api/events", get(events))
        .with_state(shared)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Running server handle, mostly for tests.
pub struct Running {
    pub addr: SocketAddr,
    pub shared: Shared,
    stop: Arc<AtomicBool>,
    sim_thread: Option<std::thread::JoinHandle<Duration>>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Running {
    /// Wall time the simulation took, once it has finished.
    pub fn join_sim(&mut self) -> Option<Duration> {
        self.sim_thread.take().and_then(|h| h.join().ok())
    }

    pub async fn shutdown(mut self) -> std::io::Result<Vec<EventRecord>> {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let joined = self.sim_thread.take();
        if let Some(h) = joined {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
        self.server.await.map_err(std::io::Error::other)??;
        Ok(self.shared.events_from(0))
    }
}

/// Binds, starts the paced simulation and serves until shut down.
pub async fn start(sim: Sim, listen: SocketAddr, speed: f64) -> Result<Running, ServeError> {
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|source| ServeError::Bind { addr: listen, source })?;
    let addr = listener.local_addr()?;
    let shared = Shared::new(sim);
    let stop = Arc::new(AtomicBool::new(false));
    let sim_thread = {
        let (shared, stop) = (shared.clone(), stop.clone());
        std::thread::spawn(move || pace(&shared, speed, &stop))
    };
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(shared.clone());
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(Running { addr, shared, stop, sim_thread: Some(sim_thread), server, shutdown: Some(tx) })
}

/// `serve` entry point: runs until Ctrl-C, then writes the event log.
pub async fn serve(sim: Sim, listen: SocketAddr, speed: f64, out_dir: PathBuf) -> Result<PathBuf, ServeError> {
    let running = start(sim, listen, speed).await?;
    eprintln!("control room listening on http://{}", running.addr);
    let _ = tokio::signal::ctrl_c().await;
    let events = running.shutdown().await?;
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("events-serve.jsonl");
    let f = std::fs::File::create(&path)?;
    crate::report::write_events(std::io::BufWriter::new(f), &events)?;
    Ok(path)
}
