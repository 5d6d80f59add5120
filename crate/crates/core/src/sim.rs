//! Deterministic discrete-time simulator.
//!
//! Each tick of `dt` covers `[t, t + dt)` and runs in a fixed order:
//!
//! 1. the SMS network delivers envelopes due at `t`;
//! 2. scripted operator actions due at `t` run;
//! 3. the control room dispatches and controllers apply the commands;
//! 4. vehicles move using the indications at `t`;
//! 5. on whole seconds each device runs the window ending at `t + dt` and
//!    its GPS emits a fresh GGA fix stamped `t + dt`;
//! 6. controllers advance by `dt`.
//!
//! Given a scenario and a seed the event log and metrics are identical on
//! every run.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::control_room::{
    ControlRoom, ControlRoomConfig, ControllerCommand, EventRecord, IngestStats, OperatorAction,
    Rejected, SignalView, TrackStatus,
};
use crate::device::{Device, DeviceConfig, DeviceError, SendMode, TimedChunk};
use crate::geo::LatLon;
use crate::ids::{AmbulanceId, ControllerId, EdgeId, NodeId, SmsAddress};
use crate::modem::{Modem, NetworkConfig, SmsNetwork, DEFAULT_TX_TIME};
use crate::nmea::{encode_gga, GeoPosition};
use crate::roadnet::{RoadGraph, RoadnetError, Route};
use crate::signals::{Controller, ControllerSnapshot, Holder, Indication, Mode, PhasePlan};
use crate::time::{Epoch, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunMode {
    /// No preemption at all.
    Baseline,
    /// Automatic corridors plus operator commands.
    #[default]
    AutoPreempt,
    /// Operator commands only.
    Operator,
}

impl RunMode {
    pub const ALL: [RunMode; 3] = [RunMode::Baseline, RunMode::AutoPreempt, RunMode::Operator];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Baseline => "BASELINE",
            RunMode::AutoPreempt => "AUTO_PREEMPT",
            RunMode::Operator => "OPERATOR",
        }
    }
}

impl core::fmt::Display for RunMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for RunMode {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RunMode::AutoPreempt);
        }
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Invalid(String),
    #[error("signal {0} is not placed on the graph at node {1}")]
    SignalMismatch(ControllerId, NodeId),
    #[error("controller {0} has no phase for incoming edge {1}")]
    MissingApproach(ControllerId, EdgeId),
    #[error("duplicate ambulance {0}")]
    DuplicateAmbulance(AmbulanceId),
    #[error("ambulance {0}: {1}")]
    Routing(AmbulanceId, RoadnetError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub id: ControllerId,
    pub node: NodeId,
    pub plan: PhasePlan,
    pub offset_ms: u64,
    /// Per-approach queue; approaches not listed use the default.
    pub initial_queue: BTreeMap<EdgeId, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbulanceSpec {
    pub id: AmbulanceId,
    pub start: NodeId,
    pub hospital: Option<NodeId>,
    pub phone: SmsAddress,
    pub depart: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledAction {
    pub at: SimTime,
    pub operator: String,
    pub action: OperatorAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt_ms: u64,
    pub horizon: SimTime,
    pub seed: u64,
    pub mode: RunMode,
    pub network: NetworkConfig,
    /// Time for one queued vehicle to clear the stop line.
    pub discharge_ms: u64,
    pub default_queue: u32,
    pub epoch: Epoch,
    pub send_interval: Duration,
    pub send_mode: SendMode,
    pub modem_tx_time: Duration,
    pub lead_time: Duration,
    pub passage_margin: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_ms: 100,
            horizon: SimTime::from_secs(3600),
            seed: 0,
            mode: RunMode::AutoPreempt,
            network: NetworkConfig::default(),
            discharge_ms: 2000,
            default_queue: 0,
            epoch: Epoch::default(),
            send_interval: Duration::from_secs(1),
            send_mode: SendMode::Continuous,
            modem_tx_time: DEFAULT_TX_TIME,
            lead_time: Duration::from_secs(20),
            passage_margin: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: RoadGraph,
    pub signals: Vec<SignalSpec>,
    pub ambulances: Vec<AmbulanceSpec>,
    pub control_room_number: SmsAddress,
    pub hospital_number: SmsAddress,
    pub operator_actions: Vec<ScheduledAction>,
    pub config: SimConfig,
}

// ---- vehicles ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum Motion {
    Waiting,
    Moving,
    /// At a stop line, light not green.
    Stopped,
    /// Light green, queue ahead still clearing.
    Discharging { remaining_s: f64 },
    Arrived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub ambulance_id: AmbulanceId,
    pub route: Route,
    pub depart: SimTime,
    /// Index into `route.edges`.
    pub edge_index: usize,
    pub pos_m: f64,
    pub motion: Motion,
    pub stops_count: u32,
    pub arrive_s: Option<f64>,
    pub waits_s: BTreeMap<ControllerId, f64>,
    /// When the front bumper reached each node on the route.
    pub node_arrivals: Vec<(NodeId, f64)>,
}

impl Vehicle {
    fn new(ambulance_id: AmbulanceId, route: Route, depart: SimTime) -> Self {
        let origin = route.origin();
        let done = route.edges.is_empty();
        Self {
            ambulance_id,
            route,
            depart,
            edge_index: 0,
            pos_m: 0.0,
            motion: if done { Motion::Arrived } else { Motion::Waiting },
            stops_count: 0,
            arrive_s: done.then(|| depart.as_secs_f64()),
            waits_s: BTreeMap::new(),
            node_arrivals: alloc::vec![(origin, depart.as_secs_f64())],
        }
    }

    pub fn position(&self, graph: &RoadGraph) -> LatLon {
        if self.motion == Motion::Arrived || self.route.edges.is_empty() {
            return graph.node(self.route.destination()).expect("route nodes exist");
        }
        let a = graph.node(self.route.node_sequence[self.edge_index]).expect("route nodes exist");
        let b = graph.node(self.route.node_sequence[self.edge_index + 1]).expect("route nodes exist");
        let len = self.edge(graph).length_m;
        a.lerp(&b, (self.pos_m / len).clamp(0.0, 1.0))
    }

    fn edge<'g>(&self, graph: &'g RoadGraph) -> &'g crate::roadnet::Edge {
        graph.edge(self.route.edges[self.edge_index]).expect("route edges exist")
    }

    pub fn travel_time_s(&self) -> Option<f64> {
        self.arrive_s.map(|a| a - self.depart.as_secs_f64())
    }
}

/// What a vehicle sees at a stop line.
pub trait Junctions {
    /// `None` for an unsignalized node.
    fn indication(&self, node: NodeId, approach: EdgeId) -> Option<(ControllerId, Indication)>;
    /// Vehicles still queued on `approach`.
    fn queue(&self, approach: EdgeId) -> f64;
    fn discharge_s(&self) -> f64;
}

/// Moves a vehicle over `[t0, t0 + dt)`. Indications are those at `t0`.
pub fn step_vehicle(v: &mut Vehicle, graph: &RoadGraph, junctions: &dyn Junctions, t0_s: f64, dt_s: f64) {
    let mut rem = dt_s;
    if v.motion == Motion::Waiting {
        if t0_s + 1e-9 < v.depart.as_secs_f64() {
            return;
        }
        v.motion = Motion::Moving;
    }
    while rem > 1e-12 {
        match v.motion {
            Motion::Waiting | Motion::Arrived => return,
            Motion::Moving => {
                let edge = v.edge(graph);
                let to_end = (edge.length_m - v.pos_m) / edge.speed_mps;
                if to_end > rem {
                    v.pos_m += edge.speed_mps * rem;
                    return;
                }
                rem -= to_end;
                v.pos_m = edge.length_m;
                let at = t0_s + (dt_s - rem);
                let node = edge.to;
                v.node_arrivals.push((node, at));
                if v.edge_index + 1 == v.route.edges.len() {
                    v.motion = Motion::Arrived;
                    v.arrive_s = Some(at);
                    return;
                }
                match junctions.indication(node, edge.id) {
                    None => advance(v),
                    Some((_, Indication::Green)) => {
                        let q = junctions.queue(edge.id);
                        if q > 0.0 {
                            v.stops_count += 1;
                            v.motion = Motion::Discharging {
                                remaining_s: q * junctions.discharge_s(),
                            };
                        } else {
                            advance(v);
                        }
                    }
                    Some(_) => {
                        v.stops_count += 1;
                        v.motion = Motion::Stopped;
                    }
                }
            }
            Motion::Stopped => {
                let edge = v.edge(graph);
                let (cid, ind) = junctions.indication(edge.to, edge.id).expect("stopped only at signals");
                if ind == Indication::Green {
                    v.motion = Motion::Discharging {
                        remaining_s: junctions.queue(edge.id) * junctions.discharge_s(),
                    };
                } else {
                    *v.waits_s.entry(cid).or_default() += rem;
                    return;
                }
            }
            Motion::Discharging { remaining_s } => {
                let edge = v.edge(graph);
                let (cid, ind) = junctions.indication(edge.to, edge.id).expect("discharging only at signals");
                if ind != Indication::Green {
                    v.motion = Motion::Stopped;
                    *v.waits_s.entry(cid).or_default() += rem;
                    return;
                }
                let used = remaining_s.min(rem);
                if used > 0.0 {
                    *v.waits_s.entry(cid).or_default() += used;
                }
                rem -= used;
                if remaining_s - used > 1e-12 {
                    v.motion = Motion::Discharging {
                        remaining_s: remaining_s - used,
                    };
                    return;
                }
                advance(v);
            }
        }
    }
}

fn advance(v: &mut Vehicle) {
    v.edge_index += 1;
    v.pos_m = 0.0;
    v.motion = Motion::Moving;
}

// ---- metrics -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbulanceMetrics {
    pub id: AmbulanceId,
    pub hospital: NodeId,
    pub depart_s: f64,
    pub arrive_s: Option<f64>,
    pub travel_time_s: Option<f64>,
    pub free_flow_s: f64,
    pub stops_count: u32,
    pub waits_s: BTreeMap<ControllerId, f64>,
    pub node_arrivals: Vec<(NodeId, f64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounters {
    /// Every message the devices tried to send.
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub dropped_busy: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: RunMode,
    pub seed: u64,
    pub completed: bool,
    pub end_s: f64,
    pub ambulances: Vec<AmbulanceMetrics>,
    pub messages: MessageCounters,
    pub ingest: IngestStats,
    pub preempt_commands: u64,
    pub release_commands: u64,
}

impl RunMetrics {
    pub fn ambulance(&self, id: &str) -> Option<&AmbulanceMetrics> {
        self.ambulances.iter().find(|a| a.id.as_str() == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub events: Vec<EventRecord>,
}

// ---- the simulator -----------------------------------------------------------

#[derive(Debug, Clone)]
struct QueueState {
    initial: u32,
    level: f64,
    was_green: bool,
}

struct Lights<'a> {
    controllers: &'a BTreeMap<ControllerId, Controller>,
    at_node: &'a BTreeMap<NodeId, ControllerId>,
    queues: &'a BTreeMap<EdgeId, QueueState>,
    discharge_s: f64,
}

impl Junctions for Lights<'_> {
    fn indication(&self, node: NodeId, approach: EdgeId) -> Option<(ControllerId, Indication)> {
        let cid = self.at_node.get(&node)?;
        Some((cid.clone(), self.controllers[cid].indication(approach)))
    }

    fn queue(&self, approach: EdgeId) -> f64 {
        self.queues.get(&approach).map_or(0.0, |q| q.level)
    }

    fn discharge_s(&self) -> f64 {
        self.discharge_s
    }
}

struct ControllersView<'a>(&'a BTreeMap<ControllerId, Controller>);

impl SignalView for ControllersView<'_> {
    fn approaches(&self, controller: &ControllerId) -> Option<BTreeSet<EdgeId>> {
        self.0.get(controller).map(|c| c.plan.approaches().clone())
    }

    fn active_holder(&self, controller: &ControllerId) -> Option<Holder> {
        self.0.get(controller)?.state.active_request().map(|r| r.holder.clone())
    }
}

type SignalKey = (Mode, Vec<EdgeId>, Vec<EdgeId>, Option<Holder>);

#[derive(Debug)]
pub struct Sim {
    cfg: SimConfig,
    graph: Arc<RoadGraph>,
    controllers: BTreeMap<ControllerId, Controller>,
    at_node: BTreeMap<NodeId, ControllerId>,
    queues: BTreeMap<EdgeId, QueueState>,
    vehicles: Vec<Vehicle>,
    devices: Vec<Device>,
    modems: Vec<Modem>,
    gps: Vec<Vec<TimedChunk>>,
    network: SmsNetwork,
    room: ControlRoom,
    actions: Vec<ScheduledAction>,
    last_signal: BTreeMap<ControllerId, SignalKey>,
    now: SimTime,
    preempts: u64,
    releases: u64,
    last_arrival: Option<SimTime>,
    finished: bool,
    completed: bool,
}

/// Grace period after the last vehicle arrives for the room to notice.
const ARRIVAL_GRACE: Duration = Duration::from_secs(30);

impl Sim {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        let Scenario {
            graph,
            signals,
            ambulances,
            control_room_number,
            hospital_number,
            mut operator_actions,
            config: cfg,
        } = scenario;
        if cfg.dt_ms == 0 || 1000 % cfg.dt_ms != 0 {
            return Err(ScenarioError::Invalid(format!("dt_ms {} must divide 1000", cfg.dt_ms)));
        }
        if cfg.horizon == SimTime::ZERO {
            return Err(ScenarioError::Invalid("horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.network.loss_probability) {
            return Err(ScenarioError::Invalid("loss_probability outside [0, 1]".into()));
        }
        if cfg.network.latency_min > cfg.network.latency_max {
            return Err(ScenarioError::Invalid("latency_min exceeds latency_max".into()));
        }
        let graph = Arc::new(graph);

        let mut controllers = BTreeMap::new();
        let mut at_node = BTreeMap::new();
        let mut queues = BTreeMap::new();
        for s in signals {
            if graph.controller_at(s.node) != Some(&s.id) {
                return Err(ScenarioError::SignalMismatch(s.id, s.node));
            }
            for e in graph.incoming(s.node) {
                if !s.plan.approaches().contains(&e.id) {
                    return Err(ScenarioError::MissingApproach(s.id, e.id));
                }
            }
            for &a in s.plan.approaches() {
                let initial = s.initial_queue.get(&a).copied().unwrap_or(cfg.default_queue);
                queues.insert(a, QueueState { initial, level: initial as f64, was_green: false });
            }
            at_node.insert(s.node, s.id.clone());
            let c = Controller::new(s.id.clone(), s.node, s.plan, s.offset_ms);
            if controllers.insert(s.id.clone(), c).is_some() {
                return Err(ScenarioError::Invalid(format!("duplicate signal {}", s.id)));
            }
        }
        for (node, cid) in graph.intersections() {
            if !controllers.contains_key(cid) {
                return Err(ScenarioError::SignalMismatch(cid.clone(), node));
            }
        }

        let mut room_cfg = ControlRoomConfig::new(control_room_number.clone(), hospital_number.clone());
        room_cfg.lead_time = cfg.lead_time;
        room_cfg.passage_margin = cfg.passage_margin;
        room_cfg.expected_send_interval = cfg.send_interval;
        room_cfg.automatic = cfg.mode == RunMode::AutoPreempt;
        room_cfg.operator_enabled = cfg.mode != RunMode::Baseline;
        let mut room = ControlRoom::new(graph.clone(), room_cfg);

        let mut seen = BTreeSet::new();
        let mut vehicles = Vec::new();
        let mut devices = Vec::new();
        let mut modems = Vec::new();
        for a in ambulances {
            if !seen.insert(a.id.clone()) {
                return Err(ScenarioError::DuplicateAmbulance(a.id));
            }
            let route = match a.hospital {
                Some(h) => {
                    if !graph.is_hospital(h) {
                        return Err(ScenarioError::Routing(a.id, RoadnetError::NoHospital));
                    }
                    room.pin_destination(a.id.clone(), h);
                    graph.shortest_path(a.start, h)
                }
                None => graph.nearest_hospital(a.start).map(|(_, r)| r),
            }
            .map_err(|e| ScenarioError::Routing(a.id.clone(), e))?;
            let mut dc = DeviceConfig::new(a.id.clone(), control_room_number.clone(), hospital_number.clone());
            dc.send_interval = cfg.send_interval;
            dc.send_mode = cfg.send_mode;
            devices.push(Device::new(dc)?);
            modems.push(Modem::new(a.phone, cfg.modem_tx_time));
            vehicles.push(Vehicle::new(a.id, route, a.depart));
        }
        operator_actions.sort_by_key(|a| a.at);

        let mut network_cfg = cfg.network;
        network_cfg.seed = cfg.seed;
        let mut sim = Self {
            graph,
            controllers,
            at_node,
            queues,
            gps: alloc::vec![Vec::new(); vehicles.len()],
            vehicles,
            devices,
            modems,
            network: SmsNetwork::new(network_cfg),
            room,
            actions: operator_actions,
            last_signal: BTreeMap::new(),
            now: SimTime::ZERO,
            preempts: 0,
            releases: 0,
            last_arrival: None,
            finished: false,
            completed: false,
            cfg,
        };
        sim.log_signal_changes();
        sim.emit_fixes();
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    pub fn control_room(&self) -> &ControlRoom {
        &self.room
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn controllers(&self) -> impl Iterator<Item = &Controller> {
        self.controllers.values()
    }

    pub fn controller_snapshots(&self) -> Vec<ControllerSnapshot> {
        self.controllers.values().map(Controller::snapshot).collect()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Applies an operator command now.
    pub fn operator(&mut self, operator: &str, action: OperatorAction) -> Result<(), Rejected> {
        let cmds = self
            .room
            .operator_command(action, operator, &ControllersView(&self.controllers), self.now)?;
        self.apply(cmds);
        self.log_signal_changes();
        Ok(())
    }

    fn apply(&mut self, cmds: Vec<ControllerCommand>) {
        for cmd in cmds {
            match cmd {
                ControllerCommand::Preempt { controller, request } => {
                    if let Some(c) = self.controllers.get_mut(&controller) {
                        if c.request_preempt(request).is_ok() {
                            self.preempts += 1;
                        }
                    }
                }
                ControllerCommand::Release { controller, holder } => {
                    if let Some(c) = self.controllers.get_mut(&controller) {
                        // A release for a request already gone is harmless.
                        let _ = c.release_preempt(&holder);
                        self.releases += 1;
                    }
                }
            }
        }
    }

    fn log_signal_changes(&mut self) {
        for c in self.controllers.values() {
            let snap = c.snapshot();
            let key = (snap.mode, snap.green.clone(), snap.yellow.clone(), snap.active.clone());
            if self.last_signal.get(&c.id) != Some(&key) {
                self.room.log_signal(self.now, &snap);
                self.last_signal.insert(c.id.clone(), key);
            }
        }
    }

    fn emit_fixes(&mut self) {
        let utc_tod = self.cfg.epoch.time_of_day(self.now);
        for (v, buf) in self.vehicles.iter().zip(self.gps.iter_mut()) {
            let fix = GeoPosition::gps_fix(v.position(&self.graph), utc_tod);
            let mut bytes = encode_gga(&fix).into_bytes();
            bytes.extend_from_slice(b"\r\n");
            buf.push(TimedChunk { at: self.now, bytes });
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        if self.finished {
            return;
        }
        let t = self.now;
        let dt = Duration::from_millis(self.cfg.dt_ms);

        for env in self.network.deliver_due(t) {
            let cmds = self.room.receive(&env, t);
            self.apply(cmds);
        }
        while self.actions.first().is_some_and(|a| a.at <= t) {
            let a = self.actions.remove(0);
            // Rejections are logged by the room.
            let _ = self.operator(&a.operator, a.action);
        }
        let cmds = self.room.dispatch(t);
        self.apply(cmds);
        self.log_signal_changes();

        for (&approach, q) in self.queues.iter_mut() {
            let node = self.graph.edge(approach).map(|e| e.to);
            let green = node
                .and_then(|n| self.at_node.get(&n))
                .is_some_and(|cid| self.controllers[cid].indication(approach) == Indication::Green);
            if green && !q.was_green {
                q.level = q.initial as f64;
            }
            q.was_green = green;
        }

        let discharge_s = self.cfg.discharge_ms as f64 / 1000.0;
        let dt_s = self.cfg.dt_ms as f64 / 1000.0;
        {
            let lights = Lights {
                controllers: &self.controllers,
                at_node: &self.at_node,
                queues: &self.queues,
                discharge_s,
            };
            for v in self.vehicles.iter_mut() {
                let was_arrived = v.motion == Motion::Arrived;
                step_vehicle(v, &self.graph, &lights, t.as_secs_f64(), dt_s);
                if !was_arrived && v.motion == Motion::Arrived {
                    self.last_arrival = Some(t + dt);
                }
            }
        }
        if discharge_s > 0.0 {
            for q in self.queues.values_mut().filter(|q| q.was_green) {
                q.level = (q.level - dt_s / discharge_s).max(0.0);
            }
        } else {
            for q in self.queues.values_mut().filter(|q| q.was_green) {
                q.level = 0.0;
            }
        }

        let next = t + dt;
        if next.is_whole_second() {
            let utc = self.cfg.epoch.utc(next);
            for i in 0..self.devices.len() {
                // Busy drops are counted by the device.
                let _ = self.devices[i].tick(next, utc, &self.gps[i], &mut self.modems[i]);
                for env in self.modems[i].take_outbox() {
                    self.network.submit(env, next);
                }
                self.gps[i].retain(|c| c.at >= next);
            }
            self.now = next;
            self.emit_fixes();
        }
        for c in self.controllers.values_mut() {
            c.step(self.cfg.dt_ms);
        }
        self.now = next;
        self.log_signal_changes();

        if self.done() {
            self.finished = true;
            self.completed = true;
        } else if self.now >= self.cfg.horizon {
            self.finished = true;
            self.completed = self.vehicles.iter().all(|v| v.motion == Motion::Arrived);
            self.drain();
        }
    }

    fn done(&self) -> bool {
        if !self.vehicles.iter().all(|v| v.motion == Motion::Arrived) || self.network.in_flight_len() > 0 {
            return false;
        }
        let automatic_holds = self
            .room
            .tracks()
            .filter_map(|t| self.room.plan(&t.ambulance_id))
            .flat_map(|p| &p.entries)
            .any(|e| e.state == crate::control_room::EntryState::Sent);
        if automatic_holds {
            return false;
        }
        let all_seen = self.vehicles.iter().all(|v| {
            self.room
                .track(&v.ambulance_id)
                .is_some_and(|t| t.status == TrackStatus::Arrived)
        });
        all_seen || self.last_arrival.is_some_and(|a| self.now.since(a) >= ARRIVAL_GRACE)
    }

    /// Delivers whatever is still in flight and releases outstanding holds.
    fn drain(&mut self) {
        let mut last = self.now;
        for env in self.network.deliver_due(SimTime(u64::MAX)) {
            let at = env.deliver_time.unwrap_or(self.now).max(self.now);
            last = last.max(at);
            let cmds = self.room.receive(&env, at);
            self.apply(cmds);
        }
        self.now = last;
        let cmds = self.room.shutdown(last);
        self.apply(cmds);
        self.log_signal_changes();
    }

    pub fn run_to_end(&mut self) -> RunMetrics {
        while !self.finished {
            self.step();
        }
        if self.room.outstanding_holds() > 0 {
            let cmds = self.room.shutdown(self.now);
            self.apply(cmds);
            self.log_signal_changes();
        }
        self.metrics()
    }

    pub fn metrics(&self) -> RunMetrics {
        let net = self.network.stats();
        let dropped: u64 = self.devices.iter().map(|d| d.state.messages_dropped).sum();
        let attempted: u64 = self.devices.iter().map(|d| d.state.messages_sent).sum::<u64>() + dropped;
        RunMetrics {
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            completed: self.completed,
            end_s: self.now.as_secs_f64(),
            ambulances: self
                .vehicles
                .iter()
                .map(|v| AmbulanceMetrics {
                    id: v.ambulance_id.clone(),
                    hospital: v.route.destination(),
                    depart_s: v.depart.as_secs_f64(),
                    arrive_s: v.arrive_s,
                    travel_time_s: v.travel_time_s(),
                    free_flow_s: v.route.total_time_s,
                    stops_count: v.stops_count,
                    waits_s: v.waits_s.clone(),
                    node_arrivals: v.node_arrivals.clone(),
                })
                .collect(),
            messages: MessageCounters {
                sent: attempted,
                delivered: net.delivered,
                lost: net.lost,
                dropped_busy: dropped,
            },
            ingest: self.room.stats(),
            preempt_commands: self.preempts,
            release_commands: self.releases,
        }
    }

    pub fn into_output(mut self) -> RunOutput {
        let metrics = self.run_to_end();
        RunOutput {
            metrics,
            events: self.room.log().records().to_vec(),
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: Scenario) -> Result<RunOutput, ScenarioError> {
    Ok(Sim::new(scenario)?.into_output())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::Edge;

    struct Fixed {
        ind: Option<Indication>,
        queue: f64,
    }

    impl Junctions for Fixed {
        fn indication(&self, _: NodeId, _: EdgeId) -> Option<(ControllerId, Indication)> {
            self.ind.map(|i| (ControllerId::new("S").unwrap(), i))
        }
        fn queue(&self, _: EdgeId) -> f64 {
            self.queue
        }
        fn discharge_s(&self) -> f64 {
            2.0
        }
    }

    fn line() -> RoadGraph {
        RoadGraph::builder()
            .node(NodeId(0), LatLon::new(0.0, 0.0))
            .node(NodeId(1), LatLon::new(0.0, 0.001))
            .node(NodeId(2), LatLon::new(0.0, 0.002))
            .edge(Edge { id: EdgeId(0), from: NodeId(0), to: NodeId(1), length_m: 100.0, speed_mps: 10.0 })
            .edge(Edge { id: EdgeId(1), from: NodeId(1), to: NodeId(2), length_m: 50.0, speed_mps: 10.0 })
            .hospital(NodeId(2), "H")
            .build()
            .unwrap()
    }

    fn vehicle(g: &RoadGraph) -> Vehicle {
        let r = g.shortest_path(NodeId(0), NodeId(2)).unwrap();
        Vehicle::new(AmbulanceId::new("A").unwrap(), r, SimTime::ZERO)
    }

    #[test]
    fn free_flow_travel_is_exact() {
        let g = line();
        let mut v = vehicle(&g);
        let j = Fixed { ind: None, queue: 0.0 };
        let mut t = 0.0;
        while v.motion != Motion::Arrived {
            step_vehicle(&mut v, &g, &j, t, 0.3);
            t += 0.3;
        }
        assert!((v.travel_time_s().unwrap() - 15.0).abs() < 1e-9);
        assert_eq!(v.stops_count, 0);
        assert_eq!(v.node_arrivals.len(), 3);
    }

    #[test]
    fn red_wait_then_queue_discharge() {
        let g = line();
        let mut v = vehicle(&g);
        let red = Fixed { ind: Some(Indication::Red), queue: 3.0 };
        for i in 0..200 {
            step_vehicle(&mut v, &g, &red, i as f64 * 0.1, 0.1);
        }
        assert_eq!(v.motion, Motion::Stopped);
        assert_eq!(v.stops_count, 1);
        let wait = v.waits_s.values().sum::<f64>();
        assert!((wait - 10.0).abs() < 1e-6, "{wait}");
        let green = Fixed { ind: Some(Indication::Green), queue: 3.0 };
        let mut t = 20.0;
        while v.motion != Motion::Arrived {
            step_vehicle(&mut v, &g, &green, t, 0.1);
            t += 0.1;
        }
        let wait = v.waits_s.values().sum::<f64>();
        assert!((wait - 16.0).abs() < 1e-6, "{wait}");
        assert!((v.travel_time_s().unwrap() - 31.0).abs() < 1e-6);
    }

    #[test]
    fn zero_edge_route_is_arrived() {
        let g = line();
        let r = g.shortest_path(NodeId(2), NodeId(2)).unwrap();
        let v = Vehicle::new(AmbulanceId::new("A").unwrap(), r, SimTime::ZERO);
        assert_eq!(v.motion, Motion::Arrived);
        assert_eq!(v.travel_time_s(), Some(0.0));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in RunMode::ALL {
            assert_eq!(m.as_str().parse::<RunMode>().unwrap(), m);
        }
        assert_eq!("auto".parse::<RunMode>().unwrap(), RunMode::AutoPreempt);
        assert!("fast".parse::<RunMode>().is_err());
    }
}
