//! Traffic control room.
//!
//! Location texts from ambulances become tracks. The first fix of a track
//! fixes its destination (the nearest hospital unless one is pinned) and
//! its route. Every later fix re-plans the corridor: one entry per signal
//! still ahead, activated `lead_time` before the free-flow ETA and released
//! once the ambulance has passed, or `passage_margin` after the ETA if no
//! fix says so.
//!
//! Everything the room does is appended to its [`EventLog`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::device::parse_body;
use crate::geo::{round6, LatLon};
use crate::ids::{AmbulanceId, ControllerId, EdgeId, NodeId, SmsAddress};
use crate::modem::SmsEnvelope;
use crate::roadnet::{RoadGraph, RoadnetError, Route};
use crate::signals::{ControllerSnapshot, Holder, Mode, PreemptRequest};
use crate::time::{SimTime, UtcSeconds};

/// A track has arrived once a fix lies this close to its hospital node.
/// A node counts as passed once a fix lies this far beyond it.
pub const ARRIVAL_RADIUS_M: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlRoomError {
    #[error("message rejected: {0}")]
    ParseReject(String),
    #[error("track {0} has no fix yet")]
    NoFix(AmbulanceId),
    #[error("unknown ambulance {0}")]
    UnknownAmbulance(AmbulanceId),
    #[error(transparent)]
    Routing(#[from] RoadnetError),
}

/// Why an operator command was refused.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Rejected {
    #[error("unknown controller {0}")]
    UnknownController(ControllerId),
    #[error("approach {1} is not part of controller {0}")]
    UnknownApproach(ControllerId, EdgeId),
    #[error("controller {0} holds no preemption")]
    NothingToRelease(ControllerId),
    #[error("unknown ambulance {0}")]
    UnknownAmbulance(AmbulanceId),
    #[error("node {0} is not a hospital")]
    UnknownHospital(NodeId),
    #[error("operator commands are disabled in this mode")]
    Disabled,
}

impl Rejected {
    /// HTTP status the operator API answers with.
    pub fn http_status(&self) -> u16 {
        match self {
            Rejected::UnknownApproach(..) | Rejected::Disabled => 409,
            _ => 404,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRoomConfig {
    pub control_room_number: SmsAddress,
    pub hospital_number: SmsAddress,
    pub lead_time: Duration,
    pub passage_margin: Duration,
    /// How often devices are expected to report.
    pub expected_send_interval: Duration,
    /// Automatic corridor planning; off in baseline and operator-only runs.
    pub automatic: bool,
    /// Operator commands accepted.
    pub operator_enabled: bool,
}

impl ControlRoomConfig {
    pub fn new(control_room_number: SmsAddress, hospital_number: SmsAddress) -> Self {
        Self {
            control_room_number,
            hospital_number,
            lead_time: Duration::from_secs(20),
            passage_margin: Duration::from_secs(10),
            expected_send_interval: Duration::from_secs(1),
            automatic: true,
            operator_enabled: true,
        }
    }

    pub fn stale_after(&self) -> Duration {
        self.expected_send_interval * 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackStatus {
    Active,
    Arrived,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFix {
    pub time: UtcSeconds,
    pub received_at: SimTime,
    pub position: LatLon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbulanceTrack {
    pub ambulance_id: AmbulanceId,
    pub fixes: Vec<TrackFix>,
    pub matched_node: Option<NodeId>,
    pub destination: Option<NodeId>,
    pub route: Option<Route>,
    /// Furthest route index the ambulance has been matched to.
    pub progress: usize,
    /// Route nodes before this index are behind the ambulance.
    pub cleared: usize,
    /// Furthest free-flow offset along the route the fixes place it at.
    pub along_s: f64,
    pub status: TrackStatus,
}

impl AmbulanceTrack {
    fn new(ambulance_id: AmbulanceId) -> Self {
        Self {
            ambulance_id,
            fixes: Vec::new(),
            matched_node: None,
            destination: None,
            route: None,
            progress: 0,
            cleared: 0,
            along_s: 0.0,
            status: TrackStatus::Active,
        }
    }

    pub fn latest(&self) -> Option<&TrackFix> {
        self.fixes.last()
    }

    /// Remaining free-flow time to the destination from the matched position.
    pub fn remaining_s(&self) -> Option<f64> {
        let r = self.route.as_ref()?;
        Some((r.total_time_s - self.along_s).max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryState {
    Pending,
    Sent,
    Released,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorEntry {
    pub controller: ControllerId,
    pub node: NodeId,
    pub route_index: usize,
    pub approach: EdgeId,
    pub eta: SimTime,
    pub activate_at: SimTime,
    pub release_by: SimTime,
    pub state: EntryState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorPlan {
    pub ambulance_id: AmbulanceId,
    pub entries: Vec<CorridorEntry>,
}

/// Corridor for the signals at or after the track's matched position.
pub fn plan_corridor(
    track: &AmbulanceTrack,
    graph: &RoadGraph,
    lead_time: Duration,
    passage_margin: Duration,
    now: SimTime,
) -> CorridorPlan {
    let mut entries = Vec::new();
    if let Some(route) = &track.route {
        for sig in graph.route_intersections(route) {
            if sig.index < track.cleared {
                continue;
            }
            let ahead_ms = libm::round((sig.offset_s - track.along_s).max(0.0) * 1000.0) as u64;
            let eta = SimTime(now.0 + ahead_ms);
            entries.push(CorridorEntry {
                controller: sig.controller,
                node: sig.node,
                route_index: sig.index,
                approach: sig.approach,
                eta,
                activate_at: eta.saturating_sub(lead_time),
                release_by: eta + passage_margin,
                state: EntryState::Pending,
            });
        }
    }
    CorridorPlan {
        ambulance_id: track.ambulance_id.clone(),
        entries,
    }
}

/// Folds a fix matched to `node` at `dist` metres into the track's route
/// position.
///
/// Matching is to nodes only. The fix lies on the route edge before or after
/// the node, whichever it deviates from least, and `dist` over that edge's
/// span is the fraction of its free-flow time covered or still to go.
fn advance(track: &mut AmbulanceTrack, graph: &RoadGraph, fix: LatLon, node: NodeId, dist: f64) {
    let Some(route) = &track.route else { return };
    let Some(j) = route.position_of(node) else { return };
    let last = route.node_sequence.len() - 1;
    let at = |k: usize| graph.node(route.node_sequence[k]).unwrap_or(fix);
    let span = |k: usize| at(k).distance_m(&at(k + 1));
    // Detour over the straight edge from node k to k + 1.
    let excess = |k: usize, other: usize| fix.distance_m(&at(other)) + dist - span(k);
    let leaving = match j {
        _ if j == last => false,
        0 => true,
        _ => excess(j, j + 1) <= excess(j - 1, j - 1),
    };
    let offs = &route.arrival_offsets_s;
    let along = if j == 0 && j == last {
        0.0
    } else {
        let k = if leaving { j } else { j - 1 };
        let len = span(k);
        let frac = if len > 0.0 { (dist / len).min(1.0) } else { 0.0 };
        let covered = (offs[k + 1] - offs[k]) * frac;
        if leaving {
            offs[j] + covered
        } else {
            offs[j] - covered
        }
    };
    track.progress = track.progress.max(j);
    track.along_s = track.along_s.max(along);
    let beyond = leaving && dist > ARRIVAL_RADIUS_M;
    track.cleared = track.cleared.max(j + usize::from(beyond));
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerCommand {
    Preempt {
        controller: ControllerId,
        request: PreemptRequest,
    },
    Release {
        controller: ControllerId,
        holder: Holder,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum OperatorAction {
    Preempt { controller: ControllerId, approach: EdgeId },
    Release { controller: ControllerId },
    PinRoute { ambulance: AmbulanceId, hospital: NodeId },
}

/// What the operator layer needs to know about live controllers.
pub trait SignalView {
    fn approaches(&self, controller: &ControllerId) -> Option<BTreeSet<EdgeId>>;
    fn active_holder(&self, controller: &ControllerId) -> Option<Holder>;
}

// ---- event log -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipient {
    ControlRoom,
    Hospital,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestOutcome {
    Accepted,
    Stale,
    Rejected,
    Logged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseReason {
    Passed,
    Timeout,
    Arrived,
    Operator,
    Rerouted,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    MsgReceived {
        from: String,
        to: String,
        recipient: Recipient,
        body: String,
        outcome: IngestOutcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ambulance: Option<AmbulanceId>,
    },
    TrackUpdated {
        ambulance: AmbulanceId,
        lat: f64,
        lon: f64,
        fix_time: String,
        matched_node: NodeId,
        distance_m: f64,
        status: TrackStatus,
    },
    RouteSet {
        ambulance: AmbulanceId,
        hospital: NodeId,
        nodes: Vec<NodeId>,
        total_time_s: f64,
        pinned: bool,
    },
    PreemptSent {
        controller: ControllerId,
        holder: Holder,
        approach: EdgeId,
        eta_ms: u64,
    },
    ReleaseSent {
        controller: ControllerId,
        holder: Holder,
        reason: ReleaseReason,
    },
    SignalChanged {
        controller: ControllerId,
        mode: Mode,
        green: Vec<EdgeId>,
        yellow: Vec<EdgeId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        active: Option<Holder>,
    },
    Arrived {
        ambulance: AmbulanceId,
        hospital: NodeId,
    },
    OperatorAction {
        operator: String,
        action: OperatorAction,
        applied: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::MsgReceived { .. } => "MSG_RECEIVED",
            Event::TrackUpdated { .. } => "TRACK_UPDATED",
            Event::RouteSet { .. } => "ROUTE_SET",
            Event::PreemptSent { .. } => "PREEMPT_SENT",
            Event::ReleaseSent { .. } => "RELEASE_SENT",
            Event::SignalChanged { .. } => "SIGNAL_CHANGED",
            Event::Arrived { .. } => "ARRIVED",
            Event::OperatorAction { .. } => "OPERATOR_ACTION",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Append-only, gapless.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn append(&mut self, t: SimTime, event: Event) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(EventRecord {
            seq,
            t_ms: t.0,
            event,
        });
        seq
    }

    /// Records with `seq >= from`, in order.
    pub fn read_from(&self, from: u64) -> &[EventRecord] {
        let start = (from as usize).min(self.records.len());
        &self.records[start..]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }
}

// ---- the room ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub received: u64,
    pub accepted: u64,
    pub stale: u64,
    pub rejected: u64,
    pub hospital: u64,
}

/// Summary row served to operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub id: AmbulanceId,
    pub last_fix: Option<LatLon>,
    pub last_fix_time: Option<String>,
    pub matched_node: Option<NodeId>,
    pub status: TrackStatus,
    pub destination: Option<NodeId>,
    pub eta_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ControlRoom {
    graph: Arc<RoadGraph>,
    cfg: ControlRoomConfig,
    tracks: BTreeMap<AmbulanceId, AmbulanceTrack>,
    plans: BTreeMap<AmbulanceId, CorridorPlan>,
    pins: BTreeMap<AmbulanceId, NodeId>,
    log: EventLog,
    stats: IngestStats,
    operator_holds: BTreeSet<(ControllerId, String)>,
}

impl ControlRoom {
    pub fn new(graph: Arc<RoadGraph>, cfg: ControlRoomConfig) -> Self {
        Self {
            graph,
            cfg,
            tracks: BTreeMap::new(),
            plans: BTreeMap::new(),
            pins: BTreeMap::new(),
            log: EventLog::default(),
            stats: IngestStats::default(),
            operator_holds: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &ControlRoomConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn append_event(&mut self, t: SimTime, event: Event) -> u64 {
        self.log.append(t, event)
    }

    pub fn read_events(&self, from_seq: u64) -> &[EventRecord] {
        self.log.read_from(from_seq)
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    pub fn track(&self, id: &AmbulanceId) -> Option<&AmbulanceTrack> {
        self.tracks.get(id)
    }

    pub fn tracks(&self) -> impl Iterator<Item = &AmbulanceTrack> {
        self.tracks.values()
    }

    pub fn plan(&self, id: &AmbulanceId) -> Option<&CorridorPlan> {
        self.plans.get(id)
    }

    /// Destination chosen before the first fix, e.g. by the driver.
    pub fn pin_destination(&mut self, id: AmbulanceId, hospital: NodeId) {
        self.pins.insert(id, hospital);
    }

    pub fn summaries(&self) -> Vec<TrackSummary> {
        self.tracks
            .values()
            .map(|t| TrackSummary {
                id: t.ambulance_id.clone(),
                last_fix: t.latest().map(|f| f.position),
                last_fix_time: t.latest().map(|f| f.time.to_iso8601()),
                matched_node: t.matched_node,
                status: t.status,
                destination: t.destination,
                eta_s: t.remaining_s(),
            })
            .collect()
    }

    /// Holds (automatic or operator) that have been sent and not released.
    pub fn outstanding_holds(&self) -> usize {
        let auto = self
            .plans
            .values()
            .flat_map(|p| &p.entries)
            .filter(|e| e.state == EntryState::Sent)
            .count();
        auto + self.operator_holds.len()
    }

    /// Routes a delivered envelope to tracking or the hospital log.
    pub fn receive(&mut self, env: &SmsEnvelope, now: SimTime) -> Vec<ControllerCommand> {
        let recipient = if env.to == self.cfg.control_room_number {
            Recipient::ControlRoom
        } else if env.to == self.cfg.hospital_number {
            Recipient::Hospital
        } else {
            Recipient::Unknown
        };
        self.stats.received += 1;
        match recipient {
            Recipient::ControlRoom => {
                let (outcome, ambulance, cmds) = match self.ingest(&env.body, now) {
                    Ok((outcome, id, cmds)) => (outcome, Some(id), cmds),
                    Err(_) => (IngestOutcome::Rejected, None, Vec::new()),
                };
                self.log_message(env, recipient, outcome, ambulance, now);
                self.emit(cmds, now)
            }
            Recipient::Hospital => {
                self.stats.hospital += 1;
                let ambulance = parse_body(&env.body).map(|b| b.ambulance_id);
                self.log_message(env, recipient, IngestOutcome::Logged, ambulance, now);
                Vec::new()
            }
            Recipient::Unknown => {
                self.stats.rejected += 1;
                self.log_message(env, recipient, IngestOutcome::Rejected, None, now);
                Vec::new()
            }
        }
    }

    fn log_message(
        &mut self,
        env: &SmsEnvelope,
        recipient: Recipient,
        outcome: IngestOutcome,
        ambulance: Option<AmbulanceId>,
        now: SimTime,
    ) {
        self.log.append(
            now,
            Event::MsgReceived {
                from: env.from.to_string(),
                to: env.to.to_string(),
                recipient,
                body: env.body.clone(),
                outcome,
                ambulance,
            },
        );
    }

    /// Parses a location text and folds it into its track.
    ///
    /// The returned events (route, track, arrival, releases) are already in
    /// the log; commands still have to be delivered to the controllers.
    pub fn ingest_message(
        &mut self,
        body: &str,
        received_at: SimTime,
    ) -> Result<(IngestOutcome, Vec<ControllerCommand>), ControlRoomError> {
        let (outcome, _, cmds) = self.ingest(body, received_at)?;
        Ok((outcome, self.emit(cmds, received_at)))
    }

    fn ingest(
        &mut self,
        body: &str,
        now: SimTime,
    ) -> Result<(IngestOutcome, AmbulanceId, Vec<Pending>), ControlRoomError> {
        let Some(parsed) = parse_body(body) else {
            self.stats.rejected += 1;
            return Err(ControlRoomError::ParseReject(body.to_string()));
        };
        let id = parsed.ambulance_id.clone();
        let track = self
            .tracks
            .entry(id.clone())
            .or_insert_with(|| AmbulanceTrack::new(id.clone()));
        if track.latest().is_some_and(|f| f.time >= parsed.timestamp) {
            self.stats.stale += 1;
            return Ok((IngestOutcome::Stale, id, Vec::new()));
        }
        self.stats.accepted += 1;
        track.fixes.push(TrackFix {
            time: parsed.timestamp,
            received_at: now,
            position: parsed.position,
        });
        let (node, dist) = self.graph.map_match(parsed.position)?;
        track.matched_node = Some(node);
        if track.status == TrackStatus::Stale {
            track.status = TrackStatus::Active;
        }
        advance(track, &self.graph, parsed.position, node, dist);
        let status = track.status;
        self.log.append(
            now,
            Event::TrackUpdated {
                ambulance: id.clone(),
                lat: round6(parsed.position.lat),
                lon: round6(parsed.position.lon),
                fix_time: parsed.timestamp.to_iso8601(),
                matched_node: node,
                distance_m: libm::round(dist * 100.0) / 100.0,
                status,
            },
        );
        if self.tracks[&id].route.is_none() {
            let pin = self.pins.get(&id).copied();
            // Unroutable positions stay tracked without a corridor.
            let _ = self.assign_route(&id, pin, now);
        }
        let mut out = Vec::new();
        let track = &self.tracks[&id];
        if track.status != TrackStatus::Arrived && track.destination == Some(node) && dist <= ARRIVAL_RADIUS_M {
            out.extend(self.arrive(&id, now));
        } else if track.status != TrackStatus::Arrived {
            self.replan(&id, now);
        }
        Ok((IngestOutcome::Accepted, id, out))
    }

    /// Routes the track from its latest matched node.
    pub fn assign_route(
        &mut self,
        id: &AmbulanceId,
        pinned: Option<NodeId>,
        now: SimTime,
    ) -> Result<Route, ControlRoomError> {
        let track = self
            .tracks
            .get(id)
            .ok_or_else(|| ControlRoomError::UnknownAmbulance(id.clone()))?;
        let from = track.matched_node.ok_or_else(|| ControlRoomError::NoFix(id.clone()))?;
        let (hospital, route) = match pinned {
            Some(h) => (h, self.graph.shortest_path(from, h)?),
            None => self.graph.nearest_hospital(from)?,
        };
        let track = self.tracks.get_mut(id).expect("checked above");
        track.destination = Some(hospital);
        track.route = Some(route.clone());
        track.progress = 0;
        track.cleared = 0;
        track.along_s = 0.0;
        if let Some(fix) = track.latest().map(|f| f.position) {
            let (node, dist) = self.graph.map_match(fix)?;
            advance(track, &self.graph, fix, node, dist);
        }
        self.plans.remove(id);
        self.log.append(
            now,
            Event::RouteSet {
                ambulance: id.clone(),
                hospital,
                nodes: route.node_sequence.clone(),
                total_time_s: route.total_time_s,
                pinned: pinned.is_some(),
            },
        );
        Ok(route)
    }

    fn replan(&mut self, id: &AmbulanceId, now: SimTime) {
        let Some(track) = self.tracks.get(id) else { return };
        let fresh = plan_corridor(track, &self.graph, self.cfg.lead_time, self.cfg.passage_margin, now);
        let cleared = track.cleared;
        let plan = self.plans.entry(id.clone()).or_insert_with(|| CorridorPlan {
            ambulance_id: id.clone(),
            entries: Vec::new(),
        });
        for e in plan.entries.iter_mut() {
            if e.route_index < cleared && e.state == EntryState::Pending {
                e.state = EntryState::Skipped;
            }
        }
        for f in fresh.entries {
            match plan.entries.iter_mut().find(|e| e.route_index == f.route_index) {
                Some(e) => {
                    e.eta = f.eta;
                    e.release_by = f.release_by;
                    match e.state {
                        EntryState::Sent => {}
                        // Released early (timeout, operator) but still ahead: ask again.
                        EntryState::Pending | EntryState::Released | EntryState::Skipped => {
                            e.activate_at = f.activate_at;
                            e.state = EntryState::Pending;
                        }
                    }
                }
                None => plan.entries.push(f),
            }
        }
        plan.entries.sort_by_key(|e| (e.activate_at, e.route_index));
    }

    fn arrive(&mut self, id: &AmbulanceId, now: SimTime) -> Vec<Pending> {
        let track = self.tracks.get_mut(id).expect("caller checked");
        track.status = TrackStatus::Arrived;
        let hospital = track.destination.expect("arrival implies a destination");
        self.log.append(
            now,
            Event::Arrived {
                ambulance: id.clone(),
                hospital,
            },
        );
        let mut out = Vec::new();
        if let Some(plan) = self.plans.get_mut(id) {
            for e in plan.entries.iter_mut() {
                match e.state {
                    EntryState::Sent => {
                        e.state = EntryState::Released;
                        out.push(Pending::Release(e.controller.clone(), Holder::Ambulance(id.clone()), ReleaseReason::Arrived));
                    }
                    EntryState::Pending => e.state = EntryState::Skipped,
                    _ => {}
                }
            }
        }
        out
    }

    /// Issues due preempt and release commands.
    ///
    /// Releases come first; preempts issued in the same tick are ordered by
    /// their priority key so that a controller receiving several sees the
    /// best one first.
    pub fn dispatch(&mut self, now: SimTime) -> Vec<ControllerCommand> {
        self.mark_stale(now);
        let mut pending = Vec::new();
        for (id, plan) in self.plans.iter_mut() {
            let cleared = self.tracks.get(id).map_or(0, |t| t.cleared);
            for e in plan.entries.iter_mut() {
                let passed = cleared > e.route_index;
                match e.state {
                    EntryState::Sent if passed || now >= e.release_by => {
                        e.state = EntryState::Released;
                        let reason = if passed { ReleaseReason::Passed } else { ReleaseReason::Timeout };
                        pending.push(Pending::Release(e.controller.clone(), Holder::Ambulance(id.clone()), reason));
                    }
                    EntryState::Pending if passed => e.state = EntryState::Skipped,
                    EntryState::Pending if self.cfg.automatic && now >= e.activate_at => {
                        e.state = EntryState::Sent;
                        pending.push(Pending::Preempt(
                            e.controller.clone(),
                            PreemptRequest {
                                holder: Holder::Ambulance(id.clone()),
                                approach: e.approach,
                                requested_at: now,
                                eta: e.eta,
                            },
                        ));
                    }
                    _ => {}
                }
            }
        }
        pending.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        self.emit(pending, now)
    }

    fn mark_stale(&mut self, now: SimTime) {
        let stale_after = self.cfg.stale_after();
        for t in self.tracks.values_mut() {
            if t.status == TrackStatus::Active
                && t.latest().is_some_and(|f| now.since(f.received_at) >= stale_after)
            {
                t.status = TrackStatus::Stale;
                let f = t.latest().expect("checked");
                self.log.append(
                    now,
                    Event::TrackUpdated {
                        ambulance: t.ambulance_id.clone(),
                        lat: round6(f.position.lat),
                        lon: round6(f.position.lon),
                        fix_time: f.time.to_iso8601(),
                        matched_node: t.matched_node.expect("a fix implies a match"),
                        distance_m: 0.0,
                        status: TrackStatus::Stale,
                    },
                );
            }
        }
    }

    fn emit(&mut self, pending: Vec<Pending>, now: SimTime) -> Vec<ControllerCommand> {
        pending
            .into_iter()
            .map(|p| match p {
                Pending::Preempt(controller, request) => {
                    self.log.append(
                        now,
                        Event::PreemptSent {
                            controller: controller.clone(),
                            holder: request.holder.clone(),
                            approach: request.approach,
                            eta_ms: request.eta.0,
                        },
                    );
                    ControllerCommand::Preempt { controller, request }
                }
                Pending::Release(controller, holder, reason) => {
                    self.log.append(
                        now,
                        Event::ReleaseSent {
                            controller: controller.clone(),
                            holder: holder.clone(),
                            reason,
                        },
                    );
                    ControllerCommand::Release { controller, holder }
                }
            })
            .collect()
    }

    /// Applies a manual action. Both outcomes are logged.
    pub fn operator_command(
        &mut self,
        action: OperatorAction,
        operator_id: &str,
        signals: &dyn SignalView,
        now: SimTime,
    ) -> Result<Vec<ControllerCommand>, Rejected> {
        let result = self.apply_operator(&action, operator_id, signals, now);
        let (applied, reason) = match &result {
            Ok(_) => (true, None),
            Err(e) => (false, Some(e.to_string())),
        };
        self.log.append(
            now,
            Event::OperatorAction {
                operator: operator_id.to_string(),
                action,
                applied,
                reason,
            },
        );
        result.map(|p| self.emit(p, now))
    }

    fn apply_operator(
        &mut self,
        action: &OperatorAction,
        operator_id: &str,
        signals: &dyn SignalView,
        now: SimTime,
    ) -> Result<Vec<Pending>, Rejected> {
        match action {
            OperatorAction::Preempt { controller, approach } => {
                if !self.cfg.operator_enabled {
                    return Err(Rejected::Disabled);
                }
                let approaches = signals
                    .approaches(controller)
                    .ok_or_else(|| Rejected::UnknownController(controller.clone()))?;
                if !approaches.contains(approach) {
                    return Err(Rejected::UnknownApproach(controller.clone(), *approach));
                }
                self.operator_holds.insert((controller.clone(), operator_id.to_string()));
                Ok(alloc::vec![Pending::Preempt(
                    controller.clone(),
                    PreemptRequest {
                        holder: Holder::Operator(operator_id.to_string()),
                        approach: *approach,
                        requested_at: now,
                        eta: now,
                    },
                )])
            }
            OperatorAction::Release { controller } => {
                if signals.approaches(controller).is_none() {
                    return Err(Rejected::UnknownController(controller.clone()));
                }
                let holder = signals
                    .active_holder(controller)
                    .ok_or_else(|| Rejected::NothingToRelease(controller.clone()))?;
                match &holder {
                    Holder::Operator(op) => {
                        self.operator_holds.remove(&(controller.clone(), op.clone()));
                    }
                    Holder::Ambulance(a) => {
                        if let Some(plan) = self.plans.get_mut(a) {
                            for e in plan.entries.iter_mut() {
                                if &e.controller == controller && e.state == EntryState::Sent {
                                    e.state = EntryState::Released;
                                }
                            }
                        }
                    }
                }
                Ok(alloc::vec![Pending::Release(controller.clone(), holder, ReleaseReason::Operator)])
            }
            OperatorAction::PinRoute { ambulance, hospital } => {
                if !self.graph.is_hospital(*hospital) {
                    return Err(Rejected::UnknownHospital(*hospital));
                }
                if !self.tracks.contains_key(ambulance) && !self.pins.contains_key(ambulance) {
                    return Err(Rejected::UnknownAmbulance(ambulance.clone()));
                }
                self.pins.insert(ambulance.clone(), *hospital);
                let mut out = Vec::new();
                if let Some(plan) = self.plans.get_mut(ambulance) {
                    for e in plan.entries.iter_mut() {
                        if e.state == EntryState::Sent {
                            e.state = EntryState::Released;
                            out.push(Pending::Release(
                                e.controller.clone(),
                                Holder::Ambulance(ambulance.clone()),
                                ReleaseReason::Rerouted,
                            ));
                        }
                    }
                }
                let has_fix = self.tracks.get(ambulance).is_some_and(|t| t.matched_node.is_some());
                if has_fix {
                    if let Some(t) = self.tracks.get_mut(ambulance) {
                        t.status = match t.status {
                            TrackStatus::Arrived => TrackStatus::Active,
                            s => s,
                        };
                    }
                    if self.assign_route(ambulance, Some(*hospital), now).is_ok() {
                        self.replan(ambulance, now);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Releases every hold still outstanding, e.g. when a run ends.
    pub fn shutdown(&mut self, now: SimTime) -> Vec<ControllerCommand> {
        let mut pending = Vec::new();
        for (id, plan) in self.plans.iter_mut() {
            for e in plan.entries.iter_mut() {
                if e.state == EntryState::Sent {
                    e.state = EntryState::Released;
                    pending.push(Pending::Release(e.controller.clone(), Holder::Ambulance(id.clone()), ReleaseReason::Shutdown));
                }
            }
        }
        for (c, op) in core::mem::take(&mut self.operator_holds) {
            pending.push(Pending::Release(c, Holder::Operator(op), ReleaseReason::Shutdown));
        }
        self.emit(pending, now)
    }

    /// Records a controller whose indications changed.
    pub fn log_signal(&mut self, now: SimTime, snap: &ControllerSnapshot) {
        self.log.append(
            now,
            Event::SignalChanged {
                controller: snap.id.clone(),
                mode: snap.mode,
                green: snap.green.clone(),
                yellow: snap.yellow.clone(),
                active: snap.active.clone(),
            },
        );
    }
}

#[derive(Debug, Clone)]
enum Pending {
    Preempt(ControllerId, PreemptRequest),
    Release(ControllerId, Holder, ReleaseReason),
}

impl Pending {
    fn order_key(&self) -> (u8, Option<crate::signals::PriorityKey>) {
        match self {
            Pending::Release(..) => (0, None),
            Pending::Preempt(_, r) => (1, Some(r.priority_key())),
        }
    }
}
