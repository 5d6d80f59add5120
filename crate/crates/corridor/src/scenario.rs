//! Scenario file format.
//!
//! One self-contained JSON document. Durations are seconds; unknown fields
//! are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use corridor_core::control_room::OperatorAction;
use corridor_core::device::SendMode;
use corridor_core::ids::{AmbulanceId, ControllerId, EdgeId, NodeId, SmsAddress};
use corridor_core::modem::NetworkConfig;
use corridor_core::roadnet::{Edge, RoadGraph};
use corridor_core::signals::{Phase, PhasePlan};
use corridor_core::sim::{AmbulanceSpec, RunMode, Scenario, ScheduledAction, SignalSpec, SimConfig};
use corridor_core::time::{Epoch, SimTime, UtcSeconds};
use corridor_core::LatLon;
use serde::{Deserialize, Serialize};

use crate::LoadError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub graph: GraphFile,
    pub ambulances: Vec<AmbulanceFile>,
    #[serde(default)]
    pub sim: SimFile,
    pub control_room: ControlRoomFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operator_actions: Vec<ActionFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub nodes: Vec<NodeFile>,
    pub edges: Vec<EdgeFile>,
    pub hospitals: Vec<HospitalFile>,
    #[serde(default)]
    pub signals: Vec<SignalFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub id: NodeId,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFile {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    /// Great-circle distance between the endpoints when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HospitalFile {
    pub node: NodeId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFile {
    pub green: Vec<EdgeId>,
    pub green_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalFile {
    pub id: ControllerId,
    pub node: NodeId,
    pub phases: Vec<PhaseFile>,
    pub yellow_s: f64,
    pub all_red_s: f64,
    #[serde(default)]
    pub offset_s: f64,
    /// Derived from phase co-membership when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflicts: Option<Vec<(EdgeId, EdgeId)>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_queue: BTreeMap<EdgeId, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbulanceFile {
    pub id: AmbulanceId,
    pub start: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hospital: Option<NodeId>,
    pub phone: SmsAddress,
    #[serde(default)]
    pub depart_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmsFile {
    pub latency_min_s: f64,
    pub latency_max_s: f64,
    pub loss_probability: f64,
}

impl Default for SmsFile {
    fn default() -> Self {
        Self { latency_min_s: 0.2, latency_max_s: 0.8, loss_probability: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimFile {
    pub seed: u64,
    pub mode: RunMode,
    pub dt_s: f64,
    pub horizon_s: f64,
    pub sms: SmsFile,
    pub queue_discharge_s: f64,
    pub default_queue: u32,
    pub epoch: String,
    pub send_interval_s: f64,
    pub send_mode: SendMode,
    pub modem_tx_s: f64,
}

impl Default for SimFile {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: RunMode::AutoPreempt,
            dt_s: 0.1,
            horizon_s: 1800.0,
            sms: SmsFile::default(),
            queue_discharge_s: 2.0,
            default_queue: 0,
            epoch: "2020-01-01T00:00:00Z".into(),
            send_interval_s: 1.0,
            send_mode: SendMode::Continuous,
            modem_tx_s: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlRoomFile {
    pub number: SmsAddress,
    pub hospital_number: SmsAddress,
    #[serde(default = "default_lead")]
    pub lead_time_s: f64,
    #[serde(default = "default_margin")]
    pub passage_margin_s: f64,
}

fn default_lead() -> f64 {
    20.0
}

fn default_margin() -> f64 {
    10.0
}

/// Unknown-field checking is not available through the flattened action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionFile {
    pub at_s: f64,
    pub operator: String,
    #[serde(flatten)]
    pub action: OperatorAction,
}

fn ms(x: f64, field: &str) -> Result<u64, LoadError> {
    if !x.is_finite() || x < 0.0 {
        return Err(LoadError::Invalid(format!("{field} must be a finite non-negative number of seconds")));
    }
    Ok((x * 1000.0).round() as u64)
}

fn positive_ms(x: f64, field: &str) -> Result<u64, LoadError> {
    match ms(x, field)? {
        0 => Err(LoadError::Invalid(format!("{field} must be positive"))),
        v => Ok(v),
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        serde_json::from_str(text).map_err(|e| LoadError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }

    pub fn build_graph(&self) -> Result<RoadGraph, LoadError> {
        let g = &self.graph;
        let mut b = RoadGraph::builder();
        let mut pos = BTreeMap::new();
        for n in &g.nodes {
            let p = LatLon::new(n.lat, n.lon);
            pos.insert(n.id, p);
            b = b.node(n.id, p);
        }
        for e in &g.edges {
            let length_m = match e.length_m {
                Some(l) => l,
                None => match (pos.get(&e.from), pos.get(&e.to)) {
                    (Some(a), Some(c)) => a.distance_m(c),
                    // The builder reports the unknown endpoint.
                    _ => 1.0,
                },
            };
            b = b.edge(Edge { id: e.id, from: e.from, to: e.to, length_m, speed_mps: e.speed_mps });
        }
        for s in &g.signals {
            b = b.intersection(s.node, s.id.clone());
        }
        for h in &g.hospitals {
            b = b.hospital(h.node, &h.name);
        }
        b.build().map_err(|e| LoadError::Invalid(format!("graph: {e}")))
    }

    /// Validates and converts into the engine's scenario.
    pub fn to_scenario(&self) -> Result<Scenario, LoadError> {
        let graph = self.build_graph()?;
        let mut signals = Vec::new();
        for s in &self.graph.signals {
            let phases = s
                .phases
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Ok(Phase {
                        green: p.green.iter().copied().collect(),
                        green_ms: positive_ms(p.green_s, &format!("signal {} phase {i} green_s", s.id))?,
                    })
                })
                .collect::<Result<Vec<_>, LoadError>>()?;
            let plan = PhasePlan::new(
                phases,
                positive_ms(s.yellow_s, "yellow_s")?,
                positive_ms(s.all_red_s, "all_red_s")?,
                s.conflicts.clone(),
            )
            .map_err(|e| LoadError::Invalid(format!("signal {}: {e}", s.id)))?;
            signals.push(SignalSpec {
                id: s.id.clone(),
                node: s.node,
                plan,
                offset_ms: ms(s.offset_s, "offset_s")?,
                initial_queue: s.initial_queue.clone(),
            });
        }
        let ambulances = self
            .ambulances
            .iter()
            .map(|a| {
                Ok(AmbulanceSpec {
                    id: a.id.clone(),
                    start: a.start,
                    hospital: a.hospital,
                    phone: a.phone.clone(),
                    depart: SimTime(ms(a.depart_s, "depart_s")?),
                })
            })
            .collect::<Result<Vec<_>, LoadError>>()?;
        let sim = &self.sim;
        let epoch = UtcSeconds::parse_iso8601(&sim.epoch)
            .ok_or_else(|| LoadError::Invalid(format!("epoch {:?} is not YYYY-MM-DDTHH:MM:SSZ", sim.epoch)))?;
        if !(0.0..=1.0).contains(&sim.sms.loss_probability) {
            return Err(LoadError::Invalid("sms.loss_probability must lie in [0, 1]".into()));
        }
        let config = SimConfig {
            dt_ms: positive_ms(sim.dt_s, "dt_s")?,
            horizon: SimTime(positive_ms(sim.horizon_s, "horizon_s")?),
            seed: sim.seed,
            mode: sim.mode,
            network: NetworkConfig {
                latency_min: Duration::from_millis(ms(sim.sms.latency_min_s, "sms.latency_min_s")?),
                latency_max: Duration::from_millis(ms(sim.sms.latency_max_s, "sms.latency_max_s")?),
                loss_probability: sim.sms.loss_probability,
                seed: sim.seed,
            },
            discharge_ms: ms(sim.queue_discharge_s, "queue_discharge_s")?,
            default_queue: sim.default_queue,
            epoch: Epoch(epoch),
            send_interval: Duration::from_millis(positive_ms(sim.send_interval_s, "send_interval_s")?),
            send_mode: sim.send_mode,
            modem_tx_time: Duration::from_millis(ms(sim.modem_tx_s, "modem_tx_s")?),
            lead_time: Duration::from_millis(ms(self.control_room.lead_time_s, "lead_time_s")?),
            passage_margin: Duration::from_millis(ms(self.control_room.passage_margin_s, "passage_margin_s")?),
        };
        let operator_actions = self
            .operator_actions
            .iter()
            .map(|a| {
                Ok(ScheduledAction {
                    at: SimTime(ms(a.at_s, "operator_actions.at_s")?),
                    operator: a.operator.clone(),
                    action: a.action.clone(),
                })
            })
            .collect::<Result<Vec<_>, LoadError>>()?;
        let scenario = Scenario {
            graph,
            signals,
            ambulances,
            control_room_number: self.control_room.number.clone(),
            hospital_number: self.control_room.hospital_number.clone(),
            operator_actions,
            config,
        };
        // Surface engine-level validation (signal placement, routes) now.
        corridor_core::sim::Sim::new(scenario.clone()).map_err(|e| LoadError::Invalid(e.to_string()))?;
        Ok(scenario)
    }
}
