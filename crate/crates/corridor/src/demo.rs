//! Bundled demo city: a 4×4 grid with two hospitals and two ambulances.
//!
//! Nodes are numbered row-major from the north-west corner, 250 m apart.
//! Every node with three or more neighbours carries a two-phase signal
//! (north-south 30 s, east-west 30 s, yellow 3 s, all-red 1 s). Offsets are
//! staggered so that both ambulances meet at least one red without
//! preemption.

use std::collections::BTreeMap;

use corridor_core::ids::{AmbulanceId, ControllerId, EdgeId, NodeId, SmsAddress};
use corridor_core::sim::RunMode;

use crate::scenario::{
    AmbulanceFile, ControlRoomFile, EdgeFile, GraphFile, HospitalFile, NodeFile, PhaseFile,
    ScenarioFile, SignalFile, SimFile,
};

pub const ROWS: u32 = 4;
pub const COLS: u32 = 4;
pub const SPACING_M: f64 = 250.0;
pub const SPEED_MPS: f64 = 13.9;
const ORIGIN: (f64, f64) = (28.6139, 77.2090);
const M_PER_DEG_LAT: f64 = 111_194.926_644_558_73;

/// Signal offsets in seconds, indexed by node id.
const OFFSETS_S: [f64; 16] = [0.0, 5.0, 22.0, 0.0, 40.0, 12.0, 50.0, 30.0, 8.0, 26.0, 44.0, 60.0, 0.0, 17.0, 35.0, 0.0];

pub fn node_id(row: u32, col: u32) -> NodeId {
    NodeId(row * COLS + col)
}

fn neighbours(row: u32, col: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    if row > 0 {
        out.push((row - 1, col));
    }
    if col > 0 {
        out.push((row, col - 1));
    }
    if col + 1 < COLS {
        out.push((row, col + 1));
    }
    if row + 1 < ROWS {
        out.push((row + 1, col));
    }
    out
}

pub fn demo_scenario(seed: u64) -> ScenarioFile {
    let dlat = SPACING_M / M_PER_DEG_LAT;
    let dlon = dlat / ORIGIN.0.to_radians().cos();
    let mut nodes = Vec::new();
    for r in 0..ROWS {
        for c in 0..COLS {
            nodes.push(NodeFile {
                id: node_id(r, c),
                lat: round7(ORIGIN.0 - r as f64 * dlat),
                lon: round7(ORIGIN.1 + c as f64 * dlon),
            });
        }
    }
    let mut edges = Vec::new();
    let mut ns_in: BTreeMap<NodeId, Vec<EdgeId>> = BTreeMap::new();
    let mut ew_in: BTreeMap<NodeId, Vec<EdgeId>> = BTreeMap::new();
    for r in 0..ROWS {
        for c in 0..COLS {
            for (nr, nc) in neighbours(r, c) {
                let id = EdgeId(edges.len() as u32);
                let to = node_id(nr, nc);
                edges.push(EdgeFile { id, from: node_id(r, c), to, length_m: None, speed_mps: SPEED_MPS });
                if nr != r {
                    ns_in.entry(to).or_default().push(id);
                } else {
                    ew_in.entry(to).or_default().push(id);
                }
            }
        }
    }
    let mut signals = Vec::new();
    for r in 0..ROWS {
        for c in 0..COLS {
            if neighbours(r, c).len() < 3 {
                continue;
            }
            let n = node_id(r, c);
            let phases = [ns_in.get(&n), ew_in.get(&n)]
                .into_iter()
                .flatten()
                .map(|g| PhaseFile { green: g.clone(), green_s: 30.0 })
                .collect();
            signals.push(SignalFile {
                id: ControllerId::new(&format!("S{}", n.0)).expect("valid id"),
                node: n,
                phases,
                yellow_s: 3.0,
                all_red_s: 1.0,
                offset_s: OFFSETS_S[n.0 as usize],
                conflicts: None,
                initial_queue: BTreeMap::new(),
            });
        }
    }
    let addr = |s: &str| SmsAddress::new(s).expect("valid number");
    ScenarioFile {
        graph: GraphFile {
            nodes,
            edges,
            hospitals: vec![
                HospitalFile { node: node_id(3, 0), name: "St. Stephen's".into() },
                HospitalFile { node: node_id(3, 3), name: "City General".into() },
            ],
            signals,
        },
        ambulances: vec![
            AmbulanceFile {
                id: AmbulanceId::new("AMB1").expect("valid id"),
                start: node_id(0, 0),
                hospital: None,
                phone: addr("+919800000001"),
                depart_s: 0.0,
            },
            AmbulanceFile {
                id: AmbulanceId::new("AMB2").expect("valid id"),
                start: node_id(0, 2),
                hospital: None,
                phone: addr("+919800000002"),
                depart_s: 0.0,
            },
        ],
        sim: SimFile { seed, mode: RunMode::AutoPreempt, default_queue: 3, horizon_s: 900.0, ..SimFile::default() },
        control_room: ControlRoomFile {
            number: addr("+911123000100"),
            hospital_number: addr("+911123000200"),
            lead_time_s: 20.0,
            passage_margin_s: 10.0,
        },
        operator_actions: Vec::new(),
    }
}

fn round7(x: f64) -> f64 {
    (x * 1e7).round() / 1e7
}
