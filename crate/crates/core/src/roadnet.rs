//! Road graph, hospital registry, routing and map matching.
//!
//! Edge cost is free-flow travel time (`length_m / speed_mps`). Among
//! equal-cost paths the lexicographically smallest node sequence wins, so
//! every query has exactly one answer.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geo::LatLon;
use crate::ids::{ControllerId, EdgeId, NodeId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RoadnetError {
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("node {0} has invalid coordinates")]
    BadCoordinates(NodeId),
    #[error("duplicate edge {0}")]
    DuplicateEdge(EdgeId),
    #[error("edge {0} references unknown node {1}")]
    UnknownEndpoint(EdgeId, NodeId),
    #[error("edge {0} must have positive finite length and speed")]
    BadEdge(EdgeId),
    #[error("edge {0} is a self-loop")]
    SelfLoop(EdgeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is bound to more than one controller")]
    DuplicateIntersection(NodeId),
    #[error("controller {0} is bound to more than one node")]
    DuplicateController(ControllerId),
    #[error("no route")]
    Unreachable,
    #[error("no hospital in the graph")]
    NoHospital,
    #[error("no hospital reachable")]
    AllUnreachable,
    #[error("graph has no nodes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub speed_mps: f64,
}

impl Edge {
    pub fn free_flow_s(&self) -> f64 {
        self.length_m / self.speed_mps
    }
}

/// Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct RoadGraph {
    nodes: BTreeMap<NodeId, LatLon>,
    edges: BTreeMap<EdgeId, Edge>,
    outgoing: BTreeMap<NodeId, Vec<EdgeId>>,
    intersections: BTreeMap<NodeId, ControllerId>,
    controller_nodes: BTreeMap<ControllerId, NodeId>,
    hospitals: BTreeMap<NodeId, String>,
}

#[derive(Debug, Default)]
pub struct RoadGraphBuilder {
    graph: RoadGraph,
    error: Option<RoadnetError>,
}

impl RoadGraphBuilder {
    fn fail(&mut self, e: RoadnetError) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    pub fn node(mut self, id: NodeId, pos: LatLon) -> Self {
        if !pos.is_valid() {
            self.fail(RoadnetError::BadCoordinates(id));
        }
        if self.graph.nodes.insert(id, pos).is_some() {
            self.fail(RoadnetError::DuplicateNode(id));
        }
        self
    }

    pub fn edge(mut self, edge: Edge) -> Self {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(edge.length_m) || !ok(edge.speed_mps) {
            self.fail(RoadnetError::BadEdge(edge.id));
        }
        if edge.from == edge.to {
            self.fail(RoadnetError::SelfLoop(edge.id));
        }
        if self.graph.edges.insert(edge.id, edge.clone()).is_some() {
            self.fail(RoadnetError::DuplicateEdge(edge.id));
        }
        self
    }

    pub fn intersection(mut self, node: NodeId, controller: ControllerId) -> Self {
        if self.graph.intersections.insert(node, controller.clone()).is_some() {
            self.fail(RoadnetError::DuplicateIntersection(node));
        }
        if self.graph.controller_nodes.insert(controller.clone(), node).is_some() {
            self.fail(RoadnetError::DuplicateController(controller));
        }
        self
    }

    pub fn hospital(mut self, node: NodeId, name: &str) -> Self {
        self.graph.hospitals.insert(node, name.into());
        self
    }

    pub fn build(mut self) -> Result<RoadGraph, RoadnetError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let g = &mut self.graph;
        for e in g.edges.values() {
            for n in [e.from, e.to] {
                if !g.nodes.contains_key(&n) {
                    return Err(RoadnetError::UnknownEndpoint(e.id, n));
                }
            }
        }
        for n in g.intersections.keys().chain(g.hospitals.keys()) {
            if !g.nodes.contains_key(n) {
                return Err(RoadnetError::UnknownNode(*n));
            }
        }
        for e in g.edges.values() {
            g.outgoing.entry(e.from).or_default().push(e.id);
        }
        Ok(self.graph)
    }
}

/// A path with its free-flow timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub node_sequence: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    pub total_length_m: f64,
    pub total_time_s: f64,
    /// Free-flow arrival offset at each node; the first is 0.
    pub arrival_offsets_s: Vec<f64>,
}

impl Route {
    pub fn origin(&self) -> NodeId {
        self.node_sequence[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.node_sequence.last().expect("route is never empty")
    }

    pub fn position_of(&self, node: NodeId) -> Option<usize> {
        self.node_sequence.iter().position(|&n| n == node)
    }
}

/// A signalized node on a route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSignal {
    pub node: NodeId,
    /// Index of `node` in the route's node sequence.
    pub index: usize,
    pub controller: ControllerId,
    pub approach: EdgeId,
    pub offset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl RoadGraph {
    pub fn builder() -> RoadGraphBuilder {
        RoadGraphBuilder::default()
    }

    pub fn node(&self, id: NodeId) -> Option<LatLon> {
        self.nodes.get(&id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, LatLon)> + '_ {
        self.nodes.iter().map(|(k, v)| (*k, *v))
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn outgoing(&self, node: NodeId) -> impl Iterator<Item = &Edge> {
        self.outgoing
            .get(&node)
            .into_iter()
            .flatten()
            .map(move |e| &self.edges[e])
    }

    /// Edges that end at `node`, in id order.
    pub fn incoming(&self, node: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(move |e| e.to == node)
    }

    pub fn controller_at(&self, node: NodeId) -> Option<&ControllerId> {
        self.intersections.get(&node)
    }

    pub fn controller_node(&self, c: &ControllerId) -> Option<NodeId> {
        self.controller_nodes.get(c).copied()
    }

    pub fn intersections(&self) -> impl Iterator<Item = (NodeId, &ControllerId)> {
        self.intersections.iter().map(|(k, v)| (*k, v))
    }

    pub fn hospitals(&self) -> impl Iterator<Item = (NodeId, &str)> {
        self.hospitals.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn is_hospital(&self, node: NodeId) -> bool {
        self.hospitals.contains_key(&node)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Fastest edge from `a` to `b`, smallest id on ties.
    pub fn best_edge(&self, a: NodeId, b: NodeId) -> Option<&Edge> {
        self.outgoing(a)
            .filter(|e| e.to == b)
            .min_by(|x, y| Cost(x.free_flow_s()).cmp(&Cost(y.free_flow_s())).then(x.id.cmp(&y.id)))
    }

    /// Builds a route along `nodes`, using the best edge between each pair.
    pub fn route_along(&self, nodes: &[NodeId]) -> Option<Route> {
        if nodes.is_empty() || nodes.iter().any(|n| !self.nodes.contains_key(n)) {
            return None;
        }
        let mut edges = Vec::with_capacity(nodes.len() - 1);
        let mut offsets = vec![0.0];
        let (mut len, mut time) = (0.0, 0.0);
        for w in nodes.windows(2) {
            let e = self.best_edge(w[0], w[1])?;
            len += e.length_m;
            time += e.free_flow_s();
            edges.push(e.id);
            offsets.push(time);
        }
        Some(Route {
            node_sequence: nodes.to_vec(),
            edges,
            total_length_m: len,
            total_time_s: time,
            arrival_offsets_s: offsets,
        })
    }

    fn path_to(pred: &BTreeMap<NodeId, NodeId>, mut n: NodeId) -> Vec<NodeId> {
        let mut path = vec![n];
        while let Some(&p) = pred.get(&n) {
            path.push(p);
            n = p;
        }
        path.reverse();
        path
    }

    /// Minimum travel-time path from `src` to `dst`.
    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Result<Route, RoadnetError> {
        for n in [src, dst] {
            if !self.nodes.contains_key(&n) {
                return Err(RoadnetError::UnknownNode(n));
            }
        }
        let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut pred: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut done: BTreeMap<NodeId, ()> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(src, 0.0);
        heap.push(core::cmp::Reverse((Cost(0.0), src)));
        while let Some(core::cmp::Reverse((Cost(d), u))) = heap.pop() {
            if done.insert(u, ()).is_some() {
                continue;
            }
            if u == dst {
                break;
            }
            for e in self.outgoing(u) {
                let v = e.to;
                if done.contains_key(&v) {
                    continue;
                }
                let nd = d + e.free_flow_s();
                let better = match dist.get(&v) {
                    None => true,
                    Some(&old) if nd < old => true,
                    // Equal cost: keep the lexicographically smaller path.
                    Some(&old) if nd == old => {
                        let mut cand = Self::path_to(&pred, u);
                        cand.push(v);
                        cand < Self::path_to(&pred, v)
                    }
                    _ => false,
                };
                if better {
                    dist.insert(v, nd);
                    pred.insert(v, u);
                    heap.push(core::cmp::Reverse((Cost(nd), v)));
                }
            }
        }
        if !done.contains_key(&dst) {
            return Err(RoadnetError::Unreachable);
        }
        let nodes = Self::path_to(&pred, dst);
        self.route_along(&nodes).ok_or(RoadnetError::Unreachable)
    }

    /// Hospital with the smallest travel time from `from`; smallest id on ties.
    pub fn nearest_hospital(&self, from: NodeId) -> Result<(NodeId, Route), RoadnetError> {
        if self.hospitals.is_empty() {
            return Err(RoadnetError::NoHospital);
        }
        let mut best: Option<(NodeId, Route)> = None;
        for &h in self.hospitals.keys() {
            match self.shortest_path(from, h) {
                Ok(r) => {
                    if best.as_ref().is_none_or(|(_, b)| r.total_time_s < b.total_time_s) {
                        best = Some((h, r));
                    }
                }
                Err(RoadnetError::Unreachable) => {}
                Err(e) => return Err(e),
            }
        }
        best.ok_or(RoadnetError::AllUnreachable)
    }

    /// Nearest node by great-circle distance; smallest id on ties.
    pub fn map_match(&self, fix: LatLon) -> Result<(NodeId, f64), RoadnetError> {
        let mut best: Option<(NodeId, f64)> = None;
        for (&id, pos) in &self.nodes {
            let d = pos.distance_m(&fix);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        best.ok_or(RoadnetError::Empty)
    }

    /// Signalized nodes along `route` after its origin, in travel order.
    pub fn route_intersections(&self, route: &Route) -> Vec<RouteSignal> {
        route
            .node_sequence
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(i, n)| {
                self.intersections.get(n).map(|c| RouteSignal {
                    node: *n,
                    index: i,
                    controller: c.clone(),
                    approach: route.edges[i - 1],
                    offset_s: route.arrival_offsets_s[i],
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(id: u32, from: u32, to: u32, len: f64, speed: f64) -> Edge {
        Edge { id: EdgeId(id), from: NodeId(from), to: NodeId(to), length_m: len, speed_mps: speed }
    }

    fn line_graph(n: u32) -> RoadGraphBuilder {
        let mut b = RoadGraph::builder();
        for i in 0..n {
            b = b.node(NodeId(i), LatLon::new(0.0, i as f64 * 0.01));
        }
        b
    }

    #[test]
    fn identity_route() {
        let g = line_graph(2).edge(edge(0, 0, 1, 10.0, 1.0)).build().unwrap();
        let r = g.shortest_path(NodeId(0), NodeId(0)).unwrap();
        assert_eq!(r.node_sequence, [NodeId(0)]);
        assert_eq!((r.total_length_m, r.total_time_s), (0.0, 0.0));
        assert_eq!(r.arrival_offsets_s, [0.0]);
    }

    #[test]
    fn diamond_prefers_time() {
        // 0 -> 1 -> 3 is short but slow (200 s); 0 -> 2 -> 3 is long but fast (60 s).
        let g = line_graph(4)
            .edge(edge(0, 0, 1, 500.0, 5.0))
            .edge(edge(1, 1, 3, 500.0, 5.0))
            .edge(edge(2, 0, 2, 900.0, 30.0))
            .edge(edge(3, 2, 3, 900.0, 30.0))
            .build()
            .unwrap();
        let r = g.shortest_path(NodeId(0), NodeId(3)).unwrap();
        assert_eq!(r.node_sequence, [NodeId(0), NodeId(2), NodeId(3)]);
        assert_eq!(r.total_time_s, 60.0);
        assert_eq!(r.total_length_m, 1800.0);
    }

    #[test]
    fn equal_cost_tie_is_lexicographic() {
        let g = line_graph(4)
            .edge(edge(0, 0, 2, 10.0, 1.0))
            .edge(edge(1, 2, 3, 10.0, 1.0))
            .edge(edge(2, 0, 1, 10.0, 1.0))
            .edge(edge(3, 1, 3, 10.0, 1.0))
            .build()
            .unwrap();
        let r = g.shortest_path(NodeId(0), NodeId(3)).unwrap();
        assert_eq!(r.node_sequence, [NodeId(0), NodeId(1), NodeId(3)]);
    }

    #[test]
    fn unreachable_destination() {
        let g = line_graph(3).edge(edge(0, 0, 1, 10.0, 1.0)).build().unwrap();
        assert_eq!(g.shortest_path(NodeId(0), NodeId(2)), Err(RoadnetError::Unreachable));
        assert_eq!(g.shortest_path(NodeId(1), NodeId(0)), Err(RoadnetError::Unreachable));
    }

    #[test]
    fn builder_rejects_bad_input() {
        assert_eq!(
            line_graph(1).edge(edge(0, 0, 5, 1.0, 1.0)).build().unwrap_err(),
            RoadnetError::UnknownEndpoint(EdgeId(0), NodeId(5))
        );
        assert!(line_graph(2).edge(edge(0, 0, 1, 0.0, 1.0)).build().is_err());
        assert!(line_graph(2).edge(edge(0, 0, 1, 1.0, f64::NAN)).build().is_err());
        assert!(line_graph(1).hospital(NodeId(9), "X").build().is_err());
        let c = ControllerId::new("S").unwrap();
        assert!(line_graph(2)
            .intersection(NodeId(0), c.clone())
            .intersection(NodeId(1), c)
            .build()
            .is_err());
    }

    #[test]
    fn nearest_hospital_cases() {
        // 0 -> 1 takes 100 s, 0 -> 2 takes 90 s.
        let base = line_graph(3).edge(edge(0, 0, 1, 100.0, 1.0)).edge(edge(1, 0, 2, 90.0, 1.0));
        let g = base.hospital(NodeId(1), "A").hospital(NodeId(2), "B").build().unwrap();
        assert_eq!(g.nearest_hospital(NodeId(0)).unwrap().0, NodeId(2));

        let g = line_graph(2).edge(edge(0, 0, 1, 5.0, 1.0)).hospital(NodeId(1), "A").build().unwrap();
        assert_eq!(g.nearest_hospital(NodeId(0)).unwrap().0, NodeId(1));

        let g = line_graph(3).hospital(NodeId(1), "A").hospital(NodeId(2), "B").build().unwrap();
        assert_eq!(g.nearest_hospital(NodeId(0)), Err(RoadnetError::AllUnreachable));

        let g = line_graph(2).build().unwrap();
        assert_eq!(g.nearest_hospital(NodeId(0)), Err(RoadnetError::NoHospital));
    }

    #[test]
    fn hospital_tie_prefers_smaller_id() {
        let g = line_graph(3)
            .edge(edge(0, 0, 2, 50.0, 1.0))
            .edge(edge(1, 0, 1, 50.0, 1.0))
            .hospital(NodeId(2), "B")
            .hospital(NodeId(1), "A")
            .build()
            .unwrap();
        assert_eq!(g.nearest_hospital(NodeId(0)).unwrap().0, NodeId(1));
    }

    #[test]
    fn map_match_cases() {
        let g = RoadGraph::builder()
            .node(NodeId(7), LatLon::new(0.0, 0.0))
            .node(NodeId(3), LatLon::new(0.0, 0.002))
            .build()
            .unwrap();
        assert_eq!(g.map_match(LatLon::new(0.0, 0.0)).unwrap(), (NodeId(7), 0.0));
        // Equidistant: smaller id wins.
        assert_eq!(g.map_match(LatLon::new(0.0, 0.001)).unwrap().0, NodeId(3));
        assert_eq!(RoadGraph::default().map_match(LatLon::new(0.0, 0.0)), Err(RoadnetError::Empty));
    }

    #[test]
    fn route_signals_and_offsets() {
        let s = |x: &str| ControllerId::new(x).unwrap();
        let g = line_graph(4)
            .edge(edge(0, 0, 1, 100.0, 10.0))
            .edge(edge(1, 1, 2, 300.0, 15.0))
            .edge(edge(2, 2, 3, 50.0, 5.0))
            .intersection(NodeId(0), s("S0"))
            .intersection(NodeId(1), s("S1"))
            .intersection(NodeId(2), s("S2"))
            .intersection(NodeId(3), s("S3"))
            .build()
            .unwrap();
        let r = g.shortest_path(NodeId(0), NodeId(3)).unwrap();
        let sig = g.route_intersections(&r);
        assert_eq!(sig.len(), 3);
        let names: Vec<&str> = sig.iter().map(|s| s.controller.as_str()).collect();
        assert_eq!(names, ["S1", "S2", "S3"]);
        // 100/10 = 10; + 300/15 = 30; + 50/5 = 40.
        let offs: Vec<f64> = sig.iter().map(|s| s.offset_s).collect();
        assert_eq!(offs, [10.0, 30.0, 40.0]);
        assert_eq!(sig[1].approach, EdgeId(1));

        let plain = line_graph(2).edge(edge(0, 0, 1, 1.0, 1.0)).build().unwrap();
        let r = plain.shortest_path(NodeId(0), NodeId(1)).unwrap();
        assert!(plain.route_intersections(&r).is_empty());
    }
}
