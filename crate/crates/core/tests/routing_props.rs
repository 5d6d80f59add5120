use std::collections::BTreeSet;

use corridor_core::ids::{EdgeId, NodeId};
use corridor_core::roadnet::{Edge, RoadGraph, RoadnetError};
use corridor_core::LatLon;
use proptest::prelude::*;

/// Random directed graph: integer lengths at 1 m/s keep costs exact.
#[derive(Debug, Clone)]
struct Spec {
    n: u32,
    edges: Vec<(u32, u32, u32)>,
    hospitals: BTreeSet<u32>,
}

fn spec() -> impl Strategy<Value = Spec> {
    (2u32..=8).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec((0..n, 0..n, 1u32..6), 0..(n as usize * 3)),
            proptest::collection::btree_set(0..n, 0..3),
        )
            .prop_map(|(n, edges, hospitals)| Spec {
                n,
                edges: edges.into_iter().filter(|(a, b, _)| a != b).collect(),
                hospitals,
            })
    })
}

fn build(s: &Spec) -> RoadGraph {
    let mut b = RoadGraph::builder();
    for i in 0..s.n {
        b = b.node(NodeId(i), LatLon::new(0.0, i as f64 * 0.001));
    }
    for (k, &(from, to, len)) in s.edges.iter().enumerate() {
        b = b.edge(Edge { id: EdgeId(k as u32), from: NodeId(from), to: NodeId(to), length_m: len as f64, speed_mps: 1.0 });
    }
    for &h in &s.hospitals {
        b = b.hospital(NodeId(h), "H");
    }
    b.build().unwrap()
}

/// Minimum cost over all simple paths, and the lexicographically least path
/// achieving it.
fn brute(s: &Spec, src: u32, dst: u32) -> Option<(u32, Vec<u32>)> {
    fn go(s: &Spec, at: u32, dst: u32, cost: u32, path: &mut Vec<u32>, best: &mut Option<(u32, Vec<u32>)>) {
        if at == dst {
            let better = match best {
                None => true,
                Some((c, p)) => cost < *c || (cost == *c && path < p),
            };
            if better {
                *best = Some((cost, path.clone()));
            }
            return;
        }
        for &(a, b, len) in &s.edges {
            if a == at && !path.contains(&b) {
                path.push(b);
                go(s, b, dst, cost + len, path, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    go(s, src, dst, 0, &mut vec![src], &mut best);
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn shortest_path_matches_brute_force(s in spec(), src in 0u32..8, dst in 0u32..8) {
        let (src, dst) = (src % s.n, dst % s.n);
        let g = build(&s);
        match (g.shortest_path(NodeId(src), NodeId(dst)), brute(&s, src, dst)) {
            (Ok(r), Some((cost, path))) => {
                prop_assert_eq!(r.total_time_s, cost as f64);
                let got: Vec<u32> = r.node_sequence.iter().map(|n| n.0).collect();
                prop_assert_eq!(got, path);
                prop_assert_eq!(r.edges.len() + 1, r.node_sequence.len());
            }
            (Err(RoadnetError::Unreachable), None) => {}
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
        }
    }

    #[test]
    fn triangle_inequality(s in spec(), a in 0u32..8, b in 0u32..8, c in 0u32..8) {
        let g = build(&s);
        let cost = |x: u32, y: u32| g.shortest_path(NodeId(x % s.n), NodeId(y % s.n)).ok().map(|r| r.total_time_s);
        if let (Some(ab), Some(bc), Some(ac)) = (cost(a, b), cost(b, c), cost(a, c)) {
            prop_assert!(ac <= ab + bc);
        }
    }

    #[test]
    fn nearest_hospital_is_the_minimum(s in spec(), from in 0u32..8) {
        let from = from % s.n;
        let g = build(&s);
        let best = s
            .hospitals
            .iter()
            .filter_map(|&h| brute(&s, from, h).map(|(c, _)| (c, h)))
            .min();
        match (g.nearest_hospital(NodeId(from)), best) {
            (Ok((h, r)), Some((c, bh))) => {
                prop_assert_eq!(r.total_time_s, c as f64);
                prop_assert_eq!(h.0, bh);
            }
            (Err(RoadnetError::NoHospital), None) => prop_assert!(s.hospitals.is_empty()),
            (Err(RoadnetError::AllUnreachable), None) => {}
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got.map(|x| x.0), want),
        }
    }
}
