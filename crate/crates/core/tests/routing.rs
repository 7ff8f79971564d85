//! Tree formation against brute-force oracles on small random instances.

use iab_core::scenario::{generate_deployment, Config, NodeId, Scenario};
use iab_core::topology::{
    feasible_links, form_topology_max_rsrp, form_topology_min_hops, route_to_donor, FeasibleLinkSet, Topology,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const THRESHOLD: f64 = -80.0;

fn scenario(relays: usize, ues: usize) -> Scenario {
    let cfg = Config {
        num_iab: relays,
        num_ues: ues,
        ..Config::default()
    };
    generate_deployment(&cfg, 0)
}

/// Integer dBm weights so ties occur; about a third fall below threshold.
fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * n).map(|_| rng.gen_range(-95..=-40) as f64).collect()
}

fn links(sc: &Scenario, w: &[f64]) -> Option<FeasibleLinkSet> {
    let n = sc.nodes.len();
    feasible_links(sc, |p, c| w[p.index() * n + c.index()], THRESHOLD).ok()
}

/// Walk every simple donor-rooted path whose forwarders are relays,
/// calling `visit(node, width, hops, path)` for each path end.
fn enumerate_paths(sc: &Scenario, l: &FeasibleLinkSet, visit: &mut dyn FnMut(NodeId, f64, usize, &[NodeId])) {
    fn walk(
        sc: &Scenario,
        l: &FeasibleLinkSet,
        path: &mut Vec<NodeId>,
        width: f64,
        visit: &mut dyn FnMut(NodeId, f64, usize, &[NodeId]),
    ) {
        let at = *path.last().unwrap();
        for next in &sc.nodes {
            let Some(w) = l.rsrp(at, next.id) else { continue };
            if path.contains(&next.id) {
                continue;
            }
            let bw = width.min(w);
            path.push(next.id);
            visit(next.id, bw, path.len() - 1, path);
            if next.kind.is_relay() {
                walk(sc, l, path, bw, visit);
            }
            path.pop();
        }
    }
    walk(sc, l, &mut vec![sc.donor()], f64::INFINITY, visit);
}

/// Best bottleneck per node over all routes.
fn brute_force_widths(sc: &Scenario, l: &FeasibleLinkSet) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; sc.nodes.len()];
    best[0] = f64::INFINITY;
    enumerate_paths(sc, l, &mut |v, w, _, _| best[v.index()] = best[v.index()].max(w));
    best
}

/// Fewest hops per node over routes on which every node, the end included,
/// is reached at its best bottleneck. These are the routes a tree of
/// widest paths can contain.
fn brute_force_hops(sc: &Scenario, l: &FeasibleLinkSet, widths: &[f64]) -> Vec<Option<usize>> {
    let mut hops = vec![None; sc.nodes.len()];
    hops[0] = Some(0);
    enumerate_paths(sc, l, &mut |v, _, h, path| {
        let mut width = f64::INFINITY;
        for pair in path.windows(2) {
            width = width.min(l.rsrp(pair[0], pair[1]).unwrap());
            if width != widths[pair[1].index()] {
                return;
            }
        }
        let slot = &mut hops[v.index()];
        if slot.map_or(true, |b| h < b) {
            *slot = Some(h);
        }
    });
    hops
}

/// Hop distance from the donor with relays as the only forwarders.
fn bfs_depth(sc: &Scenario, l: &FeasibleLinkSet) -> Vec<Option<u32>> {
    let mut depth = vec![None; sc.nodes.len()];
    depth[sc.donor().index()] = Some(0);
    let mut queue = std::collections::VecDeque::from([sc.donor()]);
    while let Some(u) = queue.pop_front() {
        for v in &sc.nodes {
            if depth[v.id.index()].is_none() && l.rsrp(u, v.id).is_some() {
                depth[v.id.index()] = Some(depth[u.index()].unwrap() + 1);
                if v.kind.is_relay() {
                    queue.push_back(v.id);
                }
            }
        }
    }
    depth
}

fn tree_edges_are_feasible(sc: &Scenario, l: &FeasibleLinkSet, t: &Topology) {
    for v in &sc.nodes {
        if let Some(p) = t.parent[v.id.index()] {
            assert_eq!(t.link_rsrp[v.id.index()], l.rsrp(p, v.id).expect("tree uses feasible links"));
        }
    }
}

#[test]
fn max_rsrp_matches_brute_force_and_min_hops_matches_bfs() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 150 {
        let relays = rng.gen_range(1..=8);
        let ues = rng.gen_range(1..=6);
        let sc = scenario(relays, ues);
        let w = random_weights(sc.nodes.len(), &mut rng);
        let Some(l) = links(&sc, &w) else { continue };
        checked += 1;

        let widest = form_topology_max_rsrp(&sc, &l);
        tree_edges_are_feasible(&sc, &l, &widest);
        let widths = brute_force_widths(&sc, &l);
        let hops = brute_force_hops(&sc, &l, &widths);
        for v in sc.nodes.iter().skip(1) {
            let k = v.id.index();
            if widths[k] == f64::NEG_INFINITY {
                assert!(!widest.is_attached(v.id), "node {} should be detached", v.id);
                continue;
            }
            let route = route_to_donor(&widest, v.id).expect("attached");
            assert_eq!(route.bottleneck_rsrp, widths[k], "bottleneck of node {}", v.id);
            assert_eq!(widest.bottleneck[k], widths[k]);
            assert_eq!(Some(route.hops()), hops[k], "hops of node {}", v.id);
        }

        let shallow = form_topology_min_hops(&sc, &l);
        tree_edges_are_feasible(&sc, &l, &shallow);
        assert_eq!(shallow.depth, bfs_depth(&sc, &l));
    }
    assert!(start.elapsed().as_secs_f64() < 1.0, "oracle suite took {:?}", start.elapsed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The widest-path tree depends only on the order of link weights.
    #[test]
    fn widest_tree_invariant_under_monotone_transform(seed in any::<u64>(), relays in 1usize..7, scale in 1.0f64..4.0, shift in -30.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = scenario(relays, 4);
        let w = random_weights(sc.nodes.len(), &mut rng);
        let Some(l) = links(&sc, &w) else { return Ok(()) };
        let mapped: Vec<f64> = w.iter().map(|x| x.mul_add(scale.round(), shift.round())).collect();
        let l2 = feasible_links(&sc, |p, c| {
            let k = p.index() * sc.nodes.len() + c.index();
            if w[k] >= THRESHOLD { mapped[k] } else { f64::NEG_INFINITY }
        }, f64::MIN).unwrap();
        let a = form_topology_max_rsrp(&sc, &l);
        let b = form_topology_max_rsrp(&sc, &l2);
        prop_assert_eq!(a.parent, b.parent);
        prop_assert_eq!(a.depth, b.depth);
    }
}
