//! Multi-hop tree formation rooted at the donor.
//!
//! Two association schemes are supported: fewest hops (breadth-first from the
//! donor) and widest path, where each node takes the route whose weakest link
//! has the highest RSRP. UEs are always leaves; only the donor and IAB nodes
//! forward traffic.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{AssociationScheme, NodeId, NodeKind, Scenario};

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("degenerate deployment: the donor has no feasible link")]
    DegenerateDeployment,
    #[error("node {0} is not attached to the donor")]
    Detached(NodeId),
}

/// Whether `parent -> child` is a pair the tree may use at all.
pub fn is_admissible(parent: NodeKind, child: NodeKind) -> bool {
    parent.is_relay() && child != NodeKind::Dgnb
}

/// Directed parent-candidate to child pairs whose downstream RSRP clears the
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleLinkSet {
    n: usize,
    rsrp: Vec<Option<f64>>,
}

impl FeasibleLinkSet {
    pub fn rsrp(&self, parent: NodeId, child: NodeId) -> Option<f64> {
        self.rsrp[parent.index() * self.n + child.index()]
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.rsrp.iter().filter(|r| r.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All feasible pairs in `(parent, child)` order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.rsrp.iter().enumerate().filter_map(move |(k, r)| {
            r.map(|r| (NodeId((k / self.n) as u32), NodeId((k % self.n) as u32), r))
        })
    }
}

/// Collect every admissible pair whose downstream RSRP (given by `rsrp`)
/// reaches `threshold`.
pub fn feasible_links<F>(
    scenario: &Scenario,
    rsrp: F,
    threshold: f64,
) -> Result<FeasibleLinkSet, TopologyError>
where
    F: Fn(NodeId, NodeId) -> f64,
{
    let n = scenario.nodes.len();
    let mut table = vec![None; n * n];
    for p in &scenario.nodes {
        for c in &scenario.nodes {
            if p.id == c.id || !is_admissible(p.kind, c.kind) {
                continue;
            }
            let r = rsrp(p.id, c.id);
            if r >= threshold {
                table[p.id.index() * n + c.id.index()] = Some(r);
            }
        }
    }
    let donor = scenario.donor().index();
    if table[donor * n..(donor + 1) * n].iter().all(Option::is_none) {
        return Err(TopologyError::DegenerateDeployment);
    }
    Ok(FeasibleLinkSet { n, rsrp: table })
}

/// Parent-pointer tree over all nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub parent: Vec<Option<NodeId>>,
    pub depth: Vec<Option<u32>>,
    pub children: Vec<Vec<NodeId>>,
    /// RSRP of the link from a node's parent; +inf at the root.
    pub link_rsrp: Vec<f64>,
    /// Weakest-link RSRP of the route to the donor; +inf at the root.
    pub bottleneck: Vec<f64>,
    pub detached: Vec<NodeId>,
    pub kinds: Vec<NodeKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    /// Donor first, terminal last.
    pub nodes: Vec<NodeId>,
    pub bottleneck_rsrp: f64,
}

impl Route {
    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }
}

impl Topology {
    fn empty(scenario: &Scenario) -> Self {
        let n = scenario.nodes.len();
        let mut t = Self {
            parent: vec![None; n],
            depth: vec![None; n],
            children: vec![Vec::new(); n],
            link_rsrp: vec![f64::NEG_INFINITY; n],
            bottleneck: vec![f64::NEG_INFINITY; n],
            detached: Vec::new(),
            kinds: scenario.nodes.iter().map(|n| n.kind).collect(),
        };
        let root = scenario.donor().index();
        t.depth[root] = Some(0);
        t.link_rsrp[root] = f64::INFINITY;
        t.bottleneck[root] = f64::INFINITY;
        t
    }

    fn attach(&mut self, node: NodeId, parent: NodeId, rsrp: f64) {
        let (v, p) = (node.index(), parent.index());
        self.parent[v] = Some(parent);
        self.depth[v] = Some(self.depth[p].expect("parent attached first") + 1);
        self.link_rsrp[v] = rsrp;
        self.bottleneck[v] = self.bottleneck[p].min(rsrp);
        self.children[p].push(node);
    }

    fn finish(mut self) -> Self {
        for (k, d) in self.depth.iter().enumerate() {
            if d.is_none() {
                self.detached.push(NodeId(k as u32));
            }
        }
        for c in &mut self.children {
            c.sort();
        }
        self
    }

    /// Only the donor attached; the state before the first formation.
    pub fn root_only(scenario: &Scenario) -> Self {
        Self::empty(scenario).finish()
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn is_attached(&self, node: NodeId) -> bool {
        self.depth[node.index()].is_some()
    }

    pub fn depth_of(&self, node: NodeId) -> Option<u32> {
        self.depth[node.index()]
    }

    /// True if `ancestor` lies on `node`'s route to the donor (inclusive).
    pub fn is_ancestor_or_self(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parent[c.index()];
        }
        false
    }

    /// The child of `from` on the way down to `target`, if `target` is in
    /// `from`'s subtree.
    pub fn next_hop_towards(&self, from: NodeId, target: NodeId) -> Option<NodeId> {
        let mut cur = target;
        while let Some(p) = self.parent[cur.index()] {
            if p == from {
                return Some(cur);
            }
            cur = p;
        }
        None
    }

    /// Number of relay children (backhaul beams needed by a multi-beam node).
    pub fn backhaul_children(&self, node: NodeId) -> usize {
        self.children[node.index()]
            .iter()
            .filter(|c| self.kinds[c.index()] == NodeKind::Iab)
            .count()
    }

    /// CSV dump: node, kind, parent, depth, bottleneck RSRP.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "node,kind,parent,depth,bottleneck_rsrp_dbm")?;
        for k in 0..self.len() {
            let parent = self.parent[k].map(|p| p.to_string()).unwrap_or_default();
            let depth = self.depth[k].map(|d| d.to_string()).unwrap_or_default();
            let b = self.bottleneck[k];
            let b = if b.is_finite() { format!("{b:.3}") } else { String::new() };
            writeln!(out, "{k},{:?},{parent},{depth},{b}", self.kinds[k])?;
        }
        Ok(())
    }
}

/// Walk parent pointers from `node` up to the donor.
pub fn route_to_donor(topology: &Topology, node: NodeId) -> Result<Route, TopologyError> {
    if !topology.is_attached(node) {
        return Err(TopologyError::Detached(node));
    }
    let mut nodes = vec![node];
    let mut bottleneck = f64::INFINITY;
    let mut cur = node;
    while let Some(p) = topology.parent[cur.index()] {
        bottleneck = bottleneck.min(topology.link_rsrp[cur.index()]);
        nodes.push(p);
        cur = p;
        assert!(nodes.len() <= topology.len(), "cycle in parent map");
    }
    nodes.reverse();
    Ok(Route {
        nodes,
        bottleneck_rsrp: bottleneck,
    })
}

/// Breadth-first tree: every node attaches at its minimum hop count, ties by
/// higher parent-link RSRP, then lower parent id.
pub fn form_topology_min_hops(scenario: &Scenario, links: &FeasibleLinkSet) -> Topology {
    let mut topo = Topology::empty(scenario);
    let mut frontier = vec![scenario.donor()];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for v in &scenario.nodes {
            if topo.is_attached(v.id) {
                continue;
            }
            let best = frontier
                .iter()
                .filter_map(|&u| links.rsrp(u, v.id).map(|r| (u, r)))
                .fold(None::<(NodeId, f64)>, |acc, (u, r)| match acc {
                    Some((bu, br)) if br > r || (br == r && bu < u) => Some((bu, br)),
                    _ => Some((u, r)),
                });
            if let Some((u, r)) = best {
                topo.attach(v.id, u, r);
                if v.kind.is_relay() {
                    next.push(v.id);
                }
            }
        }
        frontier = next;
    }
    topo.finish()
}

/// Widest-path tree: each node's route maximizes its weakest-link RSRP.
///
/// Among the trees that achieve every node's best bottleneck, each node sits
/// at the smallest possible depth; remaining ties go to the lower parent id.
pub fn form_topology_max_rsrp(scenario: &Scenario, links: &FeasibleLinkSet) -> Topology {
    let n = scenario.nodes.len();
    let donor = scenario.donor();
    let relays: Vec<NodeId> = scenario.relays().map(|r| r.id).collect();

    // Best bottleneck per node. Dijkstra over relays only; UEs are leaves.
    let mut width = vec![f64::NEG_INFINITY; n];
    let mut settled = vec![false; n];
    width[donor.index()] = f64::INFINITY;
    loop {
        let pick = relays
            .iter()
            .filter(|r| !settled[r.index()] && width[r.index()] > f64::NEG_INFINITY)
            .fold(None::<NodeId>, |acc, &r| match acc {
                Some(b) if width[b.index()] >= width[r.index()] => Some(b),
                _ => Some(r),
            });
        let Some(u) = pick else { break };
        settled[u.index()] = true;
        for v in &scenario.nodes {
            if let Some(w) = links.rsrp(u, v.id) {
                if v.kind.is_relay() && !settled[v.id.index()] {
                    let cand = width[u.index()].min(w);
                    if cand > width[v.id.index()] {
                        width[v.id.index()] = cand;
                    }
                }
            }
        }
    }
    for v in scenario.ues() {
        width[v.id.index()] = relays
            .iter()
            .filter_map(|&p| links.rsrp(p, v.id).map(|w| width[p.index()].min(w)))
            .fold(f64::NEG_INFINITY, f64::max);
    }

    // Keep only links that preserve the child's best bottleneck, then grow
    // the tree breadth-first over them.
    let keeps_width = |p: NodeId, v: NodeId| {
        links
            .rsrp(p, v)
            .is_some_and(|w| width[p.index()] > f64::NEG_INFINITY && width[p.index()].min(w) == width[v.index()])
    };
    let mut topo = Topology::empty(scenario);
    let mut frontier = vec![donor];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &v in &relays {
            if topo.is_attached(v) {
                continue;
            }
            if let Some(&p) = frontier.iter().filter(|&&p| keeps_width(p, v)).min() {
                topo.attach(v, p, links.rsrp(p, v).unwrap());
                next.push(v);
            }
        }
        next.sort();
        frontier = next;
    }
    for v in scenario.ues() {
        let best = relays
            .iter()
            .filter(|&&p| topo.is_attached(p) && keeps_width(p, v.id))
            .min_by_key(|&&p| (topo.depth[p.index()], p));
        if let Some(&p) = best {
            topo.attach(v.id, p, links.rsrp(p, v.id).unwrap());
        }
    }
    topo.finish()
}

pub fn form_topology(
    scheme: AssociationScheme,
    scenario: &Scenario,
    links: &FeasibleLinkSet,
) -> Topology {
    match scheme {
        AssociationScheme::MinHops => form_topology_min_hops(scenario, links),
        AssociationScheme::MaxRsrp => form_topology_max_rsrp(scenario, links),
    }
}
