//! Per-UE serving sets under single connectivity, multi-connectivity and
//! fast switching.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scenario::{AssociationScheme, ConnectivityMode, NodeId};
use crate::topology::Topology;

/// A node the UE could attach to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node: NodeId,
    /// Weakest link of the full route donor -> node -> UE.
    pub rsrp: f64,
    /// RSRP of the access link node -> UE.
    pub access_rsrp: f64,
    /// Weakest link between the donor and the node; +inf for the donor.
    pub backhaul_rsrp: f64,
    /// Hops from the donor to the UE through this node.
    pub hops: u32,
}

/// Order in which the active association scheme ranks candidates; the first
/// candidate is the tree parent the topology would pick.
pub fn rank(scheme: AssociationScheme, a: &Candidate, b: &Candidate) -> Ordering {
    let desc = |x: f64, y: f64| y.partial_cmp(&x).unwrap_or(Ordering::Equal);
    match scheme {
        AssociationScheme::MaxRsrp => desc(a.rsrp, b.rsrp).then(a.hops.cmp(&b.hops)),
        AssociationScheme::MinHops => a.hops.cmp(&b.hops).then(desc(a.access_rsrp, b.access_rsrp)),
    }
    .then(a.node.cmp(&b.node))
}

/// Candidates for one UE from its feasible access links `(node, rsrp)`.
/// Nodes detached from the donor are skipped.
pub fn build_candidates<I>(scheme: AssociationScheme, access: I, topology: &Topology) -> Vec<Candidate>
where
    I: IntoIterator<Item = (NodeId, f64)>,
{
    let mut out: Vec<Candidate> = access
        .into_iter()
        .filter_map(|(node, r)| {
            let depth = topology.depth_of(node)?;
            let backhaul = topology.bottleneck[node.index()];
            Some(Candidate {
                node,
                rsrp: backhaul.min(r),
                access_rsrp: r,
                backhaul_rsrp: backhaul,
                hops: depth + 1,
            })
        })
        .collect();
    out.sort_by(|a, b| rank(scheme, a, b));
    out
}

/// Same candidates re-ranked with `penalty(node)` dB subtracted from each
/// access link, e.g. the blockage loss of currently blocked links. Links
/// pushed below `threshold` rank after every link that still clears it.
pub fn rerank<F>(
    scheme: AssociationScheme,
    candidates: &[Candidate],
    penalty: F,
    threshold: f64,
) -> Vec<Candidate>
where
    F: Fn(NodeId) -> f64,
{
    let mut out: Vec<Candidate> = candidates
        .iter()
        .map(|c| {
            let access = c.access_rsrp - penalty(c.node);
            Candidate {
                rsrp: c.backhaul_rsrp.min(access),
                access_rsrp: access,
                ..*c
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.access_rsrp < threshold)
            .cmp(&(b.access_rsrp < threshold))
            .then(rank(scheme, a, b))
    });
    out
}

pub fn select_serving(candidates: &[Candidate], mode: ConnectivityMode, mc_degree: usize) -> Vec<NodeId> {
    let k = match mode {
        ConnectivityMode::Mc => mc_degree,
        _ => 1,
    };
    candidates.iter().take(k).map(|c| c.node).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchReason {
    Blockage,
    Scan,
}

impl fmt::Display for SwitchReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SwitchReason::Blockage => "blockage",
            SwitchReason::Scan => "scan",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub ue: NodeId,
    pub from: NodeId,
    pub to: NodeId,
    pub reason: SwitchReason,
}

pub const SWITCH_LOG_HEADER: &str = "time,ue,from,to,reason";

impl SwitchEvent {
    pub fn csv_row(&self) -> String {
        format!("{:.6},{},{},{},{}", self.time, self.ue, self.from, self.to, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingSet {
    pub ue: NodeId,
    pub mode: ConnectivityMode,
    pub candidates: Vec<Candidate>,
    /// Best first; empty means outage.
    pub active: Vec<NodeId>,
    pub last_scan: f64,
    /// The UE cannot be served before this time after a switch.
    pub blackout_until: f64,
}

impl ServingSet {
    pub fn new(
        ue: NodeId,
        mode: ConnectivityMode,
        candidates: Vec<Candidate>,
        mc_degree: usize,
        now: f64,
    ) -> Self {
        let active = select_serving(&candidates, mode, mc_degree);
        Self {
            ue,
            mode,
            candidates,
            active,
            last_scan: now,
            blackout_until: now,
        }
    }

    pub fn in_outage(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_serving(&self, node: NodeId) -> bool {
        self.active.contains(&node)
    }

    /// Fresh candidates and a fresh selection at a topology epoch.
    pub fn refresh(&mut self, candidates: Vec<Candidate>, mc_degree: usize) {
        self.active = select_serving(&candidates, self.mode, mc_degree);
        self.candidates = candidates;
    }

    fn switch_to(&mut self, to: NodeId, now: f64, delay: f64, reason: SwitchReason) -> Option<SwitchEvent> {
        let from = *self.active.first()?;
        if from == to {
            return None;
        }
        self.active = vec![to];
        self.blackout_until = now + delay;
        Some(SwitchEvent {
            time: now,
            ue: self.ue,
            from,
            to,
            reason,
        })
    }

    /// Fast-switching reaction after any blockage transition. SC and MC do
    /// not react. Once switched, the UE never returns on its own; only a scan
    /// or a topology epoch moves it.
    pub fn on_blockage_change<F>(
        &mut self,
        blocked: F,
        now: f64,
        switch_delay: f64,
    ) -> Option<SwitchEvent>
    where
        F: Fn(NodeId) -> bool,
    {
        if !matches!(self.mode, ConnectivityMode::ScFs | ConnectivityMode::ScFsScan) {
            return None;
        }
        let current = *self.active.first()?;
        if !blocked(current) {
            return None;
        }
        let target = self
            .candidates
            .iter()
            .find(|c| !blocked(c.node))
            .or(self.candidates.first())?
            .node;
        self.switch_to(target, now, switch_delay, SwitchReason::Blockage)
    }

    /// Re-select the best candidate by blocked-aware RSRP once per
    /// `scan_period`. Returns `None` when not due or nothing changes.
    pub fn periodic_scan<F>(
        &mut self,
        scheme: AssociationScheme,
        penalty: F,
        threshold: f64,
        now: f64,
        scan_period: f64,
        switch_delay: f64,
    ) -> Option<SwitchEvent>
    where
        F: Fn(NodeId) -> f64,
    {
        if self.mode != ConnectivityMode::ScFsScan || now - self.last_scan < scan_period - 1e-9 {
            return None;
        }
        self.last_scan = now;
        let best = rerank(scheme, &self.candidates, penalty, threshold).first()?.node;
        self.switch_to(best, now, switch_delay, SwitchReason::Scan)
    }
}
