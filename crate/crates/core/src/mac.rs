//! Frame structure, slot-format policies and the half-duplex scheduler.
//!
//! Every slot is split into a DL region, a guard and a UL region, per
//! scheduling node. Parents at even depth schedule in even slots and parents
//! at odd depth in odd slots, so an IAB node never acts as a child and as a
//! parent in the same slot.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{NodeId, SlotFormatPolicy};
use crate::topology::Topology;

pub const SYMBOLS_PER_SLOT: u32 = 14;
pub const SLOT_DURATION: f64 = 0.125e-3;
pub const SLOTS_PER_FRAME: u64 = 80;
pub const PF_MIN: f64 = 0.1;
pub const PF_MAX: f64 = 0.9;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStructure {
    pub symbols_per_slot: u32,
    pub guard_symbols: u32,
    pub slot_duration: f64,
    pub slots_per_frame: u64,
}

impl FrameStructure {
    pub fn new(guard_symbols: u32) -> Self {
        assert!(2 * guard_symbols < SYMBOLS_PER_SLOT, "too many guard symbols");
        Self {
            symbols_per_slot: SYMBOLS_PER_SLOT,
            guard_symbols,
            slot_duration: SLOT_DURATION,
            slots_per_frame: SLOTS_PER_FRAME,
        }
    }

    pub fn usable_symbols(&self) -> u32 {
        self.symbols_per_slot - self.guard_symbols
    }
}

impl Default for FrameStructure {
    fn default() -> Self {
        Self::new(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Dl,
    Ul,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Dl, Direction::Ul];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Dl => "DL",
            Direction::Ul => "UL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotFormat {
    pub c_dl: f64,
    pub c_ul: f64,
}

impl SlotFormat {
    pub fn from_dl(c_dl: f64) -> Self {
        Self {
            c_dl,
            c_ul: 1.0 - c_dl,
        }
    }

    /// DL symbols after round-half-up quantization of the usable symbols.
    pub fn dl_symbols(&self, frame: &FrameStructure) -> u32 {
        let usable = frame.usable_symbols();
        ((self.c_dl * usable as f64 + 0.5).floor() as u32).min(usable)
    }

    pub fn ul_symbols(&self, frame: &FrameStructure) -> u32 {
        frame.usable_symbols() - self.dl_symbols(frame)
    }

    /// Symbol ranges `[start, end)` of the DL and UL regions.
    pub fn regions(&self, frame: &FrameStructure) -> [(f64, f64); 2] {
        let dl = self.dl_symbols(frame) as f64;
        let ul_start = dl + frame.guard_symbols as f64;
        [(0.0, dl), (ul_start, frame.symbols_per_slot as f64)]
    }
}

pub fn slot_format_static() -> SlotFormat {
    SlotFormat::from_dl(0.5)
}

/// DL share proportional to active counts, clamped to `[0.1, 0.9]`.
pub fn pf_dl_fraction(active_dl: u32, active_ul: u32) -> f64 {
    let total = active_dl + active_ul;
    if total == 0 {
        return 0.5;
    }
    (active_dl as f64 / total as f64).clamp(PF_MIN, PF_MAX)
}

pub fn slot_format_pf(active_dl: u32, active_ul: u32) -> SlotFormat {
    SlotFormat::from_dl(pf_dl_fraction(active_dl, active_ul))
}

/// Average of the node-local and the global PF UL shares.
pub fn slot_format_wpf(local: (u32, u32), global: (u32, u32)) -> SlotFormat {
    let ul_local = 1.0 - pf_dl_fraction(local.0, local.1);
    let ul_global = 1.0 - pf_dl_fraction(global.0, global.1);
    let c_ul = 0.5 * (ul_local + ul_global);
    SlotFormat {
        c_dl: 1.0 - c_ul,
        c_ul,
    }
}

/// Active UE counts `(dl, ul)` per node subtree and network wide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveCounts {
    pub per_node: Vec<(u32, u32)>,
    pub global: (u32, u32),
}

/// Count DL/UL-active UEs. Each UE is credited to every node on its tree
/// route, so a node's local count covers its whole subtree.
pub fn count_active<I>(topology: &Topology, ues: I) -> ActiveCounts
where
    I: IntoIterator<Item = (NodeId, bool, bool)>,
{
    let mut per_node = vec![(0u32, 0u32); topology.len()];
    let mut global = (0, 0);
    for (ue, dl, ul) in ues {
        if !dl && !ul {
            continue;
        }
        global.0 += dl as u32;
        global.1 += ul as u32;
        let mut cur = topology.parent[ue.index()];
        while let Some(p) = cur {
            per_node[p.index()].0 += dl as u32;
            per_node[p.index()].1 += ul as u32;
            cur = topology.parent[p.index()];
        }
    }
    ActiveCounts { per_node, global }
}

/// Slot format of every node under `policy`. UEs carry a format too but never
/// schedule.
pub fn slot_formats(policy: SlotFormatPolicy, counts: &ActiveCounts) -> Vec<SlotFormat> {
    counts
        .per_node
        .iter()
        .map(|&local| match policy {
            SlotFormatPolicy::Static5050 => slot_format_static(),
            SlotFormatPolicy::Pf => slot_format_pf(counts.global.0, counts.global.1),
            SlotFormatPolicy::Wpf => slot_format_wpf(local, counts.global),
        })
        .collect()
}

/// A child link offered to the scheduler for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRequest {
    pub link: u32,
    pub parent: NodeId,
    pub child: NodeId,
    pub backhaul: bool,
    pub dl_pending: bool,
    pub ul_pending: bool,
}

/// Symbols granted to one link in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub link: u32,
    pub parent: NodeId,
    pub child: NodeId,
    pub direction: Direction,
    pub beam: u32,
    pub start: f64,
    pub symbols: f64,
}

impl Grant {
    pub fn fraction(&self) -> f64 {
        self.symbols / SYMBOLS_PER_SLOT as f64
    }

    /// `(transmitter, receiver)` of this grant.
    pub fn endpoints(&self) -> (NodeId, NodeId) {
        match self.direction {
            Direction::Dl => (self.parent, self.child),
            Direction::Ul => (self.child, self.parent),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub slot: u64,
    pub grants: Vec<Grant>,
}

impl Allocation {
    /// Distinct beams a node transmits DL on in this slot.
    pub fn dl_beams(&self, node: NodeId) -> usize {
        let mut beams: Vec<u32> = self
            .grants
            .iter()
            .filter(|g| g.parent == node && g.direction == Direction::Dl)
            .map(|g| g.beam)
            .collect();
        beams.sort_unstable();
        beams.dedup();
        beams.len()
    }

    /// One trace row per grant; see [`TRACE_HEADER`].
    pub fn write_trace<W: Write>(&self, mut out: W) -> io::Result<()> {
        for g in &self.grants {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{:.6}",
                self.slot,
                g.parent,
                g.child,
                g.link,
                g.direction,
                g.beam,
                g.start,
                g.fraction()
            )?;
        }
        Ok(())
    }
}

/// `node` is the scheduling parent; `start` is in symbols.
pub const TRACE_HEADER: &str = "slot,node,child,link,direction,beam,start,fraction";

/// Whether a parent at `depth` schedules in `slot`.
pub fn parent_eligible(depth: u32, slot: u64) -> bool {
    depth as u64 % 2 == slot % 2
}

/// Equal time sharing of one region among `links`, placed back to back.
fn share_region(
    out: &mut Vec<Grant>,
    links: &[(&LinkRequest, u32)],
    direction: Direction,
    region: (f64, f64),
) {
    if links.is_empty() || region.1 <= region.0 {
        return;
    }
    let each = (region.1 - region.0) / links.len() as f64;
    for (k, (req, beam)) in links.iter().enumerate() {
        out.push(Grant {
            link: req.link,
            parent: req.parent,
            child: req.child,
            direction,
            beam: *beam,
            start: region.0 + each * k as f64,
            symbols: each,
        });
    }
}

/// Round-robin equal time sharing of every eligible parent's regions.
///
/// `depth`, `formats` and `multi_beam` are indexed by node. Requests whose
/// parent is detached or out of phase are ignored. Single-beam parents split
/// each region equally among pending links; multi-beam parents give each
/// backhaul link its own beam with the whole region and share the access
/// beam (beam 0) among UE links.
pub fn schedule_slot(
    requests: &[LinkRequest],
    depth: &[Option<u32>],
    formats: &[SlotFormat],
    multi_beam: &[bool],
    frame: &FrameStructure,
    slot: u64,
) -> Allocation {
    let mut by_parent: BTreeMap<NodeId, Vec<&LinkRequest>> = BTreeMap::new();
    for r in requests {
        match depth[r.parent.index()] {
            Some(d) if parent_eligible(d, slot) && (r.dl_pending || r.ul_pending) => {
                by_parent.entry(r.parent).or_default().push(r)
            }
            _ => {}
        }
    }
    let mut grants = Vec::new();
    for (parent, mut links) in by_parent {
        links.sort_by_key(|r| r.link);
        let regions = formats[parent.index()].regions(frame);
        let multi = multi_beam[parent.index()];
        let mut next_beam = 1;
        let beams: Vec<(&LinkRequest, u32)> = links
            .iter()
            .map(|&r| {
                if multi && r.backhaul {
                    next_beam += 1;
                    (r, next_beam - 1)
                } else {
                    (r, 0)
                }
            })
            .collect();
        for dir in Direction::BOTH {
            let pending = |r: &LinkRequest| match dir {
                Direction::Dl => r.dl_pending,
                Direction::Ul => r.ul_pending,
            };
            let region = regions[dir.index()];
            let shared: Vec<_> = beams
                .iter()
                .filter(|(r, b)| *b == 0 && pending(r))
                .copied()
                .collect();
            share_region(&mut grants, &shared, dir, region);
            for &(r, b) in beams.iter().filter(|(r, b)| *b != 0 && pending(r)) {
                share_region(&mut grants, &[(r, b)], dir, region);
            }
        }
    }
    Allocation { slot, grants }
}

#[derive(Debug, Error, PartialEq)]
pub enum MacViolation {
    #[error("slot {slot}: node {node} transmits and receives at overlapping symbols")]
    TxRxOverlap { slot: u64, node: NodeId },
    #[error("slot {slot}: node {node} is scheduled both as parent and as child")]
    ParentAndChild { slot: u64, node: NodeId },
    #[error("slot {slot}: beam {beam} of node {node} carries {symbols} symbols")]
    BeamOverbooked {
        slot: u64,
        node: NodeId,
        beam: u32,
        symbols: f64,
    },
}

fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 - EPS && b.0 < a.1 - EPS
}

/// Merge sorted spans that overlap or touch.
fn union(spans: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for s in spans {
        match out.last_mut() {
            Some(last) if s.0 <= last.1 => last.1 = last.1.max(s.1),
            _ => out.push(s),
        }
    }
    out
}

fn any_overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if overlaps(a[i], b[j]) {
            return true;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    false
}

/// Check the half-duplex constraint and the per-beam symbol budget.
pub fn check_allocation(alloc: &Allocation, frame: &FrameStructure) -> Result<(), MacViolation> {
    let slot = alloc.slot;
    // (node, receiving, start, end)
    let mut spans = Vec::with_capacity(2 * alloc.grants.len());
    let mut beam_load = Vec::with_capacity(alloc.grants.len());
    let mut as_parent = Vec::with_capacity(alloc.grants.len());
    for g in &alloc.grants {
        let (t, r) = g.endpoints();
        spans.push((t, false, g.start, g.start + g.symbols));
        spans.push((r, true, g.start, g.start + g.symbols));
        beam_load.push((g.parent, g.beam, g.symbols));
        as_parent.push(g.parent);
    }
    spans.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    for group in spans.chunk_by(|a, b| a.0 == b.0) {
        let split = group.partition_point(|s| !s.1);
        if split == 0 || split == group.len() {
            continue;
        }
        let tx = union(group[..split].iter().map(|s| (s.2, s.3)));
        let rx = union(group[split..].iter().map(|s| (s.2, s.3)));
        if any_overlap(&tx, &rx) {
            return Err(MacViolation::TxRxOverlap { slot, node: group[0].0 });
        }
    }
    as_parent.sort();
    as_parent.dedup();
    if let Some(g) = alloc.grants.iter().find(|g| as_parent.binary_search(&g.child).is_ok()) {
        return Err(MacViolation::ParentAndChild { slot, node: g.child });
    }
    let budget = frame.usable_symbols() as f64 + EPS;
    beam_load.sort_by_key(|&(n, b, _)| (n, b));
    for group in beam_load.chunk_by(|a, b| (a.0, a.1) == (b.0, b.1)) {
        let symbols: f64 = group.iter().map(|x| x.2).sum();
        if symbols > budget {
            return Err(MacViolation::BeamOverbooked {
                slot,
                node: group[0].0,
                beam: group[0].1,
                symbols,
            });
        }
    }
    Ok(())
}
