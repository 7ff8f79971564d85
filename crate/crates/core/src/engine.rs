//! Slot-synchronous simulation loop and steady-state metrics.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockage::{stationary_blockage_probability, BlockageError, BlockageProcess, BlockerField};
use crate::connectivity::{build_candidates, ServingSet, SwitchEvent, SwitchReason};
use crate::mac::{
    check_allocation, count_active, schedule_slot, slot_formats, Direction, FrameStructure, Grant,
    LinkRequest, MacViolation, SlotFormat, TRACE_HEADER,
};
use crate::radio::{
    link_capacity_bps, los_probability, path_loss_db, rsrp_dbm, ChannelState, LinkBudget, LinkGeometry,
    Profile, RadioError,
};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::scenario::{
    generate_deployment, validate_config, Config, ConfigError, ConnectivityMode, NodeId, NodeKind, Scenario,
};
use crate::topology::{feasible_links, form_topology, is_admissible, Topology, TopologyError};
use crate::traffic::{ArrivalProcess, Session};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<ConfigError>),
    #[error("t = {time:.3} s: {source}")]
    Topology { time: f64, source: TopologyError },
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Blockage(#[from] BlockageError),
    #[error("half-duplex or beam budget violation: {0}")]
    Mac(#[from] MacViolation),
    #[error("byte conservation audit failed: {0}")]
    Conservation(String),
    #[error("trace output: {0}")]
    Io(#[from] io::Error),
}

/// Mean session throughput of one UE over post-warmup sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeThroughput {
    pub ue: NodeId,
    pub completed: u64,
    pub mean_bps: Option<f64>,
    pub mean_dl_bps: Option<f64>,
    pub mean_ul_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSummary {
    pub per_ue: Vec<UeThroughput>,
    /// Mean over UEs with at least one completed session.
    pub mean_ue_throughput_bps: Option<f64>,
    pub mean_dl_throughput_bps: Option<f64>,
    pub mean_ul_throughput_bps: Option<f64>,
    pub ues_with_data: usize,
    pub completed_sessions: u64,
    pub pending_sessions: u64,
    pub insufficient_data: bool,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-UE and network means over sessions that arrived at or after
/// `warmup`. Sessions still pending count towards `pending_sessions` only.
pub fn collect_metrics<'a, I>(sessions: I, ues: &[NodeId], warmup: f64) -> ThroughputSummary
where
    I: IntoIterator<Item = &'a Session>,
{
    let first = ues.first().map_or(0, |u| u.index());
    let mut per: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; ues.len()];
    let mut pending = 0;
    for s in sessions {
        if s.arrival < warmup {
            continue;
        }
        match s.throughput() {
            Some(t) => per[s.ue.index() - first][s.direction.index()].push(t),
            None => pending += 1,
        }
    }
    let per_ue: Vec<UeThroughput> = ues
        .iter()
        .zip(&per)
        .map(|(&ue, [dl, ul])| {
            let all: Vec<f64> = dl.iter().chain(ul).copied().collect();
            UeThroughput {
                ue,
                completed: all.len() as u64,
                mean_bps: mean(&all),
                mean_dl_bps: mean(dl),
                mean_ul_bps: mean(ul),
            }
        })
        .collect();
    let collect = |f: fn(&UeThroughput) -> Option<f64>| -> Vec<f64> { per_ue.iter().filter_map(f).collect() };
    let network = collect(|u| u.mean_bps);
    ThroughputSummary {
        mean_ue_throughput_bps: mean(&network),
        mean_dl_throughput_bps: mean(&collect(|u| u.mean_dl_bps)),
        mean_ul_throughput_bps: mean(&collect(|u| u.mean_ul_bps)),
        ues_with_data: network.len(),
        completed_sessions: per_ue.iter().map(|u| u.completed).sum(),
        pending_sessions: pending,
        insufficient_data: network.is_empty(),
        per_ue,
    }
}

/// End-of-run byte balance over every session ever created.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationAudit {
    pub offered_bytes: u64,
    pub delivered_bytes: u64,
    pub completed_bytes: u64,
    pub in_flight_delivered_bytes: u64,
    pub in_flight_source_bytes: u64,
    pub in_flight_buffered_bytes: u64,
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config: Config,
    pub throughput: ThroughputSummary,
    pub switches: u64,
    pub switches_blockage: u64,
    pub switches_scan: u64,
    /// Time-averaged bytes waiting at relays (excluding source pools).
    pub mean_relay_queue_bytes: f64,
    pub mean_sessions_in_flight: f64,
    /// Time-averaged DL coefficient over attached scheduling nodes.
    pub mean_c_dl: f64,
    pub mean_detached_ues: f64,
    pub half_duplex_slots_checked: u64,
    pub conservation: ConservationAudit,
    pub warmup_excluded: bool,
    pub slots: u64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Default)]
struct Stats {
    slots_checked: u64,
    frames: u64,
    relay_queue: f64,
    in_flight: f64,
    c_dl: f64,
    detached: f64,
    delivered: u64,
    offered: u64,
}

/// Per-slot scratch entry of one link.
#[derive(Debug, Clone, Default)]
struct LinkUse {
    parent: NodeId,
    child: NodeId,
    backhaul: bool,
    /// `(session index, node the bytes leave from)` per direction.
    users: [Vec<(usize, NodeId)>; 2],
}

pub struct Simulation {
    cfg: Config,
    scenario: Scenario,
    frame: FrameStructure,
    field: BlockerField,
    n: usize,
    first_ue: usize,
    relays: usize,
    slot: u64,
    total_slots: u64,
    epoch_slots: u64,
    mobility_slots: u64,
    rng_mobility: SimRng,
    rng_channel: SimRng,
    rng_blockage: SimRng,
    rng_traffic: SimRng,
    rsrp_dl: Vec<f64>,
    rsrp_ul: Vec<f64>,
    blockage: Vec<BlockageProcess>,
    next_blockage: f64,
    topology: Topology,
    serving: Vec<ServingSet>,
    formats: Vec<SlotFormat>,
    multi_beam: Vec<bool>,
    beam_split_db: Vec<f64>,
    arrivals: ArrivalProcess,
    /// Every session ever created; the index is the session id.
    sessions: Vec<Session>,
    /// In-flight session ids per UE and direction, oldest first.
    queues: Vec<[Vec<usize>; 2]>,
    /// Whether a session's bytes have ever left its origin.
    departed: Vec<bool>,
    /// In-flight departed sessions per UE and direction.
    departed_count: Vec<[usize; 2]>,
    in_flight: usize,
    /// Bytes at one holder beyond which no later session can be reached in
    /// a slot.
    holder_quota: u64,
    switch_log: Vec<SwitchEvent>,
    stats: Stats,
    links: Vec<LinkUse>,
    touched: Vec<usize>,
    trace: Option<Box<dyn Write + Send>>,
}

impl Simulation {
    pub fn new(cfg: Config) -> Result<Self, EngineError> {
        let cfg = validate_config(cfg).map_err(EngineError::Config)?;
        let seed = cfg.seed;
        let scenario = generate_deployment(&cfg, seed);
        let frame = FrameStructure::new(cfg.guard_symbols);
        let dt = frame.slot_duration;
        let n = scenario.nodes.len();
        let first_ue = scenario.first_ue();
        let relays = first_ue;
        let field = BlockerField::from_config(&cfg);
        let mut rng_blockage = stream_rng(seed, Stream::Blockage);
        let mut blockage = Vec::with_capacity(relays * cfg.num_ues);
        for r in 0..relays {
            for u in first_ue..n {
                let proc = if field.density == 0.0 {
                    BlockageProcess::never_blocked()
                } else {
                    let g = LinkGeometry::between(&scenario.nodes[r], &scenario.nodes[u]);
                    let p = stationary_blockage_probability(&g, &field)?;
                    BlockageProcess::new(p, field.mean_blocked(), 0.0, &mut rng_blockage)
                };
                blockage.push(proc);
            }
        }
        let next_blockage = blockage.iter().map(|b| b.next_transition).fold(f64::INFINITY, f64::min);
        let mut rng_traffic = stream_rng(seed, Stream::Traffic);
        let ue_ids: Vec<NodeId> = scenario.ue_ids().collect();
        let arrivals = ArrivalProcess::new(
            ue_ids.clone(),
            cfg.session_rate_dl,
            cfg.session_rate_ul,
            0.0,
            &mut rng_traffic,
        );
        let serving = ue_ids
            .iter()
            .map(|&u| ServingSet::new(u, cfg.connectivity_mode, Vec::new(), cfg.mc_degree, 0.0))
            .collect();
        let multi_beam = scenario.nodes.iter().map(|n| n.multi_beam).collect();
        let slots = |t: f64| ((t / dt).round() as u64).max(1);
        Ok(Self {
            total_slots: slots(cfg.sim_duration),
            epoch_slots: slots(cfg.topology_period),
            mobility_slots: slots(cfg.mobility_tick),
            rng_mobility: stream_rng(seed, Stream::Mobility),
            rng_channel: stream_rng(seed, Stream::Channel),
            rng_blockage,
            rng_traffic,
            rsrp_dl: vec![f64::NEG_INFINITY; n * n],
            rsrp_ul: vec![f64::NEG_INFINITY; n * n],
            blockage,
            next_blockage,
            topology: Topology::root_only(&scenario),
            serving,
            formats: vec![crate::mac::slot_format_static(); n],
            multi_beam,
            beam_split_db: vec![0.0; n],
            arrivals,
            sessions: Vec::new(),
            queues: vec![[Vec::new(), Vec::new()]; cfg.num_ues],
            departed: Vec::new(),
            departed_count: vec![[0, 0]; cfg.num_ues],
            in_flight: 0,
            holder_quota: cfg.mc_degree as u64 * (cfg.bandwidth * cfg.se_cap * dt / 8.0).ceil() as u64 + 1,
            switch_log: Vec::new(),
            stats: Stats::default(),
            links: vec![LinkUse::default(); 2 * n],
            touched: Vec::new(),
            trace: None,
            cfg,
            scenario,
            frame,
            field,
            n,
            first_ue,
            relays,
            slot: 0,
        })
    }

    /// Write every slot's allocation as CSV rows to `out`.
    pub fn set_trace(&mut self, mut out: Box<dyn Write + Send>) -> io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        self.trace = Some(out);
        Ok(())
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn serving_sets(&self) -> &[ServingSet] {
        &self.serving
    }

    pub fn switch_log(&self) -> &[SwitchEvent] {
        &self.switch_log
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn now(&self) -> f64 {
        self.slot as f64 * self.frame.slot_duration
    }

    pub fn is_finished(&self) -> bool {
        self.slot >= self.total_slots
    }

    /// Every session created so far, in id order.
    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    fn in_flight_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.queues.iter().flat_map(|q| q[0].iter().chain(&q[1]).copied())
    }

    fn ue_index(&self, ue: NodeId) -> usize {
        ue.index() - self.first_ue
    }

    fn blockage_index(&self, relay: NodeId, ue: NodeId) -> usize {
        relay.index() * self.cfg.num_ues + self.ue_index(ue)
    }

    pub fn is_blocked(&self, relay: NodeId, ue: NodeId) -> bool {
        self.blockage[self.blockage_index(relay, ue)].is_blocked()
    }

    /// Unblocked full-power RSRP of the downstream link `parent -> child`.
    pub fn link_rsrp(&self, parent: NodeId, child: NodeId) -> f64 {
        self.rsrp_dl[parent.index() * self.n + child.index()]
    }

    /// Run to the configured duration and return the report.
    pub fn run(mut self) -> Result<MetricsReport, EngineError> {
        while !self.is_finished() {
            self.step()?;
        }
        self.report()
    }

    /// Advance one slot.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let k = self.slot;
        let dt = self.frame.slot_duration;
        let now = k as f64 * dt;

        if k > 0 && k % self.mobility_slots == 0 {
            self.scenario
                .step_mobility(self.mobility_slots as f64 * dt, &mut self.rng_mobility);
        }
        self.advance_blockage(now);
        if k % self.epoch_slots == 0 {
            self.topology_epoch(now)?;
        }
        if self.cfg.connectivity_mode == ConnectivityMode::ScFsScan {
            self.scan(now);
        }
        if k % self.frame.slots_per_frame == 0 {
            self.update_formats();
        }
        for (ue, direction, t) in self.arrivals.generate_arrivals(now, &mut self.rng_traffic) {
            let id = self.sessions.len();
            let s = Session::new(id as u64, ue, direction, self.cfg.file_size, self.scenario.donor(), t);
            self.stats.offered += s.size;
            self.sessions.push(s);
            self.departed.push(false);
            self.queues[ue.index() - self.first_ue][direction.index()].push(id);
            self.in_flight += 1;
        }

        let requests = self.build_requests(k);
        let depth = &self.topology.depth;
        let alloc = schedule_slot(&requests, depth, &self.formats, &self.multi_beam, &self.frame, k);
        check_allocation(&alloc, &self.frame)?;
        self.stats.slots_checked += 1;
        if let Some(out) = self.trace.as_mut() {
            alloc.write_trace(out)?;
        }
        let slot_end = now + dt;
        let mut completed = Vec::new();
        for g in &alloc.grants {
            self.serve_grant(g, slot_end, &mut completed);
        }
        for id in self.touched.drain(..) {
            let l = &mut self.links[id];
            l.users[0].clear();
            l.users[1].clear();
        }
        for id in completed {
            let s = &self.sessions[id];
            let (u, d) = (s.ue.index() - self.first_ue, s.direction.index());
            let q = &mut self.queues[u][d];
            let pos = q.iter().position(|&x| x == id).expect("in-flight session");
            q.remove(pos);
            self.departed_count[u][d] -= 1;
            self.in_flight -= 1;
        }
        self.slot += 1;
        Ok(())
    }

    fn advance_blockage(&mut self, now: f64) {
        if now < self.next_blockage {
            return;
        }
        let mut changed = BTreeSet::new();
        let per_relay = self.cfg.num_ues;
        for (i, proc) in self.blockage.iter_mut().enumerate() {
            if proc.advance(now, &mut self.rng_blockage) > 0 {
                changed.insert(i % per_relay);
            }
        }
        self.next_blockage = self
            .blockage
            .iter()
            .map(|b| b.next_transition)
            .fold(f64::INFINITY, f64::min);
        for u in changed {
            self.react_to_blockage(u, now);
        }
    }

    fn react_to_blockage(&mut self, u: usize, now: f64) {
        let per_relay = self.cfg.num_ues;
        let blockage = &self.blockage;
        let ev = self.serving[u].on_blockage_change(
            |r| blockage[r.index() * per_relay + u].is_blocked(),
            now,
            self.cfg.switch_delay,
        );
        if let Some(ev) = ev {
            self.record_switch(ev);
        }
    }

    fn scan(&mut self, now: f64) {
        let per_relay = self.cfg.num_ues;
        let extra = self.cfg.blockage_extra_loss;
        for u in 0..self.serving.len() {
            let blockage = &self.blockage;
            let ev = self.serving[u].periodic_scan(
                self.cfg.association_scheme,
                |r| {
                    if blockage[r.index() * per_relay + u].is_blocked() {
                        extra
                    } else {
                        0.0
                    }
                },
                self.cfg.rsrp_threshold,
                now,
                self.cfg.scan_period,
                self.cfg.switch_delay,
            );
            if let Some(ev) = ev {
                self.record_switch(ev);
            }
        }
    }

    fn record_switch(&mut self, ev: SwitchEvent) {
        self.switch_log.push(ev);
        self.restrand_ue(ev.ue);
    }

    /// Redraw LOS states and shadowing, rebuild the tree and every serving
    /// set.
    fn topology_epoch(&mut self, now: f64) -> Result<(), EngineError> {
        let n = self.n;
        let fc = self.cfg.carrier_frequency;
        for a in 0..n {
            for b in a + 1..n {
                let (na, nb) = (&self.scenario.nodes[a], &self.scenario.nodes[b]);
                let down = if is_admissible(na.kind, nb.kind) {
                    Some((na, nb))
                } else if is_admissible(nb.kind, na.kind) {
                    Some((nb, na))
                } else {
                    None
                };
                let Some((p, c)) = down else { continue };
                let geom = LinkGeometry::between(p, c);
                let profile = Profile::for_link(p, c);
                let los = self.rng_channel.gen::<f64>() < los_probability(&geom, profile);
                let sigma = profile.shadowing_sigma(los);
                let shadowing = Normal::new(0.0, sigma).expect("finite sigma").sample(&mut self.rng_channel);
                let ch = ChannelState {
                    los,
                    blocked: false,
                    path_loss: path_loss_db(&geom, profile, los, fc)?,
                    shadowing,
                };
                let idx = p.id.index() * n + c.id.index();
                self.rsrp_dl[idx] = rsrp_dbm(p, c, &ch, 1, 0.0);
                self.rsrp_ul[idx] = rsrp_dbm(c, p, &ch, 1, 0.0);
                if c.kind == NodeKind::Iab {
                    // Relay pairs may serve in either direction.
                    let rev = c.id.index() * n + p.id.index();
                    self.rsrp_dl[rev] = self.rsrp_ul[idx];
                    self.rsrp_ul[rev] = self.rsrp_dl[idx];
                }
            }
        }
        let rsrp = &self.rsrp_dl;
        let links = feasible_links(&self.scenario, |p, c| rsrp[p.index() * n + c.index()], self.cfg.rsrp_threshold)
            .map_err(|source| EngineError::Topology { time: now, source })?;
        self.topology = form_topology(self.cfg.association_scheme, &self.scenario, &links);
        for node in 0..self.relays {
            let id = NodeId(node as u32);
            self.beam_split_db[node] = if self.multi_beam[node] {
                10.0 * ((self.topology.backhaul_children(id) + 1) as f64).log10()
            } else {
                0.0
            };
        }
        if self.field.density > 0.0 {
            for r in 0..self.relays {
                for u in self.first_ue..n {
                    let g = LinkGeometry::between(&self.scenario.nodes[r], &self.scenario.nodes[u]);
                    let p = stationary_blockage_probability(&g, &self.field)?;
                    let i = self.blockage_index(NodeId(r as u32), NodeId(u as u32));
                    self.blockage[i].retune(p);
                }
            }
        }
        for u in 0..self.serving.len() {
            let ue = NodeId((self.first_ue + u) as u32);
            let access = (0..self.relays).filter_map(|r| links.rsrp(NodeId(r as u32), ue).map(|x| (NodeId(r as u32), x)));
            let cands = build_candidates(self.cfg.association_scheme, access, &self.topology);
            self.serving[u].refresh(cands, self.cfg.mc_degree);
            self.react_to_blockage(u, now);
        }
        let ids: Vec<usize> = self.in_flight_ids().collect();
        for i in ids {
            self.restrand_session(i);
        }
        self.stats.detached += self.topology.detached.len() as f64;
        Ok(())
    }

    /// Return bytes that can no longer reach their destination to the
    /// origin.
    fn restrand_session(&mut self, i: usize) {
        let s = &self.sessions[i];
        let holders: Vec<NodeId> = s.buffers.iter().map(|(node, _)| *node).collect();
        let set = &self.serving[s.ue.index() - self.first_ue];
        let stranded: Vec<NodeId> = holders
            .into_iter()
            .filter(|&x| match s.direction {
                Direction::Dl => !set.active.iter().any(|&a| self.topology.is_ancestor_or_self(x, a)),
                Direction::Ul => !self.topology.is_attached(x),
            })
            .collect();
        for x in stranded {
            self.sessions[i].return_to_source(x);
        }
    }

    fn restrand_ue(&mut self, ue: NodeId) {
        let q = &self.queues[ue.index() - self.first_ue];
        let ids: Vec<usize> = q[0].iter().chain(&q[1]).copied().collect();
        for i in ids {
            self.restrand_session(i);
        }
    }

    fn update_formats(&mut self) {
        let active: Vec<(bool, bool)> = self.queues.iter().map(|q| (!q[0].is_empty(), !q[1].is_empty())).collect();
        let first = self.first_ue;
        let counts = count_active(
            &self.topology,
            active.iter().enumerate().map(|(u, &(dl, ul))| (NodeId((first + u) as u32), dl, ul)),
        );
        self.formats = slot_formats(self.cfg.slot_format_policy, &counts);

        let attached: Vec<usize> = (0..self.relays).filter(|&r| self.topology.depth[r].is_some()).collect();
        let c_dl = attached.iter().map(|&r| self.formats[r].c_dl).sum::<f64>() / attached.len() as f64;
        self.stats.frames += 1;
        self.stats.c_dl += c_dl;
        self.stats.in_flight += self.in_flight as f64;
        let queued: u64 = self.in_flight_ids().map(|i| self.sessions[i].buffered()).sum();
        self.stats.relay_queue += queued as f64;
    }

    fn use_link(&mut self, id: usize, parent: NodeId, child: NodeId, dir: Direction, user: (usize, NodeId)) {
        let l = &mut self.links[id];
        if l.users[0].is_empty() && l.users[1].is_empty() {
            self.touched.push(id);
            l.parent = parent;
            l.child = child;
            l.backhaul = child.index() < self.first_ue;
        }
        let users = &mut l.users[dir.index()];
        if users.last() != Some(&user) {
            users.push(user);
        }
    }

    /// Which links could move bytes of which sessions in slot `k`.
    ///
    /// Sessions of one UE and direction are visited oldest first. Once a
    /// holder has more bytes lined up than any slot can drain, younger
    /// sessions at that holder are skipped; a session that never left its
    /// origin after that point cannot be reached at all.
    fn build_requests(&mut self, k: u64) -> Vec<LinkRequest> {
        let now = k as f64 * self.frame.slot_duration;
        let parity_ok = |t: &Topology, x: NodeId| t.depth[x.index()].is_some_and(|d| d as u64 % 2 == k % 2);
        let turn = ((k / 2) % 2) as usize;
        let mut uses = Vec::new();
        let mut lined_up: Vec<(NodeId, u64)> = Vec::new();
        for (u, queues) in self.queues.iter().enumerate() {
            let set = &self.serving[u];
            let t = &self.topology;
            let ue = NodeId((self.first_ue + u) as u32);
            let ue_link = ue.index() * 2;
            let reachable = now >= set.blackout_until;
            // Two serving nodes in the same phase take turns.
            let same_phase = set.active.len() == 2
                && t.depth[set.active[0].index()].map(|d| d % 2) == t.depth[set.active[1].index()].map(|d| d % 2);
            let access_ok = |kk: usize| reachable && (!same_phase || kk == turn);
            for (d, queue) in queues.iter().enumerate() {
                lined_up.clear();
                let mut departed_seen = 0;
                for &si in queue {
                    let s = &self.sessions[si];
                    let origin_full = lined_up
                        .iter()
                        .any(|&(x, b)| x == s.origin && b >= self.holder_quota);
                    if self.departed[si] {
                        departed_seen += 1;
                    } else if origin_full && departed_seen == self.departed_count[u][d] {
                        break;
                    }
                    let holders = (s.source > 0)
                        .then_some((s.origin, s.source))
                        .into_iter()
                        .chain(s.buffers.iter().copied());
                    for (x, bytes) in holders {
                        let slot = match lined_up.iter().position(|&(y, _)| y == x) {
                            Some(p) => p,
                            None => {
                                lined_up.push((x, 0));
                                lined_up.len() - 1
                            }
                        };
                        if lined_up[slot].1 >= self.holder_quota {
                            continue;
                        }
                        lined_up[slot].1 += bytes;
                        match s.direction {
                            Direction::Dl => {
                                if !parity_ok(t, x) {
                                    continue;
                                }
                                for (kk, &a) in set.active.iter().enumerate() {
                                    if x == a {
                                        if access_ok(kk) {
                                            uses.push((ue_link + kk, a, ue, Direction::Dl, (si, x)));
                                        }
                                    } else if let Some(c) = t.next_hop_towards(x, a) {
                                        uses.push((c.index() * 2, x, c, Direction::Dl, (si, x)));
                                    }
                                }
                            }
                            Direction::Ul if x == ue => {
                                for (kk, &a) in set.active.iter().enumerate() {
                                    if parity_ok(t, a) && access_ok(kk) {
                                        uses.push((ue_link + kk, a, ue, Direction::Ul, (si, ue)));
                                    }
                                }
                            }
                            Direction::Ul => {
                                if let Some(p) = t.parent[x.index()] {
                                    if parity_ok(t, p) {
                                        uses.push((x.index() * 2, p, x, Direction::Ul, (si, x)));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        // Links are filled oldest session first across UEs.
        uses.sort_by_key(|&(id, _, _, dir, (si, _))| (id, dir, si));
        for (id, parent, child, dir, user) in uses {
            self.use_link(id, parent, child, dir, user);
        }
        self.touched.sort_unstable();
        self.touched
            .iter()
            .map(|&id| {
                let l = &self.links[id];
                LinkRequest {
                    link: id as u32,
                    parent: l.parent,
                    child: l.child,
                    backhaul: l.backhaul,
                    dl_pending: !l.users[0].is_empty(),
                    ul_pending: !l.users[1].is_empty(),
                }
            })
            .collect()
    }

    /// Achievable rate of a grant's link for the grant's symbols.
    pub fn grant_capacity_bps(&self, g: &Grant) -> f64 {
        let idx = g.parent.index() * self.n + g.child.index();
        let (mut rsrp, rx) = match g.direction {
            Direction::Dl => (self.rsrp_dl[idx] - self.beam_split_db[g.parent.index()], g.child),
            Direction::Ul => (self.rsrp_ul[idx], g.parent),
        };
        if g.child.index() >= self.first_ue && self.is_blocked(g.parent, g.child) {
            rsrp -= self.cfg.blockage_extra_loss;
        }
        let budget = LinkBudget::new(rsrp, self.scenario.node(rx).noise_figure, &self.cfg);
        link_capacity_bps(&budget, g.fraction(), &self.cfg)
    }

    fn serve_grant(&mut self, g: &Grant, slot_end: f64, completed: &mut Vec<usize>) {
        let bits = self.grant_capacity_bps(g) * self.frame.slot_duration;
        let mut budget = (bits / 8.0).floor() as u64;
        let to = match g.direction {
            Direction::Dl => g.child,
            Direction::Ul => g.parent,
        };
        let users = std::mem::take(&mut self.links[g.link as usize].users[g.direction.index()]);
        for &(si, from) in &users {
            if budget == 0 {
                break;
            }
            let s = &mut self.sessions[si];
            let moved = s.serve_bytes(from, to, budget, slot_end);
            if moved == 0 {
                continue;
            }
            if to == s.destination {
                self.stats.delivered += moved;
            }
            if from == s.origin && !self.departed[si] {
                self.departed[si] = true;
                self.departed_count[s.ue.index() - self.first_ue][s.direction.index()] += 1;
            }
            if s.is_complete() {
                completed.push(si);
            }
            budget -= moved;
        }
        self.links[g.link as usize].users[g.direction.index()] = users;
    }

    pub fn audit(&self) -> ConservationAudit {
        let (done, open): (Vec<&Session>, Vec<&Session>) = self.sessions.iter().partition(|s| s.is_complete());
        let completed: u64 = done.iter().map(|s| s.size).sum();
        let in_delivered: u64 = open.iter().map(|s| s.delivered).sum();
        let source: u64 = open.iter().map(|s| s.source).sum();
        let buffered: u64 = open.iter().map(|s| s.buffered()).sum();
        let offered = self.stats.offered;
        let delivered = self.stats.delivered;
        let sizes: u64 = self.sessions.iter().map(|s| s.size).sum();
        ConservationAudit {
            offered_bytes: offered,
            delivered_bytes: delivered,
            completed_bytes: completed,
            in_flight_delivered_bytes: in_delivered,
            in_flight_source_bytes: source,
            in_flight_buffered_bytes: buffered,
            balanced: delivered == completed + in_delivered
                && offered == sizes
                && offered == delivered + source + buffered,
        }
    }

    pub fn report(&self) -> Result<MetricsReport, EngineError> {
        let conservation = self.audit();
        if !conservation.balanced {
            return Err(EngineError::Conservation(format!("{conservation:?}")));
        }
        let ues: Vec<NodeId> = self.scenario.ue_ids().collect();
        let throughput = collect_metrics(self.sessions(), &ues, self.cfg.warmup);
        let count = |r: SwitchReason| self.switch_log.iter().filter(|e| e.reason == r).count() as u64;
        let frames = self.stats.frames.max(1) as f64;
        let epochs = self.slot.div_ceil(self.epoch_slots).max(1) as f64;
        Ok(MetricsReport {
            seed: self.cfg.seed,
            config: self.cfg.clone(),
            throughput,
            switches: self.switch_log.len() as u64,
            switches_blockage: count(SwitchReason::Blockage),
            switches_scan: count(SwitchReason::Scan),
            mean_relay_queue_bytes: self.stats.relay_queue / frames,
            mean_sessions_in_flight: self.stats.in_flight / frames,
            mean_c_dl: self.stats.c_dl / frames,
            mean_detached_ues: self.stats.detached / epochs,
            half_duplex_slots_checked: self.stats.slots_checked,
            conservation,
            warmup_excluded: self.cfg.warmup > 0.0,
            slots: self.slot,
        })
    }
}

/// Validate, simulate and report in one call.
pub fn run(cfg: Config) -> Result<MetricsReport, EngineError> {
    Simulation::new(cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::SLOT_DURATION;

    fn finished(ue: u32, dir: Direction, arrival: f64, tput: f64) -> Session {
        let mut s = Session::new(0, NodeId(ue), dir, 2_000_000, NodeId(0), arrival);
        s.serve_bytes(s.origin, s.destination, s.size, arrival + 16e6 / tput);
        s
    }

    #[test]
    fn single_session_mean() {
        let s = [finished(1, Direction::Dl, 20.0, 16e6)];
        let m = collect_metrics(&s, &[NodeId(1)], 10.0);
        assert!((m.mean_ue_throughput_bps.unwrap() - 16e6).abs() < 1e-3);
        assert_eq!(m.completed_sessions, 1);
    }

    #[test]
    fn warmup_sessions_and_idle_ues_are_excluded() {
        let s = [
            finished(1, Direction::Dl, 5.0, 1e6),
            finished(1, Direction::Dl, 20.0, 16e6),
            finished(1, Direction::Ul, 30.0, 8e6),
        ];
        let m = collect_metrics(&s, &[NodeId(1), NodeId(2)], 10.0);
        assert_eq!(m.ues_with_data, 1);
        assert!((m.mean_ue_throughput_bps.unwrap() - 12e6).abs() < 1e-3);
        assert!((m.mean_dl_throughput_bps.unwrap() - 16e6).abs() < 1e-3);
        assert_eq!(m.per_ue[1].mean_bps, None);
        assert!(!m.insufficient_data);
    }

    #[test]
    fn no_completions_is_flagged() {
        let pending = Session::new(0, NodeId(1), Direction::Dl, 10, NodeId(0), 50.0);
        let m = collect_metrics([&pending], &[NodeId(1)], 10.0);
        assert!(m.insufficient_data);
        assert_eq!(m.pending_sessions, 1);
        assert_eq!(m.mean_ue_throughput_bps, None);
    }

    fn small(seed: u64) -> Config {
        Config {
            num_ues: 10,
            num_iab: 2,
            sim_duration: 3.0,
            warmup: 0.5,
            seed,
            session_rate_dl: 2.0,
            session_rate_ul: 1.0,
            ..Config::default()
        }
    }

    #[test]
    fn short_run_is_deterministic_and_balanced() {
        let a = run(small(4)).unwrap();
        let b = run(small(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.conservation.balanced);
        assert_eq!(a.half_duplex_slots_checked, a.slots);
        assert_eq!(a.slots, (3.0 / SLOT_DURATION) as u64);
        assert!(a.throughput.completed_sessions > 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = Config {
            cell_radius: 0.0,
            ..Config::default()
        };
        assert!(matches!(Simulation::new(cfg), Err(EngineError::Config(_))));
    }
}
