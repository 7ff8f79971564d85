//! FTP model 3 sessions and per-node byte accounting.
//!
//! A session starts with all its bytes in a source pool at its origin (the
//! donor for DL, the UE for UL). Serving a link moves bytes from one node's
//! buffer to the next; bytes reaching the destination count as delivered.
//! `source + buffered + delivered == size` holds at all times.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::mac::{Direction, SLOT_DURATION};
use crate::scenario::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: u64,
    pub ue: NodeId,
    pub direction: Direction,
    pub size: u64,
    pub origin: NodeId,
    pub destination: NodeId,
    pub arrival: f64,
    pub completion: Option<f64>,
    /// Bytes not yet sent by the origin.
    pub source: u64,
    /// Bytes held at intermediate relays.
    pub buffers: Vec<(NodeId, u64)>,
    pub delivered: u64,
}

impl Session {
    pub fn new(id: u64, ue: NodeId, direction: Direction, size: u64, donor: NodeId, arrival: f64) -> Self {
        let (origin, destination) = match direction {
            Direction::Dl => (donor, ue),
            Direction::Ul => (ue, donor),
        };
        Self {
            id,
            ue,
            direction,
            size,
            origin,
            destination,
            arrival,
            completion: None,
            source: size,
            buffers: Vec::new(),
            delivered: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.completion.is_some()
    }

    /// Bytes currently held at `node` (the source pool at the origin).
    pub fn available_at(&self, node: NodeId) -> u64 {
        if node == self.origin {
            return self.source;
        }
        self.buffers
            .iter()
            .find(|(n, _)| *n == node)
            .map_or(0, |(_, b)| *b)
    }

    pub fn buffered(&self) -> u64 {
        self.buffers.iter().map(|(_, b)| b).sum()
    }

    fn take(&mut self, node: NodeId, bytes: u64) {
        if node == self.origin {
            self.source -= bytes;
            return;
        }
        let k = self.buffers.iter().position(|(n, _)| *n == node).expect("bytes held");
        self.buffers[k].1 -= bytes;
        if self.buffers[k].1 == 0 {
            self.buffers.swap_remove(k);
        }
    }

    fn put(&mut self, node: NodeId, bytes: u64) {
        if node == self.destination {
            self.delivered += bytes;
        } else if node == self.origin {
            self.source += bytes;
        } else if let Some(b) = self.buffers.iter_mut().find(|(n, _)| *n == node) {
            b.1 += bytes;
        } else {
            self.buffers.push((node, bytes));
        }
    }

    /// Move up to `bytes` from `from` to `to`, clipped to what `from` holds.
    /// Completes the session at `slot_end` when the last byte arrives.
    pub fn serve_bytes(&mut self, from: NodeId, to: NodeId, bytes: u64, slot_end: f64) -> u64 {
        let moved = bytes.min(self.available_at(from));
        if moved == 0 {
            return 0;
        }
        self.take(from, moved);
        self.put(to, moved);
        if self.delivered == self.size && self.completion.is_none() {
            self.completion = Some(slot_end);
        }
        moved
    }

    /// Send bytes stuck at `node` back to the origin. Returns the amount.
    pub fn return_to_source(&mut self, node: NodeId) -> u64 {
        if node == self.origin {
            return 0;
        }
        let held = self.available_at(node);
        if held > 0 {
            self.take(node, held);
            self.source += held;
        }
        held
    }

    /// Session throughput in bit/s; `None` while pending.
    pub fn throughput(&self) -> Option<f64> {
        let done = self.completion?;
        let duration = (done - self.arrival).max(SLOT_DURATION);
        Some(self.size as f64 * 8.0 / duration)
    }
}

/// Independent Poisson session processes per UE and direction, as
/// next-arrival timers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    ues: Vec<NodeId>,
    rates: [f64; 2],
    next: Vec<[f64; 2]>,
}

fn draw_gap<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    Exp::new(rate).expect("positive rate").sample(rng).max(1e-12)
}

impl ArrivalProcess {
    pub fn new<R: Rng + ?Sized>(ues: Vec<NodeId>, rate_dl: f64, rate_ul: f64, start: f64, rng: &mut R) -> Self {
        assert!(rate_dl >= 0.0 && rate_ul >= 0.0, "negative session rate");
        let rates = [rate_dl, rate_ul];
        let next = ues
            .iter()
            .map(|_| [start + draw_gap(rates[0], rng), start + draw_gap(rates[1], rng)])
            .collect();
        Self { ues, rates, next }
    }

    /// All arrivals at or before `now`, ordered by (time, ue, direction).
    pub fn generate_arrivals<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R) -> Vec<(NodeId, Direction, f64)> {
        let mut out = Vec::new();
        for (k, &ue) in self.ues.iter().enumerate() {
            for dir in Direction::BOTH {
                let d = dir.index();
                while self.next[k][d] <= now {
                    out.push((ue, dir, self.next[k][d]));
                    self.next[k][d] += draw_gap(self.rates[d], rng);
                }
            }
        }
        out.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        out
    }
}

pub const SESSION_LOG_HEADER: &str = "ue,direction,arrival,completion,throughput_bps";

pub fn write_session_log<'a, W, I>(mut out: W, sessions: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Session>,
{
    writeln!(out, "{SESSION_LOG_HEADER}")?;
    for s in sessions {
        let completion = s.completion.map(|c| format!("{c:.6}")).unwrap_or_default();
        let tput = s.throughput().map(|t| format!("{t:.1}")).unwrap_or_default();
        writeln!(out, "{},{},{:.6},{completion},{tput}", s.ue, s.direction, s.arrival)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    const MB2: u64 = 2_000_000;

    fn dl() -> Session {
        Session::new(0, NodeId(5), Direction::Dl, MB2, NodeId(0), 1.0)
    }

    #[test]
    fn serving_exactly_the_remainder_completes() {
        let mut s = dl();
        assert_eq!(s.serve_bytes(NodeId(0), NodeId(5), MB2, 1.5), MB2);
        assert_eq!(s.completion, Some(1.5));
        assert_eq!(s.throughput(), Some(32e6));
    }

    #[test]
    fn serving_is_clipped_to_upstream_bytes() {
        let mut s = dl();
        assert_eq!(s.serve_bytes(NodeId(0), NodeId(1), 1000, 1.0), 1000);
        assert_eq!(s.serve_bytes(NodeId(1), NodeId(5), 5000, 1.0), 1000);
        assert_eq!(s.serve_bytes(NodeId(1), NodeId(5), 5000, 1.0), 0);
        assert_eq!((s.source, s.buffered(), s.delivered), (MB2 - 1000, 0, 1000));
    }

    #[test]
    fn uplink_flows_towards_the_donor() {
        let mut s = Session::new(3, NodeId(5), Direction::Ul, 100, NodeId(0), 0.0);
        assert_eq!(s.origin, NodeId(5));
        s.serve_bytes(NodeId(5), NodeId(2), 60, 0.1);
        s.serve_bytes(NodeId(2), NodeId(0), 60, 0.2);
        assert_eq!(s.delivered, 60);
        assert_eq!(s.return_to_source(NodeId(2)), 0);
    }

    #[test]
    fn stranded_bytes_return_to_source() {
        let mut s = dl();
        s.serve_bytes(NodeId(0), NodeId(2), 700, 1.0);
        assert_eq!(s.return_to_source(NodeId(2)), 700);
        assert_eq!(s.source, MB2);
        assert!(s.buffers.is_empty());
    }

    #[test]
    fn throughput_examples() {
        let mut s = Session::new(0, NodeId(1), Direction::Dl, MB2, NodeId(0), 0.0);
        s.completion = Some(1.0);
        assert_eq!(s.throughput(), Some(16e6));
        s.completion = Some(0.1);
        assert!((s.throughput().unwrap() - 160e6).abs() < 1e-3);
        s.completion = Some(0.0);
        assert_eq!(s.throughput(), Some(MB2 as f64 * 8.0 / SLOT_DURATION));
        assert_eq!(dl().throughput(), None);
    }

    #[test]
    fn pipe_at_quarter_share_takes_016_s() {
        // 400 Mbit/s at 25% share: 12500 bytes per 1 ms tick.
        let mut s = Session::new(0, NodeId(1), Direction::Dl, MB2, NodeId(0), 0.0);
        let mut t = 0.0;
        while !s.is_complete() {
            t += 1e-3;
            s.serve_bytes(NodeId(0), NodeId(1), 12_500, t);
        }
        assert!((s.completion.unwrap() - 0.16).abs() < 1e-9);
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut rng = stream_rng(1, Stream::Traffic);
        let mut a = ArrivalProcess::new(vec![NodeId(1)], 0.0, 0.0, 0.0, &mut rng);
        assert!(a.generate_arrivals(1e6, &mut rng).is_empty());
    }

    #[test]
    fn poisson_count_matches_rate() {
        // Mean 0.5 * 1000 * 60 = 30000, sd ~173: 3% is about 5 sd.
        let mut rng = stream_rng(2, Stream::Traffic);
        let ues: Vec<_> = (1..=60).map(NodeId).collect();
        let mut a = ArrivalProcess::new(ues, 0.5, 0.2, 0.0, &mut rng);
        let all = a.generate_arrivals(1000.0, &mut rng);
        let dl = all.iter().filter(|x| x.1 == Direction::Dl).count() as f64;
        let ul = all.iter().filter(|x| x.1 == Direction::Ul).count() as f64;
        assert!((dl / 30_000.0 - 1.0).abs() < 0.03, "{dl}");
        assert!((ul / 12_000.0 - 1.0).abs() < 0.05, "{ul}");
        for ue in 1..=60 {
            let times: Vec<_> = all.iter().filter(|x| x.0 == NodeId(ue) && x.1 == Direction::Dl).map(|x| x.2).collect();
            assert!(times.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn arrivals_are_due_and_ordered() {
        let mut rng = stream_rng(3, Stream::Traffic);
        let ues: Vec<_> = (1..=5).map(NodeId).collect();
        let mut a = ArrivalProcess::new(ues, 2.0, 1.0, 0.0, &mut rng);
        let mut last = 0.0;
        for k in 1..=100 {
            let now = k as f64 * 0.1;
            let batch = a.generate_arrivals(now, &mut rng);
            assert!(batch.windows(2).all(|w| w[0].2 <= w[1].2));
            for x in batch {
                assert!(x.2 > last - 0.1 && x.2 <= now);
            }
            last = now;
        }
    }

    #[test]
    fn session_log_rows() {
        let mut s = dl();
        s.serve_bytes(NodeId(0), NodeId(5), MB2, 2.0);
        let mut buf = Vec::new();
        write_session_log(&mut buf, [&s, &dl()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[1], "5,DL,1.000000,2.000000,16000000.0");
        assert_eq!(lines[2], "5,DL,1.000000,,");
    }

    proptest! {
        /// Random serve sequences over a 3-hop route conserve bytes and
        /// never put more bytes downstream than passed upstream.
        #[test]
        fn conservation_under_random_serving(ops in proptest::collection::vec((0usize..3, 0u64..400_000), 0..200)) {
            let route = [NodeId(0), NodeId(1), NodeId(2), NodeId(7)];
            let mut s = Session::new(0, NodeId(7), Direction::Dl, MB2, NodeId(0), 0.0);
            let mut passed = [0u64; 3];
            for (hop, bytes) in ops {
                passed[hop] += s.serve_bytes(route[hop], route[hop + 1], bytes, 1.0);
                prop_assert_eq!(s.source + s.buffered() + s.delivered, MB2);
                prop_assert!(passed[1] <= passed[0] && passed[2] <= passed[1]);
            }
            prop_assert_eq!(s.delivered, passed[2]);
        }
    }
}
