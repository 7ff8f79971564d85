//! Human-body blockage as an alternating renewal process.
//!
//! Each UE link flips between unblocked and blocked sojourns. The stationary
//! blocked probability comes from the expected number of blockers inside the
//! zone that shadows the line of sight; blocked sojourns last as long as a
//! blocker needs to cross the link, and unblocked sojourns are scaled so the
//! long-run blocked fraction equals the stationary probability.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::LinkGeometry;
use crate::scenario::Config;

#[derive(Debug, Error, PartialEq)]
pub enum BlockageError {
    #[error("transmitter must be above receiver for blockage zone (tx {tx} m, rx {rx} m)")]
    TransmitterNotAbove { tx: f64, rx: f64 },
    #[error("blocker density must be non-negative, got {0}")]
    NegativeDensity(f64),
}

/// Blocker population shared by every link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockerField {
    pub density: f64,
    pub radius: f64,
    pub height: f64,
    pub speed: f64,
}

impl BlockerField {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            density: cfg.blocker_density,
            radius: cfg.blocker_radius,
            height: cfg.height_blocker,
            speed: cfg.ue_speed,
        }
    }

    /// Mean time a blocker needs to cross a link.
    pub fn mean_blocked(&self) -> f64 {
        2.0 * self.radius / self.speed
    }
}

/// Probability that at least one blocker sits in the link's shadow zone.
pub fn stationary_blockage_probability(
    geom: &LinkGeometry,
    field: &BlockerField,
) -> Result<f64, BlockageError> {
    if field.density < 0.0 {
        return Err(BlockageError::NegativeDensity(field.density));
    }
    let (h_tx, h_rx) = (geom.h_bs, geom.h_ut);
    if h_tx <= h_rx {
        return Err(BlockageError::TransmitterNotAbove { tx: h_tx, rx: h_rx });
    }
    if field.density == 0.0 {
        return Ok(0.0);
    }
    let shadow = (geom.d2d * (field.height - h_rx) / (h_tx - h_rx)).max(0.0);
    let zone = shadow + field.radius;
    Ok(1.0 - (-2.0 * field.density * field.radius * zone).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockageState {
    Blocked,
    Unblocked,
}

pub fn sample_initial_state<R: Rng + ?Sized>(p: f64, rng: &mut R) -> BlockageState {
    assert!((0.0..=1.0).contains(&p), "blockage probability {p} outside [0, 1]");
    if rng.gen::<f64>() < p {
        BlockageState::Blocked
    } else {
        BlockageState::Unblocked
    }
}

/// Blocked/unblocked renewal process of a single link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockageProcess {
    pub state: BlockageState,
    pub next_transition: f64,
    pub p_stationary: f64,
    pub mean_blocked: f64,
    /// Infinite when the link can never be blocked.
    pub mean_unblocked: f64,
    last_now: f64,
}

fn draw_sojourn<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean.is_infinite() {
        return f64::INFINITY;
    }
    let d = Exp::new(1.0 / mean).expect("positive mean").sample(rng);
    d.max(1e-12)
}

impl BlockageProcess {
    /// Start a process at time `now` in its stationary regime.
    pub fn new<R: Rng + ?Sized>(p: f64, mean_blocked: f64, now: f64, rng: &mut R) -> Self {
        assert!(mean_blocked > 0.0, "mean blocked duration must be positive");
        let p = p.clamp(0.0, 1.0);
        let mean_unblocked = if p == 0.0 {
            f64::INFINITY
        } else {
            mean_blocked * (1.0 - p) / p
        };
        let state = sample_initial_state(p, rng);
        let mut proc = Self {
            state,
            next_transition: f64::INFINITY,
            p_stationary: p,
            mean_blocked,
            mean_unblocked,
            last_now: now,
        };
        if p == 1.0 {
            // Permanently blocked: no unblocked sojourn exists.
            return proc;
        }
        proc.next_transition = now + draw_sojourn(proc.current_mean(), rng);
        proc
    }

    /// An unblockable link, for backhaul and blocker-free fields.
    pub fn never_blocked() -> Self {
        Self {
            state: BlockageState::Unblocked,
            next_transition: f64::INFINITY,
            p_stationary: 0.0,
            mean_blocked: 1.0,
            mean_unblocked: f64::INFINITY,
            last_now: 0.0,
        }
    }

    fn current_mean(&self) -> f64 {
        match self.state {
            BlockageState::Blocked => self.mean_blocked,
            BlockageState::Unblocked => self.mean_unblocked,
        }
    }

    /// New stationary probability for future sojourns, e.g. after the link
    /// geometry changed. The current sojourn is kept.
    pub fn retune(&mut self, p: f64) {
        let p = p.clamp(0.0, 1.0);
        self.p_stationary = p;
        self.mean_unblocked = if p == 0.0 {
            f64::INFINITY
        } else {
            self.mean_blocked * (1.0 - p) / p
        };
    }

    pub fn is_blocked(&self) -> bool {
        self.state == BlockageState::Blocked
    }

    /// Replay all transitions up to `now`. Returns the number of flips.
    pub fn advance<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R) -> u32 {
        assert!(now >= self.last_now, "blockage process time went backwards");
        self.last_now = now;
        let mut flips = 0;
        while now >= self.next_transition {
            self.state = match self.state {
                BlockageState::Blocked => BlockageState::Unblocked,
                BlockageState::Unblocked => BlockageState::Blocked,
            };
            let sojourn = draw_sojourn(self.current_mean(), rng);
            self.next_transition += sojourn;
            flips += 1;
        }
        flips
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use approx::assert_abs_diff_eq;

    fn field(density: f64) -> BlockerField {
        BlockerField {
            density,
            radius: 0.2,
            height: 1.5,
            speed: 3.0 / 3.6,
        }
    }

    #[test]
    fn empty_field_never_blocks() {
        let g = LinkGeometry::from_d2d(100.0, 25.0, 1.5);
        assert_eq!(stationary_blockage_probability(&g, &field(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn blocker_at_ue_height_leaves_only_radius_zone() {
        // 1 - exp(-2 * 0.5 * 0.2 * 0.2), evaluated independently: 0.0392106
        let g = LinkGeometry::from_d2d(137.0, 10.0, 1.5);
        let p = stationary_blockage_probability(&g, &field(0.5)).unwrap();
        assert_abs_diff_eq!(p, 0.039210561, epsilon = 1e-8);
    }

    #[test]
    fn taller_blockers_extend_the_zone() {
        let g = LinkGeometry::from_d2d(100.0, 10.0, 1.5);
        let mut f = field(0.1);
        f.height = 1.8;
        let zone = 100.0 * 0.3 / 8.5 + 0.2;
        let p = stationary_blockage_probability(&g, &f).unwrap();
        assert_abs_diff_eq!(p, 1.0 - (-2.0_f64 * 0.1 * 0.2 * zone).exp(), epsilon = 1e-12);
    }

    #[test]
    fn dense_field_saturates() {
        let g = LinkGeometry::from_d2d(100.0, 10.0, 1.5);
        assert!(stationary_blockage_probability(&g, &field(1e6)).unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn transmitter_below_receiver_is_rejected() {
        let g = LinkGeometry {
            d2d: 10.0,
            d3d: 10.0,
            azimuth: 0.0,
            elevation: 0.0,
            h_bs: 1.5,
            h_ut: 1.5,
        };
        assert!(matches!(
            stationary_blockage_probability(&g, &field(0.1)),
            Err(BlockageError::TransmitterNotAbove { .. })
        ));
    }

    #[test]
    fn mean_blocked_duration() {
        assert_abs_diff_eq!(field(0.1).mean_blocked(), 0.48, epsilon = 1e-12);
    }

    #[test]
    fn initial_state_extremes_and_frequency() {
        let mut rng = stream_rng(9, Stream::Blockage);
        assert!((0..1000).all(|_| sample_initial_state(0.0, &mut rng) == BlockageState::Unblocked));
        assert!((0..1000).all(|_| sample_initial_state(1.0, &mut rng) == BlockageState::Blocked));
        let blocked = (0..10_000)
            .filter(|_| sample_initial_state(0.5, &mut rng) == BlockageState::Blocked)
            .count();
        assert!((blocked as f64 / 1e4 - 0.5).abs() < 0.02, "{blocked}");
    }

    #[test]
    fn zero_probability_stays_unblocked() {
        let mut rng = stream_rng(1, Stream::Blockage);
        let mut proc = BlockageProcess::new(0.0, 0.48, 0.0, &mut rng);
        for k in 1..1000 {
            assert_eq!(proc.advance(k as f64 * 10.0, &mut rng), 0);
            assert!(!proc.is_blocked());
        }
    }

    /// Renewal-reward check: integrate blocked time over many sojourns.
    fn blocked_fraction(p: f64, seed: u64) -> (f64, u64) {
        let mut rng = stream_rng(seed, Stream::Blockage);
        let mut proc = BlockageProcess::new(p, 0.48, 0.0, &mut rng);
        let (mut t, mut blocked_time, mut sojourns) = (0.0, 0.0, 0u64);
        while sojourns < 20_000 {
            let next = proc.next_transition;
            if proc.is_blocked() {
                blocked_time += next - t;
            }
            t = next;
            let before = proc.state;
            assert_eq!(proc.advance(t, &mut rng), 1, "sojourns must alternate one at a time");
            assert_ne!(before, proc.state);
            assert!(proc.next_transition > t);
            sojourns += 1;
        }
        (blocked_time / t, sojourns)
    }

    #[test]
    fn long_run_fraction_matches_stationary_probability() {
        for (p, seed) in [(0.0392, 1), (0.2, 2), (0.5, 3), (0.8, 4)] {
            let (frac, n) = blocked_fraction(p, seed);
            assert!(n >= 10_000);
            assert!((frac - p).abs() < 0.02, "p = {p}, empirical {frac}");
        }
    }
}
