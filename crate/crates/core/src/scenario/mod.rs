//! Deployment generation and UE mobility.

mod config;

pub use config::{
    validate_config, ArraySize, AssociationScheme, BeamConfig, Config, ConfigError,
    ConnectivityMode, SlotFormatPolicy, FIELD_NAMES,
};

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Dgnb,
    Iab,
    Ue,
}

impl NodeKind {
    /// Donor or relay: anything that can serve children.
    pub fn is_relay(self) -> bool {
        matches!(self, NodeKind::Dgnb | NodeKind::Iab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: Position,
    pub height: f64,
    pub tx_power: f64,
    pub noise_figure: f64,
    pub array: ArraySize,
    pub multi_beam: bool,
}

/// Heading and speed of one UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub direction: f64,
    pub speed: f64,
}

/// A single cell: one donor on the edge, relays and UEs inside.
///
/// Node ids are dense: the donor is `0`, relays follow, then UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: Config,
    pub nodes: Vec<Node>,
    /// Indexed by UE ordinal (`node index - first_ue`).
    pub mobility: Vec<Motion>,
    elapsed: f64,
    next_redraw: f64,
}

impl Scenario {
    pub fn donor(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn first_ue(&self) -> usize {
        1 + self.config.num_iab
    }

    pub fn relays(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind.is_relay())
    }

    pub fn ues(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Ue)
    }

    pub fn ue_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ues().map(|n| n.id)
    }

    /// Advance every UE by `speed * dt`, reflecting specularly off the cell
    /// boundary. Headings are redrawn every `direction_period`.
    pub fn step_mobility<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        assert!(dt > 0.0, "mobility step must be positive");
        let radius = self.config.cell_radius;
        let first = self.first_ue();
        for (k, motion) in self.mobility.iter_mut().enumerate() {
            let node = &mut self.nodes[first + k];
            let (pos, dir) = reflect_move(node.position, motion.direction, motion.speed * dt, radius);
            node.position = pos;
            motion.direction = dir;
        }
        self.elapsed += dt;
        while self.elapsed + 1e-12 >= self.next_redraw {
            for motion in &mut self.mobility {
                motion.direction = rng.gen::<f64>() * TAU;
            }
            self.next_redraw += self.config.direction_period;
        }
    }
}

/// Move `dist` along heading `dir` inside a disc of radius `radius`,
/// reflecting at the boundary. Returns the new position and heading.
pub fn reflect_move(mut p: Position, mut dir: f64, mut dist: f64, radius: f64) -> (Position, f64) {
    // A point marginally outside after float error is projected back first.
    let r = p.norm();
    if r > radius {
        p.x *= radius / r;
        p.y *= radius / r;
    }
    for _ in 0..64 {
        if dist <= 0.0 {
            break;
        }
        let (ux, uy) = (dir.cos(), dir.sin());
        let pu = p.x * ux + p.y * uy;
        let c = p.x * p.x + p.y * p.y - radius * radius;
        let to_edge = (-pu + (pu * pu - c).max(0.0).sqrt()).max(0.0);
        if dist < to_edge {
            p.x += dist * ux;
            p.y += dist * uy;
            break;
        }
        p.x += to_edge * ux;
        p.y += to_edge * uy;
        dist -= to_edge;
        let r = p.norm();
        let (nx, ny) = (p.x / r, p.y / r);
        p.x = nx * radius;
        p.y = ny * radius;
        let un = ux * nx + uy * ny;
        let (rx, ry) = (ux - 2.0 * un * nx, uy - 2.0 * un * ny);
        dir = ry.atan2(rx);
        if un <= 0.0 {
            // Tangential or already inward; nothing to reflect.
            dir = uy.atan2(ux);
        }
    }
    let r = p.norm();
    if r > radius {
        p.x *= radius / r;
        p.y *= radius / r;
    }
    (p, dir.rem_euclid(TAU))
}

fn uniform_in_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Position {
    loop {
        let x = rng.gen_range(-radius..=radius);
        let y = rng.gen_range(-radius..=radius);
        if x * x + y * y <= radius * radius {
            return Position { x, y };
        }
    }
}

/// Drop the donor at angle 0 on the cell edge and scatter relays and UEs
/// uniformly over the disc. Pure function of `(cfg, seed)`.
pub fn generate_deployment(cfg: &Config, seed: u64) -> Scenario {
    let mut rng = stream_rng(seed, Stream::Deployment);
    let multi_dgnb = matches!(cfg.beam_config, BeamConfig::DgnbMulti | BeamConfig::AllMulti);
    let multi_iab = cfg.beam_config == BeamConfig::AllMulti;

    let mut nodes = Vec::with_capacity(1 + cfg.num_iab + cfg.num_ues);
    nodes.push(Node {
        id: NodeId(0),
        kind: NodeKind::Dgnb,
        position: Position {
            x: cfg.cell_radius,
            y: 0.0,
        },
        height: cfg.height_dgnb,
        tx_power: cfg.tx_power_dgnb,
        noise_figure: cfg.noise_figure_bs,
        array: cfg.array_bs,
        multi_beam: multi_dgnb,
    });
    for _ in 0..cfg.num_iab {
        let id = NodeId(nodes.len() as u32);
        nodes.push(Node {
            id,
            kind: NodeKind::Iab,
            position: uniform_in_disc(&mut rng, cfg.cell_radius),
            height: cfg.height_iab,
            tx_power: cfg.tx_power_iab,
            noise_figure: cfg.noise_figure_bs,
            array: cfg.array_bs,
            multi_beam: multi_iab,
        });
    }
    let mut mobility = Vec::with_capacity(cfg.num_ues);
    for _ in 0..cfg.num_ues {
        let id = NodeId(nodes.len() as u32);
        nodes.push(Node {
            id,
            kind: NodeKind::Ue,
            position: uniform_in_disc(&mut rng, cfg.cell_radius),
            height: cfg.height_ue,
            tx_power: cfg.tx_power_ue,
            noise_figure: cfg.noise_figure_ue,
            array: cfg.array_ue,
            multi_beam: false,
        });
        mobility.push(Motion {
            direction: rng.gen::<f64>() * TAU,
            speed: cfg.ue_speed,
        });
    }

    Scenario {
        config: cfg.clone(),
        nodes,
        mobility,
        elapsed: 0.0,
        next_redraw: cfg.direction_period,
    }
}
