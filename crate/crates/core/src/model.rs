// SPDX-License-Identifier: Apache-2.0

//! Mesh geometry, link faults, run configuration and the flit type.
//!
//! Orientation: `x` grows East, `y` grows North. Columns are `x` values.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Attempts made by [`generate_faults`] before giving up on a connected sample.
pub const FAULT_SAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no connected fault sample found after {attempts} attempts")]
    FaultGenerationFailed { attempts: usize },
    #[error("total-buffer formula needs a square mesh, got {width}x{height}")]
    NonSquareMesh { width: usize, height: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }

    pub fn manhattan(self, other: Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    North,
    South,
    East,
    West,
    Local,
}

impl Direction {
    /// Link directions in the fixed tie-break order E, W, N, S.
    pub const LINKS: [Direction; 4] = [
        Direction::East,
        Direction::West,
        Direction::North,
        Direction::South,
    ];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
            Direction::Local => Direction::Local,
        }
    }

    /// Dense index: E=0, W=1, N=2, S=3, Local=4.
    pub fn index(self) -> usize {
        match self {
            Direction::East => 0,
            Direction::West => 1,
            Direction::North => 2,
            Direction::South => 3,
            Direction::Local => 4,
        }
    }

    pub fn from_index(i: usize) -> Direction {
        match i {
            0 => Direction::East,
            1 => Direction::West,
            2 => Direction::North,
            3 => Direction::South,
            _ => Direction::Local,
        }
    }

    pub fn is_x(self) -> bool {
        matches!(self, Direction::East | Direction::West)
    }

    pub fn is_y(self) -> bool {
        matches!(self, Direction::North | Direction::South)
    }

    pub fn short(self) -> &'static str {
        match self {
            Direction::North => "N",
            Direction::South => "S",
            Direction::East => "E",
            Direction::West => "W",
            Direction::Local => "L",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "E" | "EAST" => Ok(Direction::East),
            "W" | "WEST" => Ok(Direction::West),
            "N" | "NORTH" => Ok(Direction::North),
            "S" | "SOUTH" => Ok(Direction::South),
            "L" | "LOCAL" => Ok(Direction::Local),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

pub fn column_parity(c: Coord) -> Parity {
    if c.x % 2 == 0 {
        Parity::Even
    } else {
        Parity::Odd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mesh {
    pub width: usize,
    pub height: usize,
}

impl Mesh {
    pub fn new(width: usize, height: usize) -> Self {
        Mesh { width, height }
    }

    pub fn nodes(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn index(&self, c: Coord) -> usize {
        c.y * self.width + c.x
    }

    pub fn coord(&self, index: usize) -> Coord {
        Coord::new(index % self.width, index / self.width)
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.nodes()).map(move |i| self.coord(i))
    }

    /// Adjacent node in direction `d`, or `None` at the boundary (and for `Local`).
    pub fn neighbor(&self, c: Coord, d: Direction) -> Option<Coord> {
        match d {
            Direction::East if c.x + 1 < self.width => Some(Coord::new(c.x + 1, c.y)),
            Direction::West if c.x > 0 => Some(Coord::new(c.x - 1, c.y)),
            Direction::North if c.y + 1 < self.height => Some(Coord::new(c.x, c.y + 1)),
            Direction::South if c.y > 0 => Some(Coord::new(c.x, c.y - 1)),
            _ => None,
        }
    }

    /// Number of undirected links: `2WH - W - H`.
    pub fn link_count(&self) -> usize {
        2 * self.width * self.height - self.width - self.height
    }

    /// Every undirected link once, as `(lower-left endpoint, East | North)`.
    pub fn links(&self) -> Vec<(Coord, Direction)> {
        let mut out = Vec::with_capacity(self.link_count());
        for c in self.coords() {
            for d in [Direction::East, Direction::North] {
                if self.neighbor(c, d).is_some() {
                    out.push((c, d));
                }
            }
        }
        out
    }
}

/// Permanently failed links and nodes. Links are undirected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultMap {
    failed_links: BTreeSet<(Coord, Coord)>,
    failed_nodes: BTreeSet<Coord>,
}

fn link_key(a: Coord, b: Coord) -> (Coord, Coord) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl FaultMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fail_link(&mut self, a: Coord, b: Coord) {
        self.failed_links.insert(link_key(a, b));
    }

    /// Fails `mesh.neighbor(c, d)`; returns false if that link does not exist.
    pub fn fail_link_dir(&mut self, mesh: &Mesh, c: Coord, d: Direction) -> bool {
        match mesh.neighbor(c, d) {
            Some(n) => {
                self.fail_link(c, n);
                true
            }
            None => false,
        }
    }

    pub fn fail_node(&mut self, c: Coord) {
        self.failed_nodes.insert(c);
    }

    pub fn is_empty(&self) -> bool {
        self.failed_links.is_empty() && self.failed_nodes.is_empty()
    }

    pub fn failed_links(&self) -> impl Iterator<Item = (Coord, Coord)> + '_ {
        self.failed_links.iter().copied()
    }

    pub fn failed_link_count(&self) -> usize {
        self.failed_links.len()
    }

    pub fn failed_nodes(&self) -> impl Iterator<Item = Coord> + '_ {
        self.failed_nodes.iter().copied()
    }

    pub fn is_node_failed(&self, c: Coord) -> bool {
        self.failed_nodes.contains(&c)
    }

    pub fn is_link_failed(&self, a: Coord, b: Coord) -> bool {
        self.failed_links.contains(&link_key(a, b))
            || self.failed_nodes.contains(&a)
            || self.failed_nodes.contains(&b)
    }

    /// True if the link leaving `c` toward `d` exists and has not failed.
    pub fn link_healthy(&self, mesh: &Mesh, c: Coord, d: Direction) -> bool {
        match mesh.neighbor(c, d) {
            Some(n) => !self.is_link_failed(c, n),
            None => false,
        }
    }

    /// Whether all surviving nodes form one connected component over healthy links.
    pub fn survivors_connected(&self, mesh: &Mesh) -> bool {
        let alive: Vec<Coord> = mesh.coords().filter(|c| !self.is_node_failed(*c)).collect();
        let Some(&start) = alive.first() else {
            return true;
        };
        let mut seen = vec![false; mesh.nodes()];
        let mut queue = VecDeque::from([start]);
        seen[mesh.index(start)] = true;
        let mut reached = 1;
        while let Some(c) = queue.pop_front() {
            for d in Direction::LINKS {
                if let Some(n) = mesh.neighbor(c, d) {
                    if !seen[mesh.index(n)] && !self.is_link_failed(c, n) {
                        seen[mesh.index(n)] = true;
                        reached += 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        reached == alive.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Samq,
    Damqa,
    Damqs,
    Damqas,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Samq, Scheme::Damqa, Scheme::Damqs, Scheme::Damqas];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Samq => "SAMQ",
            Scheme::Damqa => "DAMQA",
            Scheme::Damqs => "DAMQS",
            Scheme::Damqas => "DAMQAS",
        }
    }

    /// Whether VCs draw from a shared pool with per-VC reserves.
    pub fn is_dynamic(self) -> bool {
        self != Scheme::Samq
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SAMQ" => Ok(Scheme::Samq),
            "DAMQA" => Ok(Scheme::Damqa),
            "DAMQS" => Ok(Scheme::Damqs),
            "DAMQAS" => Ok(Scheme::Damqas),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrafficSpec {
    Uniform,
    /// Weighted pairs read from a `noctrace v1` workload file.
    Trace(PathBuf),
    /// The bundled 30-task unbalanced workload.
    Telecom30,
}

impl fmt::Display for TrafficSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrafficSpec::Uniform => f.write_str("uniform"),
            TrafficSpec::Trace(p) => write!(f, "trace:{}", p.display()),
            TrafficSpec::Telecom30 => f.write_str("telecom30"),
        }
    }
}

impl FromStr for TrafficSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "uniform" {
            Ok(TrafficSpec::Uniform)
        } else if s == "telecom30" {
            Ok(TrafficSpec::Telecom30)
        } else if let Some(path) = s.strip_prefix("trace:") {
            if path.is_empty() {
                Err("trace: needs a path".into())
            } else {
                Ok(TrafficSpec::Trace(PathBuf::from(path)))
            }
        } else {
            Err(format!("unknown traffic {s:?}"))
        }
    }
}

/// All parameters of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub width: usize,
    pub height: usize,
    pub vc_count: usize,
    pub packet_len: usize,
    pub scheme: Scheme,
    /// Per-VC depth in flits for SAMQ and DAMQA.
    pub vb: usize,
    /// Per-port-equivalent flits for DAMQS and DAMQAS.
    pub shared_size: usize,
    /// Offered load in flits/cycle/node.
    pub injection_rate: f64,
    /// Fraction of undirected links failed.
    pub fault_rate: f64,
    pub seed: u64,
    pub warmup_cycles: u64,
    pub measure_cycles: u64,
    pub drain_limit_cycles: u64,
    pub traffic: TrafficSpec,
    /// Non-minimal hops allowed per packet; `None` means `4 * (width + height)`.
    pub misroute_budget: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            width: 8,
            height: 8,
            vc_count: 4,
            packet_len: 32,
            scheme: Scheme::Samq,
            vb: 4,
            shared_size: 16,
            injection_rate: 0.1,
            fault_rate: 0.0,
            seed: 1,
            warmup_cycles: 10_000,
            measure_cycles: 50_000,
            drain_limit_cycles: 100_000,
            traffic: TrafficSpec::Uniform,
            misroute_budget: None,
        }
    }
}

impl SimConfig {
    pub fn mesh(&self) -> Mesh {
        Mesh::new(self.width, self.height)
    }

    pub fn neighbor(&self, c: Coord, d: Direction) -> Option<Coord> {
        self.mesh().neighbor(c, d)
    }

    pub fn effective_misroute_budget(&self) -> u32 {
        self.misroute_budget
            .unwrap_or(4 * (self.width + self.height) as u32)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("mesh dimensions must be positive".into());
        }
        if self.width * self.height < 2 {
            return bad("mesh needs at least two nodes".into());
        }
        if self.vc_count == 0 {
            return bad("vc_count must be at least 1".into());
        }
        if self.packet_len < 2 {
            return bad("packet_len must be at least 2".into());
        }
        if self.packet_len > u16::MAX as usize {
            return bad("packet_len too large".into());
        }
        if self.vb == 0 {
            return bad("vb must be at least 1".into());
        }
        match self.scheme {
            Scheme::Damqa if self.vb < 2 => {
                return bad(format!(
                    "DAMQA needs vb >= 2 to hold the per-VC reserve, got {}",
                    self.vb
                ))
            }
            Scheme::Damqs | Scheme::Damqas if self.shared_size < 2 * self.vc_count => {
                return bad(format!(
                    "shared_size {} is below the reserve floor 2 x vc_count = {}",
                    self.shared_size,
                    2 * self.vc_count
                ))
            }
            _ => {}
        }
        if !(self.injection_rate >= 0.0 && self.injection_rate.is_finite()) {
            return bad(format!("injection_rate must be >= 0, got {}", self.injection_rate));
        }
        if !(0.0..1.0).contains(&self.fault_rate) {
            return bad(format!("fault_rate must be in [0, 1), got {}", self.fault_rate));
        }
        if self.measure_cycles == 0 {
            return bad("measure_cycles must be positive".into());
        }
        Ok(())
    }
}

/// Samples `round(fault_rate * links)` failed links, resampling until the
/// surviving graph is connected.
pub fn generate_faults(cfg: &SimConfig) -> Result<FaultMap, ModelError> {
    if !(0.0..1.0).contains(&cfg.fault_rate) {
        return Err(ModelError::InvalidConfig(format!(
            "fault_rate must be in [0, 1), got {}",
            cfg.fault_rate
        )));
    }
    let mesh = cfg.mesh();
    let links = mesh.links();
    let count = (cfg.fault_rate * links.len() as f64).round() as usize;
    if count == 0 {
        return Ok(FaultMap::new());
    }
    // Stream 0 is reserved for faults; traffic uses per-node streams.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    for _ in 0..FAULT_SAMPLE_ATTEMPTS {
        let mut map = FaultMap::new();
        for i in index::sample(&mut rng, links.len(), count).into_iter() {
            let (c, d) = links[i];
            map.fail_link_dir(&mesh, c, d);
        }
        if map.survivors_connected(&mesh) {
            return Ok(map);
        }
    }
    Err(ModelError::FaultGenerationFailed {
        attempts: FAULT_SAMPLE_ATTEMPTS,
    })
}

/// Total inter-router buffer space `(4N - 4 sqrt N) * VC * VB` of a square mesh.
pub fn buf_total(cfg: &SimConfig) -> Result<u64, ModelError> {
    if cfg.width != cfg.height {
        return Err(ModelError::NonSquareMesh {
            width: cfg.width,
            height: cfg.height,
        });
    }
    let n = (cfg.width * cfg.height) as u64;
    let side = cfg.width as u64;
    Ok((n * 4 - 4 * side) * cfg.vc_count as u64 * cfg.vb as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlitKind {
    Head,
    Body,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flit {
    pub kind: FlitKind,
    pub packet_id: u64,
    pub src: Coord,
    pub dest: Coord,
    pub seq: u16,
    pub created_cycle: u64,
    /// First cycle in which the flit may leave the buffer it sits in.
    pub ready_cycle: u64,
    /// Non-minimal hops taken so far; meaningful on the head only.
    pub misroutes: u32,
}

impl Flit {
    /// Flit `seq` of a `len`-flit packet.
    pub fn of_packet(packet_id: u64, src: Coord, dest: Coord, seq: usize, len: usize, created: u64) -> Flit {
        debug_assert!(len >= 2 && seq < len);
        let kind = if seq == 0 {
            FlitKind::Head
        } else if seq + 1 == len {
            FlitKind::Tail
        } else {
            FlitKind::Body
        };
        Flit {
            kind,
            packet_id,
            src,
            dest,
            seq: seq as u16,
            created_cycle: created,
            ready_cycle: created,
            misroutes: 0,
        }
    }

    pub fn is_head(&self) -> bool {
        self.kind == FlitKind::Head
    }

    pub fn is_tail(&self) -> bool {
        self.kind == FlitKind::Tail
    }
}
