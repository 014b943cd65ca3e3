// SPDX-License-Identifier: Apache-2.0

//! Packet sources.
//!
//! Injection is Bernoulli per node and cycle. Each node draws from its own
//! ChaCha stream, repositioned at a fixed offset per cycle, so the outcome for
//! `(seed, node, cycle)` does not depend on evaluation order.
//!
//! Workload files (`noctrace v1`) list weighted source/destination pairs:
//!
//! ```text
//! noctrace v1
//! # src_x src_y dest_x dest_y weight
//! 0 0 3 4 2.5
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Coord, Mesh, SimConfig, TrafficSpec};

pub const WORKLOAD_HEADER: &str = "noctrace v1";

/// Number of communicating tasks in the bundled workload.
pub const TELECOM_TASKS: usize = 30;

/// Seed the bundled workload file was generated with.
pub const TELECOM_SEED: u64 = 1;

/// The checked-in 8x8 workload, regenerated by [`bundled_telecom_like`].
pub const TELECOM30_NOCTRACE: &str = include_str!("../../../workloads/telecom30.noctrace");

// ChaCha words reserved per cycle in each node's stream.
const WORDS_PER_CYCLE: u128 = 16;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line 1: expected header {WORKLOAD_HEADER:?}")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: coordinate outside the mesh")]
    Bounds { line: usize },
    #[error("workload has no pair with positive weight")]
    EmptyTrace,
    #[error("a {width}x{height} mesh has fewer than {TELECOM_TASKS} nodes")]
    MeshTooSmall { width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePair {
    pub src: Coord,
    pub dest: Coord,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub pairs: Vec<TracePair>,
}

impl Workload {
    pub fn parse(text: &str, mesh: &Mesh) -> Result<Self, TrafficError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == WORKLOAD_HEADER => {}
            _ => return Err(TrafficError::MissingHeader),
        }
        let mut pairs = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(TrafficError::Parse {
                    line,
                    message: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let mut xy = [0usize; 4];
            for (slot, text) in xy.iter_mut().zip(&fields[..4]) {
                *slot = text.parse().map_err(|_| TrafficError::Parse {
                    line,
                    message: format!("bad coordinate {text:?}"),
                })?;
            }
            let weight: f64 = fields[4].parse().map_err(|_| TrafficError::Parse {
                line,
                message: format!("bad weight {:?}", fields[4]),
            })?;
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(TrafficError::Parse {
                    line,
                    message: format!("weight must be finite and >= 0, got {weight}"),
                });
            }
            let src = Coord::new(xy[0], xy[1]);
            let dest = Coord::new(xy[2], xy[3]);
            if !mesh.contains(src) || !mesh.contains(dest) {
                return Err(TrafficError::Bounds { line });
            }
            pairs.push(TracePair { src, dest, weight });
        }
        let w = Workload { pairs };
        if w.total_weight() <= 0.0 {
            return Err(TrafficError::EmptyTrace);
        }
        Ok(w)
    }

    pub fn load(path: &Path, mesh: &Mesh) -> Result<Self, TrafficError> {
        let text = fs::read_to_string(path).map_err(|source| TrafficError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, mesh)
    }

    pub fn total_weight(&self) -> f64 {
        self.pairs.iter().map(|p| p.weight).sum()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::from(WORKLOAD_HEADER);
        out.push('\n');
        for p in &self.pairs {
            out.push_str(&format!(
                "{} {} {} {} {:.6}\n",
                p.src.x, p.src.y, p.dest.x, p.dest.y, p.weight
            ));
        }
        out
    }

    /// Gini coefficient of the pair weights.
    pub fn gini(&self) -> f64 {
        let mut w: Vec<f64> = self.pairs.iter().map(|p| p.weight).collect();
        w.sort_by(f64::total_cmp);
        let n = w.len() as f64;
        let total: f64 = w.iter().sum();
        if w.is_empty() || total == 0.0 {
            return 0.0;
        }
        let ranked: f64 = w.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x).sum();
        2.0 * ranked / (n * total) - (n + 1.0) / n
    }
}

pub fn load_trace(path: &Path, mesh: &Mesh) -> Result<Workload, TrafficError> {
    Workload::load(path, mesh)
}

/// Synthetic stand-in for an embedded telecom benchmark: 30 tasks on distinct
/// nodes, each sending to one other task, with Pareto weights rescaled so the
/// heaviest 20% of pairs carry 80% of the load.
pub fn bundled_telecom_like(mesh: &Mesh, seed: u64) -> Result<Workload, TrafficError> {
    if mesh.nodes() < TELECOM_TASKS {
        return Err(TrafficError::MeshTooSmall {
            width: mesh.width,
            height: mesh.height,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<usize> = (0..mesh.nodes()).collect();
    nodes.shuffle(&mut rng);
    let tasks: Vec<Coord> = nodes[..TELECOM_TASKS].iter().map(|&i| mesh.coord(i)).collect();

    let alpha = 1.16;
    let mut weights: Vec<f64> = (0..TELECOM_TASKS)
        .map(|_| (1.0 - rng.gen::<f64>()).powf(-1.0 / alpha))
        .collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    let heavy = TELECOM_TASKS / 5;
    let scale = |slice: &mut [f64], target: f64| {
        let sum: f64 = slice.iter().sum();
        slice.iter_mut().for_each(|w| *w *= target / sum);
    };
    let total = TELECOM_TASKS as f64;
    let (top, rest) = weights.split_at_mut(heavy);
    scale(top, 0.8 * total);
    scale(rest, 0.2 * total);
    weights.shuffle(&mut rng);

    let pairs = (0..TELECOM_TASKS)
        .map(|i| {
            let mut j = rng.gen_range(0..TELECOM_TASKS - 1);
            if j >= i {
                j += 1;
            }
            TracePair {
                src: tasks[i],
                dest: tasks[j],
                weight: (weights[i] * 1e6).round() / 1e6,
            }
        })
        .collect();
    Ok(Workload { pairs })
}

/// The bundled workload: the checked-in file on 8x8, regenerated otherwise.
pub fn telecom30(mesh: &Mesh) -> Result<Workload, TrafficError> {
    if mesh.width == 8 && mesh.height == 8 {
        Workload::parse(TELECOM30_NOCTRACE, mesh)
    } else {
        bundled_telecom_like(mesh, TELECOM_SEED)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrafficPattern {
    Uniform { rate: f64 },
    /// `rate` is the aggregate offered load in flits/cycle/node, split across
    /// sources by their share of the total weight.
    Trace { workload: Workload, rate: f64 },
}

impl TrafficPattern {
    pub fn from_config(cfg: &SimConfig) -> Result<Self, TrafficError> {
        let mesh = cfg.mesh();
        let rate = cfg.injection_rate;
        Ok(match &cfg.traffic {
            TrafficSpec::Uniform => TrafficPattern::Uniform { rate },
            TrafficSpec::Trace(path) => TrafficPattern::Trace {
                workload: Workload::load(path, &mesh)?,
                rate,
            },
            TrafficSpec::Telecom30 => TrafficPattern::Trace {
                workload: telecom30(&mesh)?,
                rate,
            },
        })
    }

    pub fn rate(&self) -> f64 {
        match self {
            TrafficPattern::Uniform { rate } | TrafficPattern::Trace { rate, .. } => *rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketDescriptor {
    pub src: Coord,
    pub dest: Coord,
    pub len: usize,
}

/// Per-node random stream.
#[derive(Debug, Clone)]
pub struct InjectionRng {
    rng: ChaCha8Rng,
}

impl InjectionRng {
    pub fn new(seed: u64, node_index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Stream 0 belongs to fault sampling.
        rng.set_stream(node_index as u64 + 1);
        InjectionRng { rng }
    }

    fn at_cycle(&mut self, cycle: u64) -> &mut ChaCha8Rng {
        self.rng.set_word_pos(cycle as u128 * WORDS_PER_CYCLE);
        &mut self.rng
    }
}

#[derive(Debug, Clone)]
enum NodeSource {
    Silent,
    Uniform { p: f64 },
    /// Cumulative weights over this node's destinations.
    Trace { p: f64, dests: Vec<(f64, Coord)> },
}

/// A [`TrafficPattern`] compiled into per-node injection probabilities.
#[derive(Debug, Clone)]
pub struct InjectionProcess {
    mesh: Mesh,
    packet_len: usize,
    sources: Vec<NodeSource>,
}

impl InjectionProcess {
    pub fn new(pattern: &TrafficPattern, mesh: Mesh, packet_len: usize) -> Self {
        let n = mesh.nodes();
        let sources = match pattern {
            TrafficPattern::Uniform { rate } => {
                let p = (rate / packet_len as f64).min(1.0);
                vec![if p > 0.0 { NodeSource::Uniform { p } } else { NodeSource::Silent }; n]
            }
            TrafficPattern::Trace { workload, rate } => {
                let total = workload.total_weight();
                (0..n)
                    .map(|i| {
                        let here = mesh.coord(i);
                        let mut acc = 0.0;
                        let dests: Vec<(f64, Coord)> = workload
                            .pairs
                            .iter()
                            .filter(|p| p.src == here && p.weight > 0.0)
                            .map(|p| {
                                acc += p.weight;
                                (acc, p.dest)
                            })
                            .collect();
                        let p = (rate * n as f64 * acc / total / packet_len as f64).min(1.0);
                        if dests.is_empty() || p <= 0.0 {
                            NodeSource::Silent
                        } else {
                            NodeSource::Trace { p, dests }
                        }
                    })
                    .collect()
            }
        };
        InjectionProcess {
            mesh,
            packet_len,
            sources,
        }
    }

    /// Expected packets per cycle at `node`.
    pub fn packet_probability(&self, node: Coord) -> f64 {
        match &self.sources[self.mesh.index(node)] {
            NodeSource::Silent => 0.0,
            NodeSource::Uniform { p } | NodeSource::Trace { p, .. } => *p,
        }
    }

    pub fn maybe_inject(&self, node: Coord, cycle: u64, rng: &mut InjectionRng) -> Option<PacketDescriptor> {
        let source = &self.sources[self.mesh.index(node)];
        if let NodeSource::Silent = source {
            return None;
        }
        let rng = rng.at_cycle(cycle);
        let dest = match source {
            NodeSource::Silent => unreachable!(),
            NodeSource::Uniform { p } => {
                if !rng.gen_bool(*p) {
                    return None;
                }
                let n = self.mesh.nodes();
                let mut d = rng.gen_range(0..n - 1);
                if d >= self.mesh.index(node) {
                    d += 1;
                }
                self.mesh.coord(d)
            }
            NodeSource::Trace { p, dests } => {
                if !rng.gen_bool(*p) {
                    return None;
                }
                let total = dests.last().map_or(0.0, |d| d.0);
                let pick = rng.gen::<f64>() * total;
                dests
                    .iter()
                    .find(|(acc, _)| pick < *acc)
                    .or(dests.last())
                    .map(|d| d.1)?
            }
        };
        Some(PacketDescriptor {
            src: node,
            dest,
            len: self.packet_len,
        })
    }
}
