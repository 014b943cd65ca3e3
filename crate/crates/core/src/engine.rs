// SPDX-License-Identifier: Apache-2.0

//! The cycle loop and per-run metrics.
//!
//! One cycle: switch traversal and ejection, route computation and VC
//! allocation, then injection. A packet's latency runs from its creation to
//! the cycle its tail is ejected, so it includes source queuing. In an empty
//! network a packet of `len` flits travelling `h` hops takes
//! `h + len - 1 + UNLOADED_OVERHEAD` cycles.

use std::collections::VecDeque;

use thiserror::Error;

use crate::buffers::BufferError;
use crate::model::{generate_faults, Coord, Direction, FaultMap, Flit, ModelError, SimConfig};
use crate::router::{Departure, Network};
use crate::traffic::{InjectionProcess, InjectionRng, TrafficError, TrafficPattern};

/// Cycles an unloaded packet spends beyond `hops + len - 1`: one to enter the
/// injection FIFO, one for the route stage at the source, one for ejection.
pub const UNLOADED_OVERHEAD: u64 = 3;

/// A run is saturated when it delivers less than this share of its offered load.
pub const SATURATION_SHARE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Flits were still in flight when the drain limit ran out.
    DrainTimeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean over packets created in the measurement window; 0 if none finished.
    pub avg_latency: f64,
    /// Bucket `i` counts latencies in `[2^i, 2^(i+1))`.
    pub latency_histogram: Vec<u64>,
    pub measured_packets: u64,
    /// Flits/cycle/node ejected during the measurement window.
    pub throughput: f64,
    /// Flits/cycle/node created during the measurement window.
    pub offered_load: f64,
    pub buffer_usage_rate: f64,
    pub injected_flits: u64,
    pub delivered_flits: u64,
    pub dropped_packets: u64,
    pub purged_flits: u64,
    pub shift_ops_total: u64,
    pub saturated: bool,
    pub status: RunStatus,
    pub cycles: u64,
    pub failed_links: usize,
    pub conservation_violations: u64,
}

#[derive(Debug, Clone)]
struct PendingPacket {
    id: u64,
    dest: Coord,
    created: u64,
    next_seq: usize,
}

#[derive(Debug, Clone, Default)]
struct WindowStats {
    created_flits: u64,
    delivered_flits: u64,
    latency_sum: u64,
    latency_count: u64,
    histogram: Vec<u64>,
    usage_sum: f64,
    usage_samples: u64,
}

/// One simulation in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    net: Network,
    process: InjectionProcess,
    rngs: Vec<InjectionRng>,
    queues: Vec<VecDeque<PendingPacket>>,
    next_id: u64,
    injected_flits: u64,
    delivered_flits: u64,
    queued_flits: u64,
    window: (u64, u64),
    stats: WindowStats,
    conservation_violations: u64,
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let faults = if cfg.fault_rate > 0.0 {
            generate_faults(cfg)?
        } else {
            FaultMap::new()
        };
        Self::with_faults(cfg, faults)
    }

    pub fn with_faults(cfg: &SimConfig, faults: FaultMap) -> Result<Self, EngineError> {
        cfg.validate()?;
        let mesh = cfg.mesh();
        let pattern = TrafficPattern::from_config(cfg)?;
        let start = cfg.warmup_cycles;
        Ok(Simulation {
            net: Network::new(cfg, faults)?,
            process: InjectionProcess::new(&pattern, mesh, cfg.packet_len),
            rngs: (0..mesh.nodes()).map(|i| InjectionRng::new(cfg.seed, i)).collect(),
            queues: vec![VecDeque::new(); mesh.nodes()],
            next_id: 0,
            injected_flits: 0,
            delivered_flits: 0,
            queued_flits: 0,
            window: (start, start + cfg.measure_cycles),
            stats: WindowStats::default(),
            conservation_violations: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn cycle(&self) -> u64 {
        self.net.cycle()
    }

    /// Queues a packet at `src` as if its source had just generated it.
    pub fn enqueue_packet(&mut self, src: Coord, dest: Coord) -> u64 {
        let created = self.net.cycle();
        let id = self.next_id;
        self.next_id += 1;
        let len = self.cfg.packet_len as u64;
        self.injected_flits += len;
        self.queued_flits += len;
        if self.in_window(created) {
            self.stats.created_flits += len;
        }
        let i = self.net.mesh().index(src);
        self.queues[i].push_back(PendingPacket {
            id,
            dest,
            created,
            next_seq: 0,
        });
        id
    }

    fn in_window(&self, t: u64) -> bool {
        self.window.0 <= t && t < self.window.1
    }

    pub fn injected_flits(&self) -> u64 {
        self.injected_flits
    }

    pub fn delivered_flits(&self) -> u64 {
        self.delivered_flits
    }

    /// Flits generated but still waiting outside the injection FIFOs.
    pub fn queued_flits(&self) -> u64 {
        self.queued_flits
    }

    /// `injected = delivered + in network + purged + source queued`.
    pub fn conservation_holds(&self) -> bool {
        self.injected_flits
            == self.delivered_flits + self.net.flits_in_network() + self.net.purged_flits() + self.queued_flits
    }

    pub fn is_drained(&self) -> bool {
        self.queued_flits == 0 && self.net.is_quiescent()
    }

    /// Advances one cycle. New packets are generated only if `generate`.
    /// Returns the ejections of this cycle.
    pub fn step(&mut self, generate: bool) -> Vec<Departure> {
        let now = self.net.cycle();
        let mut ejected = self.net.switch_all();
        ejected.retain(|d| d.output == Direction::Local);
        for d in &ejected {
            self.record_ejection(&d.flit, d.cycle + 1);
        }
        self.net.route_all();
        self.inject(now, generate);

        if !self.conservation_holds() {
            self.conservation_violations += 1;
            debug_assert!(false, "flit conservation violated at cycle {now}");
        }
        if self.in_window(now) {
            let (occ, cap) = self.net.occupancy();
            self.stats.usage_sum += occ as f64 / cap as f64;
            self.stats.usage_samples += 1;
        }
        self.net.advance();
        ejected
    }

    fn record_ejection(&mut self, f: &Flit, at: u64) {
        self.delivered_flits += 1;
        if self.in_window(at) {
            self.stats.delivered_flits += 1;
        }
        if f.is_tail() && self.in_window(f.created_cycle) {
            let latency = at - f.created_cycle;
            self.stats.latency_sum += latency;
            self.stats.latency_count += 1;
            let bucket = (63 - latency.max(1).leading_zeros()) as usize;
            if self.stats.histogram.len() <= bucket {
                self.stats.histogram.resize(bucket + 1, 0);
            }
            self.stats.histogram[bucket] += 1;
        }
    }

    fn inject(&mut self, now: u64, generate: bool) {
        let mesh = *self.net.mesh();
        let len = self.cfg.packet_len;
        for i in 0..mesh.nodes() {
            let node = mesh.coord(i);
            if generate {
                if let Some(p) = self.process.maybe_inject(node, now, &mut self.rngs[i]) {
                    self.enqueue_packet(p.src, p.dest);
                }
            }
            while let Some(front) = self.queues[i].front_mut() {
                if self.net.router(node).injection_room() == 0 {
                    break;
                }
                let mut f = Flit::of_packet(front.id, node, front.dest, front.next_seq, len, front.created);
                f.ready_cycle = now;
                self.net.inject(node, f);
                self.queued_flits -= 1;
                front.next_seq += 1;
                if front.next_seq == len {
                    self.queues[i].pop_front();
                }
            }
        }
    }

    pub fn report(&self, status: RunStatus) -> MetricsReport {
        let nodes = self.net.mesh().nodes() as f64;
        let measure = self.cfg.measure_cycles.max(1) as f64;
        let s = &self.stats;
        let throughput = s.delivered_flits as f64 / (measure * nodes);
        let offered_load = s.created_flits as f64 / (measure * nodes);
        let saturated = status == RunStatus::DrainTimeout
            || (offered_load > 0.0 && throughput < SATURATION_SHARE * offered_load);
        MetricsReport {
            avg_latency: if s.latency_count > 0 {
                s.latency_sum as f64 / s.latency_count as f64
            } else {
                0.0
            },
            latency_histogram: s.histogram.clone(),
            measured_packets: s.latency_count,
            throughput,
            offered_load,
            buffer_usage_rate: if s.usage_samples > 0 {
                s.usage_sum / s.usage_samples as f64
            } else {
                0.0
            },
            injected_flits: self.injected_flits,
            delivered_flits: self.delivered_flits,
            dropped_packets: self.net.dropped_packets(),
            purged_flits: self.net.purged_flits(),
            shift_ops_total: self.net.shift_ops(),
            saturated,
            status,
            cycles: self.net.cycle(),
            failed_links: self.net.faults().failed_link_count(),
            conservation_violations: self.conservation_violations,
        }
    }

    /// Warmup and measurement with injection, then drain without it.
    pub fn run_to_end(&mut self) -> MetricsReport {
        let active = self.cfg.warmup_cycles + self.cfg.measure_cycles;
        while self.net.cycle() < active {
            self.step(true);
        }
        let mut drained = 0;
        while !self.is_drained() && drained < self.cfg.drain_limit_cycles {
            self.step(false);
            drained += 1;
        }
        let status = if self.is_drained() {
            RunStatus::Completed
        } else {
            RunStatus::DrainTimeout
        };
        self.report(status)
    }
}

pub fn run(cfg: &SimConfig) -> Result<MetricsReport, EngineError> {
    Ok(Simulation::new(cfg)?.run_to_end())
}

/// Runs `cfg` at each rate. Every run from the first one that fails to
/// deliver [`SATURATION_SHARE`] of its offered load onwards is marked
/// saturated.
pub fn saturation_sweep(cfg: &SimConfig, rates: &[f64]) -> Result<Vec<(f64, MetricsReport)>, EngineError> {
    let mut out = Vec::with_capacity(rates.len());
    let mut saturated = false;
    for &rate in rates {
        let c = SimConfig {
            injection_rate: rate,
            ..cfg.clone()
        };
        let mut r = run(&c)?;
        saturated |= r.saturated;
        r.saturated = saturated;
        out.push((rate, r));
    }
    Ok(out)
}

/// Largest delivered throughput of a sweep; 0 for an empty one.
pub fn max_throughput(sweep: &[(f64, MetricsReport)]) -> f64 {
    sweep.iter().map(|(_, r)| r.throughput).fold(0.0, f64::max)
}
