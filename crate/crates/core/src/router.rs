// SPDX-License-Identifier: Apache-2.0

//! Wormhole routers and the network that connects them.
//!
//! Per cycle the engine calls [`Network::switch_all`] (traversal and
//! ejection), then [`Network::route_all`] (route computation, VC allocation,
//! packet reclamation), then injects, then [`Network::advance`].
//!
//! Pushes into downstream buffers happen as soon as a flit is granted, with
//! `ready_cycle = now + 1`. Pops are held back until every router has run its
//! switch stage, so all routers see the same start-of-cycle occupancy.

use std::collections::VecDeque;

use crate::buffers::{BufferError, BufferLayoutSpec, SharedBufferState, VcKey};
use crate::model::{Coord, Direction, FaultMap, Flit, Mesh, SimConfig};
use crate::routing::{OddEvenRouting, RouteDecision, RouteRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcState {
    Idle,
    /// Reserved by an upstream router, or holding an unrouted head.
    Routing,
    Active {
        packet_id: u64,
        output: Direction,
        /// Downstream VC held for this packet; `None` when ejecting.
        downstream: Option<VcKey>,
    },
    /// Flits of a reclaimed packet are removed on arrival until its tail.
    Discarding { packet_id: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Loc {
    buffer: usize,
    slot: usize,
}

/// A flit leaving a router through a switch grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Departure {
    pub flit: Flit,
    pub node: Coord,
    pub output: Direction,
    pub cycle: u64,
}

/// One router: its input buffers, one VC state machine per input VC, and the
/// injection FIFO. Channel ids are `port.index() * vc_count + vc`; the
/// injection FIFO is channel `4 * vc_count`.
#[derive(Debug, Clone)]
pub struct RouterState {
    node: Coord,
    vc_count: usize,
    buffers: Vec<SharedBufferState>,
    locs: Vec<Option<Loc>>,
    states: Vec<VcState>,
    blocked: Vec<bool>,
    injection: VecDeque<Flit>,
    injection_depth: usize,
    vc_rr: [usize; 4],
    sw_rr: [usize; 5],
    writes: Vec<usize>,
    dropped_packets: u64,
    purged_flits: u64,
}

impl RouterState {
    pub fn new(
        node: Coord,
        present: &[Direction],
        cfg: &SimConfig,
    ) -> Result<Self, BufferError> {
        let vc = cfg.vc_count;
        let specs = BufferLayoutSpec::for_node(cfg.scheme, present, vc, cfg.vb, cfg.shared_size);
        let buffers = specs
            .into_iter()
            .map(SharedBufferState::new)
            .collect::<Result<Vec<_>, _>>()?;
        let mut locs = vec![None; 4 * vc];
        for (b, buf) in buffers.iter().enumerate() {
            for slot in 0..buf.num_vcs() {
                let key = buf.key_of(slot);
                locs[key.port.index() * vc + key.vc] = Some(Loc { buffer: b, slot });
            }
        }
        Ok(RouterState {
            node,
            vc_count: vc,
            writes: vec![0; buffers.len()],
            buffers,
            locs,
            states: vec![VcState::Idle; 4 * vc + 1],
            blocked: vec![false; 4 * vc + 1],
            injection: VecDeque::new(),
            injection_depth: vc * cfg.vb.max(1),
            vc_rr: [0; 4],
            sw_rr: [0; 5],
            dropped_packets: 0,
            purged_flits: 0,
        })
    }

    pub fn node(&self) -> Coord {
        self.node
    }

    pub fn buffers(&self) -> &[SharedBufferState] {
        &self.buffers
    }

    fn inj(&self) -> usize {
        4 * self.vc_count
    }

    fn channel(&self, key: VcKey) -> usize {
        if key.port == Direction::Local {
            self.inj()
        } else {
            key.port.index() * self.vc_count + key.vc
        }
    }

    fn port_of(&self, ch: usize) -> Direction {
        if ch == self.inj() {
            Direction::Local
        } else {
            Direction::from_index(ch / self.vc_count)
        }
    }

    /// State of input VC `key`; `Local` names the injection FIFO.
    pub fn vc_state(&self, key: VcKey) -> VcState {
        self.states[self.channel(key)]
    }

    pub fn has_port(&self, port: Direction) -> bool {
        port == Direction::Local || self.locs[port.index() * self.vc_count].is_some()
    }

    fn front(&self, ch: usize) -> Option<&Flit> {
        if ch == self.inj() {
            self.injection.front()
        } else {
            let l = self.locs[ch]?;
            self.buffers[l.buffer].front_slot(l.slot)
        }
    }

    fn front_mut(&mut self, ch: usize) -> Option<&mut Flit> {
        if ch == self.inj() {
            self.injection.front_mut()
        } else {
            let l = self.locs[ch]?;
            self.buffers[l.buffer].front_slot_mut(l.slot)
        }
    }

    fn pop(&mut self, ch: usize) -> Option<Flit> {
        if ch == self.inj() {
            self.injection.pop_front()
        } else {
            let l = self.locs[ch]?;
            self.buffers[l.buffer].pop_slot(l.slot)
        }
    }

    /// Removes the flits of `packet` held in `ch`. Returns whether the tail
    /// was among them.
    fn purge(&mut self, ch: usize, packet: u64) -> bool {
        let mut tail = false;
        let mut hit = |f: &Flit| {
            let m = f.packet_id == packet;
            tail |= m && f.is_tail();
            m
        };
        let n = if ch == self.inj() {
            let before = self.injection.len();
            self.injection.retain(|f| !hit(f));
            before - self.injection.len()
        } else if let Some(l) = self.locs[ch] {
            self.buffers[l.buffer].reclaim_slot(l.slot, hit)
        } else {
            0
        };
        self.purged_flits += n as u64;
        tail
    }

    fn accepts(&self, key: VcKey) -> bool {
        self.locs[self.channel(key)]
            .is_some_and(|l| self.buffers[l.buffer].can_accept_slot(l.slot))
    }

    /// Flits a new packet could claim on input `port`: the best acceptance
    /// room over its idle VCs, zero if none is idle.
    pub fn input_space(&self, port: Direction) -> usize {
        (0..self.vc_count)
            .map(|v| port.index() * self.vc_count + v)
            .filter(|&ch| self.states[ch] == VcState::Idle)
            .filter_map(|ch| self.locs[ch])
            .map(|l| self.buffers[l.buffer].accept_room_slot(l.slot))
            .max()
            .unwrap_or(0)
    }

    pub fn injection_len(&self) -> usize {
        self.injection.len()
    }

    pub fn injection_room(&self) -> usize {
        self.injection_depth - self.injection.len()
    }

    /// Appends to the injection FIFO if there is room.
    pub fn inject(&mut self, f: Flit) -> bool {
        if self.injection.len() < self.injection_depth {
            self.injection.push_back(f);
            true
        } else {
            false
        }
    }

    pub fn occupancy(&self) -> usize {
        self.buffers.iter().map(|b| b.occupancy_total()).sum()
    }

    pub fn capacity(&self) -> usize {
        self.buffers.iter().map(|b| b.capacity()).sum()
    }

    pub fn shift_ops(&self) -> u64 {
        self.buffers.iter().map(|b| b.shift_ops()).sum()
    }

    pub fn dropped_packets(&self) -> u64 {
        self.dropped_packets
    }

    pub fn purged_flits(&self) -> u64 {
        self.purged_flits
    }

    pub fn is_quiescent(&self) -> bool {
        self.injection.is_empty()
            && self.buffers.iter().all(|b| b.is_empty())
            && self.states.iter().all(|s| *s == VcState::Idle)
    }
}

/// Picks a free VC on the input port of `downstream` facing `upstream`'s
/// `output`, round-robin from the last grant.
pub fn vc_allocate(upstream: &mut RouterState, output: Direction, downstream: &RouterState) -> Option<VcKey> {
    let port = output.opposite();
    let o = output.index();
    let vc = upstream.vc_count;
    for k in 0..vc {
        let v = (upstream.vc_rr[o] + k) % vc;
        let key = VcKey::new(port, v);
        if downstream.vc_state(key) == VcState::Idle && downstream.accepts(key) {
            upstream.vc_rr[o] = v + 1;
            return Some(key);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct Network {
    mesh: Mesh,
    vc_count: usize,
    faults: FaultMap,
    routing: OddEvenRouting,
    routers: Vec<RouterState>,
    cycle: u64,
    pending_pops: Vec<(usize, usize)>,
}

impl Network {
    pub fn new(cfg: &SimConfig, faults: FaultMap) -> Result<Self, BufferError> {
        let mesh = cfg.mesh();
        let routers = mesh
            .coords()
            .map(|c| {
                let present: Vec<Direction> = Direction::LINKS
                    .into_iter()
                    .filter(|&d| mesh.neighbor(c, d).is_some())
                    .collect();
                RouterState::new(c, &present, cfg)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Network {
            routing: OddEvenRouting::from_config(cfg, &faults),
            mesh,
            vc_count: cfg.vc_count,
            faults,
            routers,
            cycle: 0,
            pending_pops: Vec::new(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn faults(&self) -> &FaultMap {
        &self.faults
    }

    pub fn routing(&self) -> &OddEvenRouting {
        &self.routing
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn router(&self, c: Coord) -> &RouterState {
        &self.routers[self.mesh.index(c)]
    }

    pub fn router_mut(&mut self, c: Coord) -> &mut RouterState {
        let i = self.mesh.index(c);
        &mut self.routers[i]
    }

    pub fn routers(&self) -> &[RouterState] {
        &self.routers
    }

    fn pair_mut(&mut self, a: usize, b: usize) -> (&mut RouterState, &mut RouterState) {
        debug_assert_ne!(a, b);
        if a < b {
            let (lo, hi) = self.routers.split_at_mut(b);
            (&mut lo[a], &mut hi[0])
        } else {
            let (lo, hi) = self.routers.split_at_mut(a);
            (&mut hi[0], &mut lo[b])
        }
    }

    fn neighbor_index(&self, i: usize, d: Direction) -> usize {
        let c = self.mesh.neighbor(self.routers[i].node, d).expect("output leads off the mesh");
        self.mesh.index(c)
    }

    fn downstream_space(&self, i: usize, d: Direction) -> usize {
        match self.mesh.neighbor(self.routers[i].node, d) {
            Some(n) => self.routers[self.mesh.index(n)].input_space(d.opposite()),
            None => 0,
        }
    }

    /// Grants at most one flit per output (any number to `Local`), at most one
    /// read per input port and no more reads per buffer than its budget.
    /// Pops are deferred to [`Self::commit_pops`].
    pub fn switch_stage(&mut self, i: usize) -> Vec<Departure> {
        let now = self.cycle;
        let vc = self.vc_count;
        let inj = 4 * vc;
        let node = self.routers[i].node;
        let mut out = Vec::new();
        if self.routers[i]
            .states
            .iter()
            .all(|s| !matches!(s, VcState::Active { .. }))
        {
            return out;
        }
        let mut granted = vec![false; inj + 1];
        let mut port_used = [false; 5];
        let mut reads = vec![0usize; self.routers[i].buffers.len()];
        let start = (now % 5) as usize;
        for k in 0..5 {
            let o = Direction::from_index((start + k) % 5);
            let rr = self.routers[i].sw_rr[o.index()];
            for t in 0..=inj {
                let ch = (rr + t) % (inj + 1);
                if granted[ch] {
                    continue;
                }
                let r = &self.routers[i];
                let VcState::Active { output, downstream, .. } = r.states[ch] else {
                    continue;
                };
                if output != o {
                    continue;
                }
                let Some(&f) = r.front(ch) else { continue };
                if f.ready_cycle > now {
                    continue;
                }
                let port = r.port_of(ch).index();
                if port_used[port] {
                    continue;
                }
                let buf = r.locs.get(ch).copied().flatten().map(|l| l.buffer);
                if let Some(b) = buf {
                    if reads[b] >= r.buffers[b].spec().read_budget {
                        continue;
                    }
                }
                if o != Direction::Local {
                    let key = downstream.expect("active link VC without downstream");
                    let j = self.neighbor_index(i, o);
                    let down = &mut self.routers[j];
                    let l = down.locs[down.channel(key)].expect("downstream VC has no storage");
                    let dbuf = &down.buffers[l.buffer];
                    if !dbuf.can_accept_slot(l.slot) {
                        continue;
                    }
                    debug_assert!(down.writes[l.buffer] < dbuf.spec().write_budget);
                    let mut moved = f;
                    moved.ready_cycle = now + 1;
                    down.buffers[l.buffer].push_slot(l.slot, moved);
                    down.writes[l.buffer] += 1;
                }
                granted[ch] = true;
                port_used[port] = true;
                if let Some(b) = buf {
                    reads[b] += 1;
                }
                self.pending_pops.push((i, ch));
                let r = &mut self.routers[i];
                r.sw_rr[o.index()] = ch + 1;
                if f.is_tail() {
                    r.states[ch] = VcState::Idle;
                }
                out.push(Departure {
                    flit: f,
                    node,
                    output: o,
                    cycle: now,
                });
                if o != Direction::Local {
                    break;
                }
            }
        }
        out
    }

    pub fn commit_pops(&mut self) {
        for (i, ch) in std::mem::take(&mut self.pending_pops) {
            let popped = self.routers[i].pop(ch);
            debug_assert!(popped.is_some());
        }
    }

    /// Switch stage of every router, then the deferred pops.
    pub fn switch_all(&mut self) -> Vec<Departure> {
        for r in &mut self.routers {
            r.writes.iter_mut().for_each(|w| *w = 0);
        }
        let mut out = Vec::new();
        for i in 0..self.routers.len() {
            out.extend(self.switch_stage(i));
        }
        self.commit_pops();
        out
    }

    /// Routes every unrouted head at router `i` and tries to allocate a
    /// downstream VC for it.
    pub fn route_stage(&mut self, i: usize) {
        let inj = 4 * self.vc_count;
        let node = self.routers[i].node;
        for ch in 0..=inj {
            let st = self.routers[i].states[ch];
            match st {
                VcState::Routing => {}
                VcState::Idle if ch == inj => {}
                _ => continue,
            }
            let Some(&f) = self.routers[i].front(ch) else { continue };
            if !f.is_head() {
                debug_assert!(false, "unrouted VC at {node} fronted by a non-head flit");
                continue;
            }
            self.routers[i].states[ch] = VcState::Routing;
            self.routers[i].blocked[ch] = false;
            if f.dest == node {
                self.routers[i].states[ch] = VcState::Active {
                    packet_id: f.packet_id,
                    output: Direction::Local,
                    downstream: None,
                };
                continue;
            }
            let mut req = RouteRequest::new(node, f.dest, self.routers[i].port_of(ch));
            req.misroutes_used = f.misroutes;
            let adm = self.routing.admissible_outputs(&req);
            let decision = self
                .routing
                .select_output(&mut req, &adm, |d| self.downstream_space(i, d));
            match decision {
                RouteDecision::Output(d) => {
                    let j = self.neighbor_index(i, d);
                    let (up, down) = self.pair_mut(i, j);
                    if let Some(key) = vc_allocate(up, d, down) {
                        let dch = down.channel(key);
                        down.states[dch] = VcState::Routing;
                        up.states[ch] = VcState::Active {
                            packet_id: f.packet_id,
                            output: d,
                            downstream: Some(key),
                        };
                        if let Some(h) = up.front_mut(ch) {
                            h.misroutes = req.misroutes_used;
                        }
                    }
                }
                RouteDecision::Eject => {
                    self.routers[i].states[ch] = VcState::Active {
                        packet_id: f.packet_id,
                        output: Direction::Local,
                        downstream: None,
                    };
                }
                RouteDecision::Stall => self.routers[i].blocked[ch] = true,
                RouteDecision::Drop => self.terminate(i, ch),
            }
        }
    }

    /// Reclaims packets whose head found no usable output.
    pub fn reclaim_blocked(&mut self, i: usize) {
        for ch in 0..self.routers[i].blocked.len() {
            if self.routers[i].blocked[ch] {
                self.routers[i].blocked[ch] = false;
                self.terminate(i, ch);
            }
        }
    }

    /// Removes arrived flits of packets being discarded.
    pub fn purge_discarding(&mut self, i: usize) {
        for ch in 0..self.routers[i].states.len() {
            if let VcState::Discarding { packet_id } = self.routers[i].states[ch] {
                if self.routers[i].purge(ch, packet_id) {
                    self.routers[i].states[ch] = VcState::Idle;
                }
            }
        }
    }

    pub fn route_all(&mut self) {
        for i in 0..self.routers.len() {
            self.purge_discarding(i);
            self.route_stage(i);
            self.reclaim_blocked(i);
        }
    }

    /// Drops the packet held by channel `ch` of router `i`, including any part
    /// of it already forwarded downstream.
    fn terminate(&mut self, i: usize, ch: usize) {
        let st = self.routers[i].states[ch];
        let packet = match st {
            VcState::Active { packet_id, .. } | VcState::Discarding { packet_id } => packet_id,
            _ => match self.routers[i].front(ch) {
                Some(f) => f.packet_id,
                None => return,
            },
        };
        let tail = self.routers[i].purge(ch, packet);
        self.routers[i].dropped_packets += 1;
        if let VcState::Active {
            output,
            downstream: Some(key),
            ..
        } = st
        {
            let j = self.neighbor_index(i, output);
            self.purge_chain(j, key, packet);
        }
        self.routers[i].states[ch] = if tail {
            VcState::Idle
        } else {
            VcState::Discarding { packet_id: packet }
        };
    }

    /// Removes a packet fragment that will receive no further flits.
    fn purge_chain(&mut self, mut j: usize, mut key: VcKey, packet: u64) {
        loop {
            let r = &mut self.routers[j];
            let ch = r.channel(key);
            let st = r.states[ch];
            debug_assert!(matches!(
                st,
                VcState::Routing | VcState::Active { packet_id: _, .. }
            ));
            if let VcState::Active { packet_id, .. } = st {
                if packet_id != packet {
                    return;
                }
            }
            r.purge(ch, packet);
            r.states[ch] = VcState::Idle;
            r.blocked[ch] = false;
            match st {
                VcState::Active {
                    output,
                    downstream: Some(next),
                    ..
                } => {
                    j = self.neighbor_index(j, output);
                    key = next;
                }
                _ => return,
            }
        }
    }

    /// Reclaims every packet at router `node` whose route uses the output
    /// `failed`.
    pub fn on_fault_boundary(&mut self, node: Coord, failed: Direction) {
        let i = self.mesh.index(node);
        for ch in 0..self.routers[i].states.len() {
            if let VcState::Active { output, .. } = self.routers[i].states[ch] {
                if output == failed {
                    self.terminate(i, ch);
                }
            }
        }
    }

    /// Fails the link leaving `node` towards `d` at run time. Returns false if
    /// there is no such link or it had already failed.
    pub fn fail_link(&mut self, node: Coord, d: Direction) -> bool {
        let Some(other) = self.mesh.neighbor(node, d) else {
            return false;
        };
        if !self.faults.fail_link_dir(&self.mesh, node, d) {
            return false;
        }
        self.routing = OddEvenRouting::new(self.mesh, &self.faults, self.routing.misroute_budget());
        self.on_fault_boundary(node, d);
        self.on_fault_boundary(other, d.opposite());
        true
    }

    pub fn inject(&mut self, node: Coord, f: Flit) -> bool {
        self.router_mut(node).inject(f)
    }

    pub fn advance(&mut self) {
        self.cycle += 1;
    }

    /// Flits in buffers and injection FIFOs.
    pub fn flits_in_network(&self) -> u64 {
        self.routers
            .iter()
            .map(|r| (r.occupancy() + r.injection_len()) as u64)
            .sum()
    }

    /// Buffered flits and total buffer capacity.
    pub fn occupancy(&self) -> (usize, usize) {
        self.routers
            .iter()
            .fold((0, 0), |(o, c), r| (o + r.occupancy(), c + r.capacity()))
    }

    pub fn dropped_packets(&self) -> u64 {
        self.routers.iter().map(|r| r.dropped_packets).sum()
    }

    pub fn purged_flits(&self) -> u64 {
        self.routers.iter().map(|r| r.purged_flits).sum()
    }

    pub fn shift_ops(&self) -> u64 {
        self.routers.iter().map(|r| r.shift_ops()).sum()
    }

    pub fn is_quiescent(&self) -> bool {
        self.routers.iter().all(|r| r.is_quiescent())
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for r in &self.routers {
            for b in &r.buffers {
                b.check_invariants().map_err(|e| format!("{}: {e}", r.node))?;
            }
        }
        Ok(())
    }
}
