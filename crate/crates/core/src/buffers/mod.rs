// SPDX-License-Identifier: Apache-2.0

//! Input-buffer organizations.
//!
//! A [`SharedBufferState`] is one physical buffer instance serving the VCs of
//! one or more input ports:
//!
//! * SAMQ: one instance per port, each VC statically owns `vb` slots.
//! * DAMQA: one instance per port, its VCs share `vc_count * vb` slots.
//! * DAMQS: East+South and West+North pairs share one instance each.
//! * DAMQAS: all ports of a node share a single instance.
//!
//! Dynamic schemes keep a reserve of two slots for every VC holding fewer than
//! two flits. A flit is accepted if its VC still has reserve left, or if the
//! pool outside all reserves is non-empty:
//!
//! ```text
//! free_unreserved = capacity - sum(occ) - sum(max(0, 2 - occ_v))
//! ```
//!
//! The X-dimension VCs grow from the low end of the storage and the
//! Y-dimension VCs from the high end. That geometry only affects the
//! `shift_ops` counter, never which flits fit.

mod oracle;

pub use oracle::{oracle_replay, production_replay, BufferOp, Outcome, Victim};

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::model::{Direction, Flit, Scheme};

/// Reserved slots per VC in the dynamic schemes.
pub const RESERVE_PER_VC: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VcKey {
    pub port: Direction,
    pub vc: usize,
}

impl VcKey {
    pub const fn new(port: Direction, vc: usize) -> Self {
        VcKey { port, vc }
    }
}

impl fmt::Display for VcKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.port, self.vc)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BufferError {
    #[error("capacity {capacity} is below the required {required} flits")]
    CapacityTooSmall { capacity: usize, required: usize },
    #[error("VC {0} is not served by this buffer")]
    UnknownVc(VcKey),
    #[error("VC {0} cannot accept a flit")]
    BufferFull(VcKey),
    #[error("VC {0} is empty")]
    EmptyQueue(VcKey),
    #[error("invalid buffer layout: {0}")]
    InvalidLayout(String),
}

/// Static description of one buffer instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferLayoutSpec {
    pub scheme: Scheme,
    pub member_ports: Vec<Direction>,
    pub vc_count: usize,
    pub capacity: usize,
    /// Per-VC bound, SAMQ only.
    pub vb: usize,
    pub low_end_group: Vec<VcKey>,
    pub high_end_group: Vec<VcKey>,
    pub reserve_per_vc: usize,
    pub read_budget: usize,
    pub write_budget: usize,
}

fn port_vcs(ports: &[Direction], vc_count: usize) -> Vec<VcKey> {
    ports
        .iter()
        .flat_map(|&p| (0..vc_count).map(move |v| VcKey::new(p, v)))
        .collect()
}

impl BufferLayoutSpec {
    /// SAMQ or DAMQA buffer for a single input port.
    pub fn per_port(scheme: Scheme, port: Direction, vc_count: usize, vb: usize) -> Self {
        debug_assert!(matches!(scheme, Scheme::Samq | Scheme::Damqa));
        BufferLayoutSpec {
            scheme,
            member_ports: vec![port],
            vc_count,
            capacity: vc_count * vb,
            vb,
            low_end_group: port_vcs(&[port], vc_count),
            high_end_group: Vec::new(),
            reserve_per_vc: if scheme == Scheme::Samq { 0 } else { RESERVE_PER_VC },
            read_budget: 1,
            write_budget: 1,
        }
    }

    /// DAMQS or DAMQAS buffer spanning `ports`; capacity is `shared_size`
    /// per member port. X ports fill from the low end, Y ports from the high end.
    pub fn shared(scheme: Scheme, ports: &[Direction], vc_count: usize, shared_size: usize) -> Self {
        debug_assert!(matches!(scheme, Scheme::Damqs | Scheme::Damqas));
        let xs: Vec<Direction> = ports.iter().copied().filter(|d| d.is_x()).collect();
        let ys: Vec<Direction> = ports.iter().copied().filter(|d| d.is_y()).collect();
        BufferLayoutSpec {
            scheme,
            member_ports: ports.to_vec(),
            vc_count,
            capacity: shared_size * ports.len(),
            vb: 0,
            low_end_group: port_vcs(&xs, vc_count),
            high_end_group: port_vcs(&ys, vc_count),
            reserve_per_vc: RESERVE_PER_VC,
            read_budget: ports.len(),
            write_budget: ports.len(),
        }
    }

    /// Buffer instances of a node whose existing link ports are `present`.
    /// Boundary ports get no storage.
    pub fn for_node(
        scheme: Scheme,
        present: &[Direction],
        vc_count: usize,
        vb: usize,
        shared_size: usize,
    ) -> Vec<Self> {
        let ordered: Vec<Direction> = Direction::LINKS
            .into_iter()
            .filter(|d| present.contains(d))
            .collect();
        match scheme {
            Scheme::Samq | Scheme::Damqa => ordered
                .into_iter()
                .map(|p| Self::per_port(scheme, p, vc_count, vb))
                .collect(),
            Scheme::Damqs => [
                [Direction::East, Direction::South],
                [Direction::West, Direction::North],
            ]
            .into_iter()
            .filter_map(|pair| {
                let members: Vec<Direction> =
                    pair.into_iter().filter(|d| present.contains(d)).collect();
                (!members.is_empty()).then(|| Self::shared(scheme, &members, vc_count, shared_size))
            })
            .collect(),
            Scheme::Damqas if ordered.is_empty() => Vec::new(),
            Scheme::Damqas => vec![Self::shared(scheme, &ordered, vc_count, shared_size)],
        }
    }

    pub fn vc_keys(&self) -> Vec<VcKey> {
        port_vcs(&self.member_ports, self.vc_count)
    }

    pub fn num_vcs(&self) -> usize {
        self.member_ports.len() * self.vc_count
    }

    pub fn validate(&self) -> Result<(), BufferError> {
        if self.member_ports.is_empty() || self.vc_count == 0 {
            return Err(BufferError::InvalidLayout("no VCs".into()));
        }
        if self.member_ports.contains(&Direction::Local) {
            return Err(BufferError::InvalidLayout("Local is not a buffered link port".into()));
        }
        let mut all: Vec<VcKey> = self
            .low_end_group
            .iter()
            .chain(self.high_end_group.iter())
            .copied()
            .collect();
        all.sort();
        let mut expected = self.vc_keys();
        expected.sort();
        if all != expected {
            return Err(BufferError::InvalidLayout(
                "low and high groups must partition the VCs".into(),
            ));
        }
        match self.scheme {
            Scheme::Samq => {
                if self.member_ports.len() != 1 {
                    return Err(BufferError::InvalidLayout("SAMQ serves one port".into()));
                }
                let required = self.vc_count * self.vb;
                if self.vb == 0 || self.capacity != required {
                    return Err(BufferError::CapacityTooSmall {
                        capacity: self.capacity,
                        required: required.max(self.vc_count),
                    });
                }
            }
            _ => {
                if self.scheme == Scheme::Damqa && self.member_ports.len() != 1 {
                    return Err(BufferError::InvalidLayout("DAMQA serves one port".into()));
                }
                let required = self.reserve_per_vc * self.num_vcs();
                if self.capacity < required || self.capacity == 0 {
                    return Err(BufferError::CapacityTooSmall {
                        capacity: self.capacity,
                        required: required.max(1),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SharedBufferState {
    spec: BufferLayoutSpec,
    queues: Vec<VecDeque<Flit>>,
    occupied: usize,
    /// Sum over VCs of `max(0, reserve - occ)`.
    reserve_owed: usize,
    /// For each slot: (region, rank within region).
    placement: Vec<(usize, usize)>,
    /// Slots of each region in physical order.
    regions: [Vec<usize>; 2],
    region_len: [usize; 2],
    shift_ops: u64,
}

impl SharedBufferState {
    pub fn new(spec: BufferLayoutSpec) -> Result<Self, BufferError> {
        spec.validate()?;
        let n = spec.num_vcs();
        let mut state = SharedBufferState {
            queues: vec![VecDeque::new(); n],
            occupied: 0,
            reserve_owed: spec.reserve_per_vc * n,
            placement: vec![(0, 0); n],
            regions: [Vec::new(), Vec::new()],
            region_len: [0, 0],
            shift_ops: 0,
            spec,
        };
        for (region, group) in [&state.spec.low_end_group, &state.spec.high_end_group]
            .into_iter()
            .enumerate()
        {
            for key in group.clone() {
                let slot = state.slot_of(key).ok_or(BufferError::UnknownVc(key))?;
                state.placement[slot] = (region, state.regions[region].len());
                state.regions[region].push(slot);
            }
        }
        Ok(state)
    }

    pub fn spec(&self) -> &BufferLayoutSpec {
        &self.spec
    }

    pub fn capacity(&self) -> usize {
        self.spec.capacity
    }

    pub fn num_vcs(&self) -> usize {
        self.queues.len()
    }

    /// Dense slot index of `v`: member-port position times `vc_count` plus VC.
    pub fn slot_of(&self, v: VcKey) -> Option<usize> {
        if v.vc >= self.spec.vc_count {
            return None;
        }
        self.spec
            .member_ports
            .iter()
            .position(|&p| p == v.port)
            .map(|i| i * self.spec.vc_count + v.vc)
    }

    pub fn key_of(&self, slot: usize) -> VcKey {
        VcKey::new(
            self.spec.member_ports[slot / self.spec.vc_count],
            slot % self.spec.vc_count,
        )
    }

    fn slot(&self, v: VcKey) -> Result<usize, BufferError> {
        self.slot_of(v).ok_or(BufferError::UnknownVc(v))
    }

    pub fn occupancy_total(&self) -> usize {
        self.occupied
    }

    pub fn occupancy(&self, v: VcKey) -> Result<usize, BufferError> {
        Ok(self.queues[self.slot(v)?].len())
    }

    pub fn occupancy_slot(&self, slot: usize) -> usize {
        self.queues[slot].len()
    }

    /// Slots held back as per-VC reserves.
    pub fn reserved(&self) -> usize {
        self.reserve_owed
    }

    /// Pool left after occupied slots and outstanding reserves; zero for SAMQ.
    pub fn free_unreserved(&self) -> usize {
        if self.spec.scheme.is_dynamic() {
            self.spec.capacity - self.occupied - self.reserve_owed
        } else {
            0
        }
    }

    /// Slots not holding a flit.
    pub fn free_slots(&self) -> usize {
        self.spec.capacity - self.occupied
    }

    pub fn shift_ops(&self) -> u64 {
        self.shift_ops
    }

    pub fn usage(&self) -> f64 {
        self.occupied as f64 / self.spec.capacity as f64
    }

    pub fn can_accept(&self, v: VcKey) -> Result<bool, BufferError> {
        Ok(self.can_accept_slot(self.slot(v)?))
    }

    pub fn can_accept_slot(&self, slot: usize) -> bool {
        let occ = self.queues[slot].len();
        if self.spec.scheme.is_dynamic() {
            occ < self.spec.reserve_per_vc || self.free_unreserved() > 0
        } else {
            occ < self.spec.vb
        }
    }

    /// Flits `slot` could take right now, beyond what it holds.
    pub fn accept_room_slot(&self, slot: usize) -> usize {
        let occ = self.queues[slot].len();
        if self.spec.scheme.is_dynamic() {
            self.spec.reserve_per_vc.saturating_sub(occ) + self.free_unreserved()
        } else {
            self.spec.vb - occ
        }
    }

    pub fn push(&mut self, v: VcKey, f: Flit) -> Result<(), BufferError> {
        let slot = self.slot(v)?;
        if !self.can_accept_slot(slot) {
            return Err(BufferError::BufferFull(v));
        }
        self.push_slot(slot, f);
        Ok(())
    }

    /// Appends to `slot`. Caller must have checked [`Self::can_accept_slot`].
    pub fn push_slot(&mut self, slot: usize, f: Flit) {
        debug_assert!(self.can_accept_slot(slot));
        let occ = self.queues[slot].len();
        if occ < self.spec.reserve_per_vc {
            self.reserve_owed -= 1;
        }
        self.queues[slot].push_back(f);
        self.occupied += 1;
        self.region_len[self.placement[slot].0] += 1;
        debug_assert!(self.occupied + self.reserve_owed <= self.spec.capacity);
    }

    pub fn front(&self, v: VcKey) -> Result<Option<&Flit>, BufferError> {
        Ok(self.queues[self.slot(v)?].front())
    }

    pub fn front_slot(&self, slot: usize) -> Option<&Flit> {
        self.queues[slot].front()
    }

    pub(crate) fn front_slot_mut(&mut self, slot: usize) -> Option<&mut Flit> {
        self.queues[slot].front_mut()
    }

    pub fn pop(&mut self, v: VcKey) -> Result<Flit, BufferError> {
        let slot = self.slot(v)?;
        self.pop_slot(slot).ok_or(BufferError::EmptyQueue(v))
    }

    pub fn pop_slot(&mut self, slot: usize) -> Option<Flit> {
        let flit = self.queues[slot].pop_front()?;
        let (region, _) = self.placement[slot];
        if self.spec.scheme.is_dynamic() {
            // The popped flit sits at the start of its VC's block; everything
            // stored above it in the region shifts down one slot.
            let position = self.position_in_region(slot);
            let after = self.region_len[region] - 1 - position;
            self.shift_ops += after as u64;
        }
        self.region_len[region] -= 1;
        self.occupied -= 1;
        if self.queues[slot].len() < self.spec.reserve_per_vc {
            self.reserve_owed += 1;
        }
        Some(flit)
    }

    /// Offset of `slot`'s first flit from the region's fixed end.
    fn position_in_region(&self, slot: usize) -> usize {
        let (region, rank) = self.placement[slot];
        self.regions[region][..rank]
            .iter()
            .map(|&s| self.queues[s].len())
            .sum()
    }

    /// Removes every flit matching `victim`; survivors keep their order.
    /// Returns the number removed.
    pub fn reclaim<F>(&mut self, mut victim: F) -> usize
    where
        F: FnMut(VcKey, &Flit) -> bool,
    {
        let dynamic = self.spec.scheme.is_dynamic();
        let mut purged_total = 0;
        for region in 0..2 {
            // Survivors move down by the number of purged flits below them.
            let mut purged_below = 0usize;
            for i in 0..self.regions[region].len() {
                let slot = self.regions[region][i];
                let key = self.key_of(slot);
                let before = self.queues[slot].len();
                let mut kept = VecDeque::with_capacity(before);
                for f in self.queues[slot].drain(..) {
                    if victim(key, &f) {
                        purged_below += 1;
                    } else {
                        if dynamic {
                            self.shift_ops += purged_below as u64;
                        }
                        kept.push_back(f);
                    }
                }
                let removed = before - kept.len();
                let reserve = self.spec.reserve_per_vc;
                self.reserve_owed += reserve.saturating_sub(kept.len()) - reserve.saturating_sub(before);
                self.queues[slot] = kept;
                self.occupied -= removed;
                self.region_len[region] -= removed;
                purged_total += removed;
            }
        }
        purged_total
    }

    /// Removes every flit of `slot` matching `victim`.
    pub fn reclaim_slot<F>(&mut self, slot: usize, mut victim: F) -> usize
    where
        F: FnMut(&Flit) -> bool,
    {
        let key = self.key_of(slot);
        self.reclaim(|k, f| k == key && victim(f))
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    /// Checks the capacity bound, reserve accounting and the SAMQ per-VC bound.
    pub fn check_invariants(&self) -> Result<(), String> {
        let occ: usize = self.queues.iter().map(VecDeque::len).sum();
        if occ != self.occupied {
            return Err(format!("occupancy counter {} != {}", self.occupied, occ));
        }
        if occ > self.spec.capacity {
            return Err(format!("occupancy {} exceeds capacity {}", occ, self.spec.capacity));
        }
        let owed: usize = self
            .queues
            .iter()
            .map(|q| self.spec.reserve_per_vc.saturating_sub(q.len()))
            .sum();
        if owed != self.reserve_owed {
            return Err(format!("reserve counter {} != {}", self.reserve_owed, owed));
        }
        if occ + owed > self.spec.capacity {
            return Err(format!(
                "occupancy {} + reserves {} exceed capacity {}",
                occ, owed, self.spec.capacity
            ));
        }
        if self.spec.scheme == Scheme::Samq {
            if let Some(q) = self.queues.iter().find(|q| q.len() > self.spec.vb) {
                return Err(format!("SAMQ VC holds {} > vb {}", q.len(), self.spec.vb));
            }
        }
        Ok(())
    }
}
