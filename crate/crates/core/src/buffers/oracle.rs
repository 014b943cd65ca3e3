// SPDX-License-Identifier: Apache-2.0

//! Naive reference model of the buffer acceptance rule.
//!
//! Keeps one `Vec` per VC and recomputes the unreserved pool from scratch at
//! every step. Nothing here is shared with [`SharedBufferState`].

use std::collections::BTreeMap;

use crate::model::{Coord, Flit, Scheme};

use super::{BufferError, BufferLayoutSpec, SharedBufferState, VcKey};

/// Data form of a reclaim predicate, so sequences can be replayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Victim {
    Vc(VcKey),
    Packet(u64),
    Dest(Coord),
    All,
}

impl Victim {
    pub fn matches(&self, key: VcKey, f: &Flit) -> bool {
        match *self {
            Victim::Vc(v) => v == key,
            Victim::Packet(id) => f.packet_id == id,
            Victim::Dest(d) => f.dest == d,
            Victim::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BufferOp {
    Push(VcKey, Flit),
    Pop(VcKey),
    Reclaim(Victim),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Accepted,
    Rejected,
    Popped(Flit),
    Empty,
    Purged(usize),
    UnknownVc,
}

pub fn oracle_replay(spec: &BufferLayoutSpec, ops: &[BufferOp]) -> Vec<Outcome> {
    let mut queues: BTreeMap<VcKey, Vec<Flit>> = BTreeMap::new();
    for &port in &spec.member_ports {
        for vc in 0..spec.vc_count {
            queues.insert(VcKey { port, vc }, Vec::new());
        }
    }
    let dynamic = spec.scheme != Scheme::Samq;
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        let outcome = match op {
            BufferOp::Push(v, f) => {
                let total: usize = queues.values().map(|q| q.len()).sum();
                let reserves: usize = queues
                    .values()
                    .map(|q| if q.len() < 2 { 2 - q.len() } else { 0 })
                    .sum();
                match queues.get_mut(v) {
                    None => Outcome::UnknownVc,
                    Some(q) => {
                        let ok = if dynamic {
                            let free = spec.capacity as i64 - total as i64 - reserves as i64;
                            q.len() < 2 || free > 0
                        } else {
                            q.len() < spec.vb
                        };
                        if ok {
                            q.push(*f);
                            Outcome::Accepted
                        } else {
                            Outcome::Rejected
                        }
                    }
                }
            }
            BufferOp::Pop(v) => match queues.get_mut(v) {
                None => Outcome::UnknownVc,
                Some(q) if q.is_empty() => Outcome::Empty,
                Some(q) => Outcome::Popped(q.remove(0)),
            },
            BufferOp::Reclaim(victim) => {
                let mut purged = 0;
                for (k, q) in queues.iter_mut() {
                    let before = q.len();
                    q.retain(|f| !victim.matches(*k, f));
                    purged += before - q.len();
                }
                Outcome::Purged(purged)
            }
        };
        out.push(outcome);
    }
    out
}

/// Replays `ops` against a fresh [`SharedBufferState`], mapping each call's
/// result onto the same [`Outcome`] vocabulary.
pub fn production_replay(spec: &BufferLayoutSpec, ops: &[BufferOp]) -> Result<Vec<Outcome>, BufferError> {
    let mut b = SharedBufferState::new(spec.clone())?;
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        let outcome = match op {
            BufferOp::Push(v, f) => match b.push(*v, *f) {
                Ok(()) => Outcome::Accepted,
                Err(BufferError::BufferFull(_)) => Outcome::Rejected,
                Err(BufferError::UnknownVc(_)) => Outcome::UnknownVc,
                Err(e) => return Err(e),
            },
            BufferOp::Pop(v) => match b.pop(*v) {
                Ok(f) => Outcome::Popped(f),
                Err(BufferError::EmptyQueue(_)) => Outcome::Empty,
                Err(BufferError::UnknownVc(_)) => Outcome::UnknownVc,
                Err(e) => return Err(e),
            },
            BufferOp::Reclaim(victim) => Outcome::Purged(b.reclaim(|k, f| victim.matches(k, f))),
        };
        out.push(outcome);
    }
    Ok(out)
}
