// SPDX-License-Identifier: Apache-2.0

//! Odd-even turn-model routing with fault avoidance.
//!
//! Turn rules (travel direction before -> after, per column parity of the node
//! where the turn happens):
//!
//! | column | prohibited |
//! |--------|------------|
//! | even   | E->N, E->S |
//! | odd    | N->W, S->W |
//!
//! U-turns are never allowed. A candidate output is admissible only if it is
//! minimal, healthy, turn-legal and leaves the destination reachable under the
//! same rules; reachability is precomputed per destination from the fault map,
//! which is static for a run. When no minimal output qualifies the packet takes
//! one hop perpendicular to the blocked dimension.

use std::collections::VecDeque;

use crate::model::{column_parity, Coord, Direction, FaultMap, Mesh, Parity, SimConfig};

pub fn is_turn_legal(from: Direction, to: Direction, parity: Parity) -> bool {
    use Direction::*;
    if from == Local || to == Local {
        return true;
    }
    if from.opposite() == to {
        return false;
    }
    match parity {
        Parity::Even => !(from == East && (to == North || to == South)),
        Parity::Odd => !(to == West && (from == North || from == South)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteRequest {
    pub current: Coord,
    pub dest: Coord,
    /// Input port the head arrived on; `Local` at the source.
    pub arrival_dir: Direction,
    pub misroutes_used: u32,
}

impl RouteRequest {
    pub fn new(current: Coord, dest: Coord, arrival_dir: Direction) -> Self {
        RouteRequest {
            current,
            dest,
            arrival_dir,
            misroutes_used: 0,
        }
    }

    /// Direction the packet was moving in when it reached `current`.
    pub fn travel(&self) -> Option<Direction> {
        (self.arrival_dir != Direction::Local).then(|| self.arrival_dir.opposite())
    }

    fn minimal_dirs(&self) -> Vec<Direction> {
        let mut out = Vec::with_capacity(2);
        match self.dest.x.cmp(&self.current.x) {
            std::cmp::Ordering::Greater => out.push(Direction::East),
            std::cmp::Ordering::Less => out.push(Direction::West),
            std::cmp::Ordering::Equal => {}
        }
        match self.dest.y.cmp(&self.current.y) {
            std::cmp::Ordering::Greater => out.push(Direction::North),
            std::cmp::Ordering::Less => out.push(Direction::South),
            std::cmp::Ordering::Equal => {}
        }
        out
    }

    fn remaining(&self, d: Direction) -> usize {
        if d.is_x() {
            self.dest.x.abs_diff(self.current.x)
        } else {
            self.dest.y.abs_diff(self.current.y)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteDecision {
    Eject,
    Output(Direction),
    Stall,
    Drop,
}

const SOURCE_STATE: u8 = 4;

fn state_bit(travel: Option<Direction>) -> u8 {
    1 << travel.map_or(SOURCE_STATE, |d| d.index() as u8)
}

/// Routing function for one mesh and fault map.
#[derive(Debug, Clone)]
pub struct OddEvenRouting {
    mesh: Mesh,
    /// Bit `d.index()` set if the link leaving the node toward `d` is usable.
    healthy: Vec<u8>,
    /// `reach[dest * N + node]`: bit per travel state (E, W, N, S, source)
    /// from which `dest` can still be reached.
    reach: Vec<u8>,
    misroute_budget: u32,
}

impl OddEvenRouting {
    pub fn new(mesh: Mesh, faults: &FaultMap, misroute_budget: u32) -> Self {
        let healthy = mesh
            .coords()
            .map(|c| {
                Direction::LINKS
                    .iter()
                    .filter(|d| faults.link_healthy(&mesh, c, **d))
                    .fold(0u8, |m, d| m | 1 << d.index())
            })
            .collect();
        let mut routing = OddEvenRouting {
            mesh,
            healthy,
            reach: vec![0; mesh.nodes() * mesh.nodes()],
            misroute_budget,
        };
        for dest in 0..mesh.nodes() {
            routing.fill_reach(dest);
        }
        routing
    }

    pub fn from_config(cfg: &SimConfig, faults: &FaultMap) -> Self {
        Self::new(cfg.mesh(), faults, cfg.effective_misroute_budget())
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn misroute_budget(&self) -> u32 {
        self.misroute_budget
    }

    pub fn link_healthy(&self, c: Coord, d: Direction) -> bool {
        d != Direction::Local && self.healthy[self.mesh.index(c)] & (1 << d.index()) != 0
    }

    /// Whether a turn-legal path over healthy links leads from `node`, having
    /// arrived while travelling `travel`, to `dest`.
    pub fn can_reach(&self, node: Coord, travel: Option<Direction>, dest: Coord) -> bool {
        let n = self.mesh.nodes();
        self.reach[self.mesh.index(dest) * n + self.mesh.index(node)] & state_bit(travel) != 0
    }

    // Backward search over (node, travel) states.
    fn fill_reach(&mut self, dest: usize) {
        let n = self.mesh.nodes();
        let base = dest * n;
        self.reach[base + dest] = 0b1_1111;
        let mut queue: VecDeque<(Coord, Direction)> = Direction::LINKS
            .iter()
            .map(|&d| (self.mesh.coord(dest), d))
            .collect();
        while let Some((at, moved)) = queue.pop_front() {
            let Some(prev) = self.mesh.neighbor(at, moved.opposite()) else {
                continue;
            };
            if !self.link_healthy(prev, moved) {
                continue;
            }
            let parity = column_parity(prev);
            let slot = base + self.mesh.index(prev);
            for state in 0..5u8 {
                if self.reach[slot] & (1 << state) != 0 {
                    continue;
                }
                let legal = state == SOURCE_STATE
                    || is_turn_legal(Direction::from_index(state as usize), moved, parity);
                if legal {
                    self.reach[slot] |= 1 << state;
                    if state != SOURCE_STATE {
                        queue.push_back((prev, Direction::from_index(state as usize)));
                    }
                }
            }
        }
    }

    fn usable(&self, r: &RouteRequest, d: Direction) -> bool {
        if !self.link_healthy(r.current, d) {
            return false;
        }
        if let Some(t) = r.travel() {
            if !is_turn_legal(t, d, column_parity(r.current)) {
                return false;
            }
        }
        let next = self.mesh.neighbor(r.current, d).expect("healthy link has a neighbor");
        self.can_reach(next, Some(d), r.dest)
    }

    /// Minimal, healthy, turn-legal outputs that keep the destination
    /// reachable, ordered by larger remaining distance then E, W, N, S.
    pub fn admissible_outputs(&self, r: &RouteRequest) -> Vec<Direction> {
        let mut out: Vec<Direction> = r
            .minimal_dirs()
            .into_iter()
            .filter(|&d| self.usable(r, d))
            .collect();
        out.sort_by_key(|&d| (std::cmp::Reverse(r.remaining(d)), d.index()));
        out
    }

    /// Picks the admissible output with the most downstream space; ties go to
    /// the larger remaining distance, then E, W, N, S. With nothing admissible
    /// the decision is delegated to [`Self::detour`].
    pub fn select_output<F>(&self, r: &mut RouteRequest, admissible: &[Direction], space: F) -> RouteDecision
    where
        F: Fn(Direction) -> usize,
    {
        if r.current == r.dest {
            return RouteDecision::Eject;
        }
        let best = admissible.iter().copied().max_by(|&a, &b| {
            space(a)
                .cmp(&space(b))
                .then(r.remaining(a).cmp(&r.remaining(b)))
                .then(b.index().cmp(&a.index()))
        });
        match best {
            Some(d) => RouteDecision::Output(d),
            None => self.detour(r),
        }
    }

    /// One hop perpendicular to the blocked dimension, preferring the side
    /// toward the destination. Counts against the misroute budget.
    pub fn detour(&self, r: &mut RouteRequest) -> RouteDecision {
        if r.current == r.dest {
            return RouteDecision::Eject;
        }
        let minimal = r.minimal_dirs();
        let mut candidates: Vec<Direction> = Vec::with_capacity(4);
        let mut blocked = minimal.clone();
        blocked.sort_by_key(|&d| (std::cmp::Reverse(r.remaining(d)), d.index()));
        for d in blocked {
            let sides = if d.is_x() {
                // Toward the destination row; "up" first when already on it.
                if r.dest.y < r.current.y {
                    [Direction::South, Direction::North]
                } else {
                    [Direction::North, Direction::South]
                }
            } else if r.dest.x > r.current.x {
                [Direction::East, Direction::West]
            } else {
                // Same column: a westward step can always turn back east,
                // an eastward one never turns back west.
                [Direction::West, Direction::East]
            };
            for s in sides {
                if !candidates.contains(&s) {
                    candidates.push(s);
                }
            }
        }
        // Last resort: back away along the blocked dimension.
        for d in Direction::LINKS {
            if !minimal.contains(&d) && !candidates.contains(&d) {
                candidates.push(d);
            }
        }
        match candidates.into_iter().find(|&d| self.usable(r, d)) {
            None => RouteDecision::Stall,
            Some(_) if r.misroutes_used >= self.misroute_budget => RouteDecision::Drop,
            Some(d) => {
                r.misroutes_used += 1;
                RouteDecision::Output(d)
            }
        }
    }

    /// Full decision for a head flit.
    pub fn route<F>(&self, r: &mut RouteRequest, space: F) -> RouteDecision
    where
        F: Fn(Direction) -> usize,
    {
        if r.current == r.dest {
            return RouteDecision::Eject;
        }
        let admissible = self.admissible_outputs(r);
        self.select_output(r, &admissible, space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Direction::*;

    fn mesh8() -> Mesh {
        Mesh::new(8, 8)
    }

    fn clean() -> OddEvenRouting {
        OddEvenRouting::new(mesh8(), &FaultMap::new(), 64)
    }

    fn req(cx: usize, cy: usize, dx: usize, dy: usize, arrival: Direction) -> RouteRequest {
        RouteRequest::new(Coord::new(cx, cy), Coord::new(dx, dy), arrival)
    }

    #[test]
    fn turn_rule_examples() {
        assert!(!is_turn_legal(East, North, column_parity(Coord::new(2, 0))));
        assert!(is_turn_legal(East, North, column_parity(Coord::new(3, 0))));
        assert!(is_turn_legal(West, West, Parity::Even));
        assert!(is_turn_legal(West, West, Parity::Odd));
        assert!(!is_turn_legal(East, South, Parity::Even));
        assert!(!is_turn_legal(North, West, Parity::Odd));
        assert!(!is_turn_legal(South, West, Parity::Odd));
        assert!(is_turn_legal(North, West, Parity::Even));
        for d in Direction::LINKS {
            for p in [Parity::Even, Parity::Odd] {
                assert!(!is_turn_legal(d, d.opposite(), p));
                assert!(is_turn_legal(d, d, p));
            }
        }
    }

    #[test]
    fn prohibited_turn_count_per_parity() {
        for p in [Parity::Even, Parity::Odd] {
            let banned = Direction::LINKS
                .iter()
                .flat_map(|a| Direction::LINKS.iter().map(move |b| (*a, *b)))
                .filter(|(a, b)| a.opposite() != *b && !is_turn_legal(*a, *b, p))
                .count();
            assert_eq!(banned, 2);
        }
    }

    #[test]
    fn admissible_examples() {
        let r = clean();
        // Travelling East (arrived on the West port).
        assert_eq!(r.admissible_outputs(&req(2, 2, 5, 5, West)), vec![East]);
        // Ordered by remaining distance: 3 rows to go beats 2 columns.
        assert_eq!(r.admissible_outputs(&req(3, 2, 5, 5, West)), vec![North, East]);
        // Remaining distances 3 and 3: fixed order E before N.
        let mut out = r.admissible_outputs(&req(0, 0, 3, 3, Local));
        out.sort_by_key(|d| d.index());
        assert_eq!(out, vec![East, North]);
        assert_eq!(r.admissible_outputs(&req(4, 4, 1, 1, Local)), vec![West, South]);
    }

    #[test]
    fn select_examples() {
        let r = clean();
        let mut q = req(3, 2, 6, 3, West);
        let space = |d: Direction| if d == East { 5 } else { 2 };
        assert_eq!(r.select_output(&mut q, &[East, North], space), RouteDecision::Output(East));
        let space = |d: Direction| if d == East { 1 } else { 2 };
        assert_eq!(r.select_output(&mut q, &[East, North], space), RouteDecision::Output(North));
        let mut q = req(3, 2, 6, 3, West);
        assert_eq!(r.select_output(&mut q, &[East, North], |_| 4), RouteDecision::Output(East));
        let mut q = req(3, 3, 3, 3, West);
        assert_eq!(r.select_output(&mut q, &[], |_| 4), RouteDecision::Eject);
    }

    #[test]
    fn detour_up_then_toward_destination() {
        // Travelling East along row 2, East link at (3,2) failed, dest on the row.
        let m = mesh8();
        let mut f = FaultMap::new();
        f.fail_link_dir(&m, Coord::new(3, 2), East);
        let r = OddEvenRouting::new(m, &f, 64);
        let mut q = req(3, 2, 6, 2, West);
        assert!(r.admissible_outputs(&q).is_empty());
        assert_eq!(r.route(&mut q, |_| 4), RouteDecision::Output(North));
        assert_eq!(q.misroutes_used, 1);
        // Destination to the northeast: the perpendicular toward it is North.
        let mut q = req(3, 2, 6, 5, West);
        assert_eq!(r.detour(&mut q), RouteDecision::Output(North));
        // Destination to the southeast with the link failed: go down.
        let mut q = req(3, 4, 6, 1, West);
        let mut f = FaultMap::new();
        f.fail_link_dir(&m, Coord::new(3, 4), East);
        let r = OddEvenRouting::new(m, &f, 64);
        assert_eq!(r.detour(&mut q), RouteDecision::Output(South));
    }

    #[test]
    fn detour_stalls_without_legal_perpendicular() {
        let m = mesh8();
        let mut f = FaultMap::new();
        for d in [East, North, South] {
            f.fail_link_dir(&m, Coord::new(3, 2), d);
        }
        let r = OddEvenRouting::new(m, &f, 64);
        let mut q = req(3, 2, 6, 2, West);
        assert_eq!(r.route(&mut q, |_| 4), RouteDecision::Stall);
        assert_eq!(q.misroutes_used, 0);
    }

    #[test]
    fn detour_drops_past_budget() {
        let m = mesh8();
        let mut f = FaultMap::new();
        f.fail_link_dir(&m, Coord::new(3, 2), East);
        let r = OddEvenRouting::new(m, &f, 2);
        let mut q = req(3, 2, 6, 2, West);
        q.misroutes_used = 2;
        assert_eq!(r.route(&mut q, |_| 4), RouteDecision::Drop);
    }

    #[test]
    fn reachability_rejects_dead_end_columns() {
        let r = clean();
        // Arriving travelling East into an even destination column with rows
        // still to cover can never finish.
        assert!(!r.can_reach(Coord::new(4, 1), Some(East), Coord::new(4, 5)));
        assert!(r.can_reach(Coord::new(3, 1), Some(East), Coord::new(3, 5)));
        // Travelling North in an odd column cannot turn back West.
        assert!(!r.can_reach(Coord::new(3, 1), Some(North), Coord::new(1, 5)));
        assert!(r.can_reach(Coord::new(2, 1), Some(North), Coord::new(1, 5)));
        for c in mesh8().coords() {
            for d in mesh8().coords() {
                assert!(r.can_reach(c, None, d));
            }
        }
    }

    #[test]
    fn every_decision_is_legal() {
        let r = clean();
        let m = mesh8();
        for cur in m.coords() {
            for dest in m.coords() {
                if cur == dest {
                    continue;
                }
                for arrival in [Local, East, West, North, South] {
                    if arrival != Local && m.neighbor(cur, arrival).is_none() {
                        continue;
                    }
                    let mut q = RouteRequest::new(cur, dest, arrival);
                    if let RouteDecision::Output(d) = r.route(&mut q, |_| 1) {
                        assert!(m.neighbor(cur, d).is_some());
                        if let Some(t) = q.travel() {
                            assert!(is_turn_legal(t, d, column_parity(cur)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fault_free_walks_are_minimal() {
        let r = clean();
        let m = mesh8();
        for src in m.coords() {
            for dest in m.coords() {
                if src == dest {
                    continue;
                }
                let mut q = RouteRequest::new(src, dest, Local);
                loop {
                    if q.current != dest {
                        assert!(!r.admissible_outputs(&q).is_empty(), "{src} -> {dest} at {}", q.current);
                    }
                    match r.route(&mut q, |_| 1) {
                        RouteDecision::Eject => break,
                        RouteDecision::Output(d) => {
                            let next = m.neighbor(q.current, d).unwrap();
                            assert_eq!(next.manhattan(dest) + 1, q.current.manhattan(dest));
                            q.current = next;
                            q.arrival_dir = d.opposite();
                        }
                        other => panic!("{src} -> {dest}: {other:?}"),
                    }
                }
                assert_eq!(q.misroutes_used, 0);
            }
        }
    }
}
