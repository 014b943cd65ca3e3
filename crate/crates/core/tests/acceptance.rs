// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. One PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p damq-noc --test acceptance -- 1 5 12`.

use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use damq_noc::buffers::{oracle_replay, production_replay, BufferOp, Victim, RESERVE_PER_VC};
use damq_noc::engine::{max_throughput, saturation_sweep, RunStatus, Simulation};
use damq_noc::model::{
    buf_total, generate_faults, Coord, Direction, FaultMap, Flit, Mesh, Scheme, SimConfig, TrafficSpec,
};
use damq_noc::report::{cmd_sweep, records_to_csv};
use damq_noc::routing::{OddEvenRouting, RouteDecision, RouteRequest};
use damq_noc::{BufferLayoutSpec, SharedBufferState, VcKey};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

use Direction::{East as E, North as N, South as S, West as W};

// Buffer layouts exercised by the buffer criteria, with boundary variants.
fn layouts(scheme: Scheme) -> Vec<BufferLayoutSpec> {
    match scheme {
        Scheme::Samq | Scheme::Damqa => vec![
            BufferLayoutSpec::per_port(scheme, E, 4, 4),
            BufferLayoutSpec::per_port(scheme, N, 4, 6),
        ],
        Scheme::Damqs => vec![
            BufferLayoutSpec::shared(scheme, &[E, S], 4, 16),
            BufferLayoutSpec::shared(scheme, &[W, N], 4, 14),
            BufferLayoutSpec::shared(scheme, &[S], 4, 16),
        ],
        Scheme::Damqas => vec![
            BufferLayoutSpec::shared(scheme, &[E, W, N, S], 4, 16),
            BufferLayoutSpec::shared(scheme, &[E, W, N, S], 4, 13),
            BufferLayoutSpec::shared(scheme, &[W, N], 4, 16),
        ],
    }
}

fn flit(rng: &mut ChaCha8Rng, seq: usize) -> Flit {
    let id = rng.gen_range(0..8u64);
    let dest = Coord::new(rng.gen_range(0..4), rng.gen_range(0..4));
    Flit::of_packet(id, Coord::new(0, 0), dest, seq, 8, 0)
}

// Random op over `keys`, with pushes skewed toward a few hot VCs and an
// occasional VC the buffer does not serve.
fn random_op(rng: &mut ChaCha8Rng, keys: &[VcKey], seq: usize) -> BufferOp {
    let pick = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.02) {
            VcKey::new(Direction::Local, 0)
        } else if rng.gen_bool(0.5) {
            keys[rng.gen_range(0..keys.len().min(2))]
        } else {
            keys[rng.gen_range(0..keys.len())]
        }
    };
    match rng.gen_range(0..100) {
        0..=59 => {
            let v = pick(rng);
            BufferOp::Push(v, flit(rng, seq))
        }
        60..=93 => BufferOp::Pop(pick(rng)),
        94..=96 => BufferOp::Reclaim(Victim::Packet(rng.gen_range(0..8))),
        97 => BufferOp::Reclaim(Victim::Vc(pick(rng))),
        98 => BufferOp::Reclaim(Victim::Dest(Coord::new(rng.gen_range(0..4), rng.gen_range(0..4)))),
        _ => BufferOp::Reclaim(Victim::All),
    }
}

fn c1_buf_total() -> Verdict {
    let cfg = SimConfig::default();
    let got = buf_total(&cfg).unwrap();
    verdict(got == 3584, format!("buf_total(8x8, vc 4, vb 4) = {got}"))
}

fn c2_oracle_equivalence() -> Verdict {
    const SEEDS: u64 = 10;
    const OPS_PER_SEED: usize = 10_000;
    let mut lines = Vec::new();
    let mut pass = true;
    for scheme in Scheme::ALL {
        let specs = layouts(scheme);
        let mut ops_total = 0;
        let mut mismatches = 0;
        for seed in 0..SEEDS {
            let spec = &specs[seed as usize % specs.len()];
            let keys = spec.vc_keys();
            let mut rng = ChaCha8Rng::seed_from_u64(0xB0F + seed);
            let ops: Vec<BufferOp> = (0..OPS_PER_SEED).map(|i| random_op(&mut rng, &keys, i % 8)).collect();
            let prod = production_replay(spec, &ops).expect("layout builds");
            let oracle = oracle_replay(spec, &ops);
            mismatches += prod.iter().zip(&oracle).filter(|(a, b)| a != b).count();
            mismatches += prod.len().abs_diff(oracle.len());
            ops_total += ops.len();
        }
        pass &= mismatches == 0 && ops_total >= 100_000;
        lines.push(format!("{scheme} {ops_total} ops {mismatches} mismatches"));
    }
    verdict(pass, lines.join(", "))
}

#[derive(Default)]
struct Exploration {
    states: usize,
    starved: usize,
    over_reserved: usize,
    /// States with the unreserved pool exhausted.
    pool_full: usize,
}

// Random walk over states reachable through the public operations.
fn explore(spec: &BufferLayoutSpec, seed: u64, steps: usize) -> Exploration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = SharedBufferState::new(spec.clone()).unwrap();
    let keys = spec.vc_keys();
    let mut e = Exploration::default();
    for i in 0..steps {
        match random_op(&mut rng, &keys, i % 8) {
            BufferOp::Push(v, f) => {
                let _ = b.push(v, f);
            }
            BufferOp::Pop(v) => {
                let _ = b.pop(v);
            }
            BufferOp::Reclaim(victim) => {
                b.reclaim(|k, f| victim.matches(k, f));
            }
        }
        e.states += 1;
        e.pool_full += usize::from(b.free_unreserved() == 0);
        let mut sum = 0;
        let mut owed = 0;
        for &v in &keys {
            let occ = b.occupancy(v).unwrap();
            sum += occ;
            owed += RESERVE_PER_VC.saturating_sub(occ);
            if occ < RESERVE_PER_VC && !b.can_accept(v).unwrap() {
                e.starved += 1;
            }
        }
        if sum + owed > b.capacity() || b.check_invariants().is_err() {
            e.over_reserved += 1;
        }
    }
    e
}

fn explore_all(schemes: &[Scheme]) -> Vec<(Scheme, Exploration)> {
    schemes
        .iter()
        .map(|&scheme| {
            let mut total = Exploration::default();
            for (i, spec) in layouts(scheme).iter().enumerate() {
                for seed in 0..4 {
                    let e = explore(spec, 0x5EED + 16 * i as u64 + seed, 5_000);
                    total.states += e.states;
                    total.starved += e.starved;
                    total.over_reserved += e.over_reserved;
                    total.pool_full += e.pool_full;
                }
            }
            (scheme, total)
        })
        .collect()
}

fn c3_no_starvation() -> Verdict {
    let res = explore_all(&[Scheme::Damqa, Scheme::Damqs, Scheme::Damqas]);
    let pass = res.iter().all(|(_, e)| e.states >= 10_000 && e.starved == 0);
    let detail = res
        .iter()
        .map(|(s, e)| format!("{s} {} states ({} pool-full) {} starved", e.states, e.pool_full, e.starved))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, detail)
}

fn c4_reserve_accounting() -> Verdict {
    let res = explore_all(&Scheme::ALL);
    let pass = res.iter().all(|(_, e)| e.over_reserved == 0);
    let detail = res
        .iter()
        .map(|(s, e)| format!("{s} {} states {} violations", e.states, e.over_reserved))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, detail)
}

// Independent odd-even turn rule.
fn turn_prohibited(from: Direction, to: Direction, x: usize) -> bool {
    if x % 2 == 0 {
        from == E && (to == N || to == S)
    } else {
        to == W && (from == N || from == S)
    }
}

#[derive(Default)]
struct Legality {
    decisions: usize,
    prohibited: usize,
    failed_link: usize,
    u_turns: usize,
}

fn check_routing(mesh: Mesh, faults: &FaultMap, budget: u32, tally: &mut Legality) {
    let r = OddEvenRouting::new(mesh, faults, budget);
    let spaces: [fn(Direction) -> usize; 3] = [|_| 0, |d| d.index(), |d| 3 - d.index()];
    for cur in mesh.coords() {
        for dest in mesh.coords() {
            for arrival in [Direction::Local, E, W, N, S] {
                if arrival != Direction::Local {
                    // A head can only arrive over a healthy link.
                    let Some(prev) = mesh.neighbor(cur, arrival) else { continue };
                    if faults.is_link_failed(prev, cur) {
                        continue;
                    }
                }
                for used in [0, budget] {
                    for space in spaces {
                        let mut req = RouteRequest::new(cur, dest, arrival);
                        req.misroutes_used = used;
                        tally.decisions += 1;
                        let RouteDecision::Output(d) = r.route(&mut req, space) else { continue };
                        let next = mesh.neighbor(cur, d);
                        if next.map_or(true, |n| faults.is_link_failed(cur, n)) {
                            tally.failed_link += 1;
                        }
                        if d == arrival {
                            tally.u_turns += 1;
                        }
                        if arrival != Direction::Local && turn_prohibited(arrival.opposite(), d, cur.x) {
                            tally.prohibited += 1;
                        }
                    }
                }
            }
        }
    }
}

fn c5_routing_legality() -> Verdict {
    let mesh = Mesh::new(8, 8);
    let base = SimConfig::default();
    let budget = base.effective_misroute_budget();
    let mut maps = vec![FaultMap::new()];
    for seed in 1..=20 {
        let cfg = SimConfig {
            fault_rate: 0.04,
            seed,
            ..base.clone()
        };
        maps.push(generate_faults(&cfg).unwrap());
    }
    let failed: usize = maps.iter().map(|m| m.failed_link_count()).sum();
    let mut t = Legality::default();
    for f in &maps {
        check_routing(mesh, f, budget, &mut t);
    }
    verdict(
        t.prohibited + t.failed_link + t.u_turns == 0 && failed > 0,
        format!(
            "{} maps ({failed} failed links), {} decisions: {} prohibited turns, {} failed-link outputs, {} u-turns",
            maps.len(),
            t.decisions,
            t.prohibited,
            t.failed_link,
            t.u_turns
        ),
    )
}

struct LongRun {
    scheme: Scheme,
    seed: u64,
    dropped: u64,
    status: RunStatus,
    left_in_network: u64,
    violations: u64,
    per_cycle_failures: u64,
    delivered: u64,
}

fn long_runs() -> Vec<LongRun> {
    let jobs: Vec<(Scheme, u64)> = Scheme::ALL
        .iter()
        .flat_map(|&s| (1..=5).map(move |seed| (s, seed)))
        .collect();
    jobs.par_iter()
        .map(|&(scheme, seed)| {
            let cfg = SimConfig {
                scheme,
                seed,
                injection_rate: 0.10,
                warmup_cycles: 10_000,
                measure_cycles: 50_000,
                ..SimConfig::default()
            };
            let mut sim = Simulation::new(&cfg).unwrap();
            let mut per_cycle_failures = 0;
            let active = cfg.warmup_cycles + cfg.measure_cycles;
            while sim.cycle() < active {
                sim.step(true);
                per_cycle_failures += u64::from(!sim.conservation_holds());
            }
            let mut drained = 0;
            while !sim.is_drained() && drained < cfg.drain_limit_cycles {
                sim.step(false);
                per_cycle_failures += u64::from(!sim.conservation_holds());
                drained += 1;
            }
            let status = if sim.is_drained() {
                RunStatus::Completed
            } else {
                RunStatus::DrainTimeout
            };
            let m = sim.report(status);
            LongRun {
                scheme,
                seed,
                dropped: m.dropped_packets,
                status,
                left_in_network: sim.network().flits_in_network() + sim.queued_flits(),
                violations: m.conservation_violations,
                per_cycle_failures,
                delivered: m.delivered_flits,
            }
        })
        .collect()
}

fn c6_deadlock_freedom(runs: &[LongRun]) -> Verdict {
    let bad: Vec<String> = runs
        .iter()
        .filter(|r| r.dropped > 0 || r.status != RunStatus::Completed || r.left_in_network > 0)
        .map(|r| format!("{} seed {}: {} drops, {:?}, {} left", r.scheme, r.seed, r.dropped, r.status, r.left_in_network))
        .collect();
    let delivered: u64 = runs.iter().map(|r| r.delivered).sum();
    verdict(
        bad.is_empty() && runs.len() == 20,
        if bad.is_empty() {
            format!("{} runs of 60000 cycles + drain, {delivered} flits delivered, 0 drops, all drained", runs.len())
        } else {
            bad.join("; ")
        },
    )
}

fn c7_conservation(runs: &[LongRun]) -> Verdict {
    let v: u64 = runs.iter().map(|r| r.violations + r.per_cycle_failures).sum();
    verdict(
        v == 0 && cfg!(debug_assertions),
        format!(
            "{v} violating cycles over {} runs (debug assertions {})",
            runs.len(),
            if cfg!(debug_assertions) { "on" } else { "off" }
        ),
    )
}

fn c8_pre_saturation() -> Verdict {
    let jobs: Vec<(Scheme, u64)> = Scheme::ALL
        .iter()
        .flat_map(|&s| (1..=3).map(move |seed| (s, seed)))
        .collect();
    let lat: Vec<(Scheme, f64)> = jobs
        .par_iter()
        .map(|&(scheme, seed)| {
            let cfg = SimConfig {
                scheme,
                seed,
                injection_rate: 0.05,
                shared_size: 16,
                ..SimConfig::default()
            };
            (scheme, damq_noc::run(&cfg).unwrap().avg_latency)
        })
        .collect();
    let means: Vec<(Scheme, f64)> = Scheme::ALL
        .iter()
        .map(|&s| (s, lat.iter().filter(|(k, _)| *k == s).map(|(_, l)| l).sum::<f64>() / 3.0))
        .collect();
    let lo = means.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let hi = means.iter().map(|m| m.1).fold(0.0, f64::max);
    let spread = hi / lo - 1.0;
    verdict(
        spread <= 0.10,
        format!(
            "{}; spread {:.2}%",
            means.iter().map(|(s, l)| format!("{s} {l:.2}")).collect::<Vec<_>>().join(", "),
            spread * 100.0
        ),
    )
}

const UNIFORM_RATES: [f64; 7] = [0.20, 0.24, 0.28, 0.32, 0.36, 0.40, 0.44];
const TELECOM_RATES: [f64; 6] = [0.02, 0.04, 0.06, 0.08, 0.10, 0.12];
const ECONOMY_RATES: [f64; 5] = [0.30, 0.34, 0.38, 0.42, 0.46];
const SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Clone, PartialEq, Eq, Hash)]
struct SweepKey {
    scheme: Scheme,
    fault_permille: u32,
    vb: usize,
    shared_size: usize,
    telecom: bool,
}

/// Mean over seeds of the max delivered throughput of a rate sweep, memoised
/// so criteria sharing a setting run it once.
struct Throughputs {
    cache: Mutex<HashMap<SweepKey, f64>>,
}

impl Throughputs {
    fn get(&self, key: SweepKey) -> f64 {
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return v;
        }
        let rates: &[f64] = if key.telecom {
            &TELECOM_RATES
        } else if key.fault_permille == 0 {
            &ECONOMY_RATES
        } else {
            &UNIFORM_RATES
        };
        let per_seed: Vec<f64> = SEEDS
            .par_iter()
            .map(|&seed| {
                let cfg = SimConfig {
                    scheme: key.scheme,
                    seed,
                    fault_rate: key.fault_permille as f64 / 1000.0,
                    vb: key.vb,
                    shared_size: key.shared_size,
                    traffic: if key.telecom { TrafficSpec::Telecom30 } else { TrafficSpec::Uniform },
                    warmup_cycles: 3_000,
                    measure_cycles: 10_000,
                    drain_limit_cycles: 3_000,
                    ..SimConfig::default()
                };
                max_throughput(&saturation_sweep(&cfg, rates).unwrap())
            })
            .collect();
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        self.cache.lock().unwrap().insert(key, mean);
        mean
    }

    fn equal_budget(&self, scheme: Scheme, fault_permille: u32, telecom: bool) -> f64 {
        self.get(SweepKey {
            scheme,
            fault_permille,
            vb: 4,
            shared_size: 16,
            telecom,
        })
    }
}

const SLACK: f64 = 0.02;

fn c9_fault_ordering(t: &Throughputs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for fr in [20, 40] {
        let v: Vec<f64> = Scheme::ALL.iter().map(|&s| t.equal_budget(s, fr, false)).collect();
        // v is SAMQ, DAMQA, DAMQS, DAMQAS.
        let ok = (1..4).all(|i| v[i] >= v[i - 1] * (1.0 - SLACK));
        pass &= ok;
        parts.push(format!(
            "fr {}%: SAMQ {:.4} DAMQA {:.4} DAMQS {:.4} DAMQAS {:.4} ({})",
            fr / 10,
            v[0],
            v[1],
            v[2],
            v[3],
            if ok { "ordered" } else { "out of order" }
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c10_buffer_economy(t: &Throughputs) -> Verdict {
    let key = |scheme, vb, shared_size| SweepKey {
        scheme,
        fault_permille: 0,
        vb,
        shared_size,
        telecom: false,
    };
    let damqa = t.get(key(Scheme::Damqa, 4, 16));
    let damqs = t.get(key(Scheme::Damqs, 4, 14));
    let damqas = t.get(key(Scheme::Damqas, 4, 13));
    let (rs, ras) = (damqs / damqa, damqas / damqa);
    verdict(
        rs >= 0.95 && ras >= 0.95,
        format!("DAMQA vb4 {damqa:.4}; DAMQS 14 {damqs:.4} ({:.1}%); DAMQAS 13 {damqas:.4} ({:.1}%)", rs * 100.0, ras * 100.0),
    )
}

fn c11_unbalanced_benefit(t: &Throughputs) -> Verdict {
    let uni = t.equal_budget(Scheme::Damqs, 40, false) / t.equal_budget(Scheme::Samq, 40, false);
    let tel_s = t.equal_budget(Scheme::Samq, 40, true);
    let tel_d = t.equal_budget(Scheme::Damqs, 40, true);
    let tel = tel_d / tel_s;
    verdict(
        tel > uni,
        format!("fr 4%: DAMQS/SAMQ telecom30 {tel:.4} ({tel_d:.4}/{tel_s:.4}) vs uniform {uni:.4}"),
    )
}

fn c12_determinism() -> Verdict {
    let mut configs = Vec::new();
    for scheme in Scheme::ALL {
        for rate in [0.1, 0.3] {
            for seed in [1, 2] {
                configs.push(SimConfig {
                    scheme,
                    seed,
                    injection_rate: rate,
                    fault_rate: 0.04,
                    warmup_cycles: 200,
                    measure_cycles: 800,
                    drain_limit_cycles: 2_000,
                    ..SimConfig::default()
                });
            }
        }
    }
    let csv = |jobs| {
        let rows: Vec<_> = cmd_sweep(&configs, jobs).into_iter().map(|r| r.unwrap()).collect();
        records_to_csv(&rows)
    };
    let reference = csv(1);
    let runs = [1, 2, 4, 0, 3];
    let same = runs.iter().filter(|&&j| csv(j) == reference).count();
    verdict(
        same == runs.len(),
        format!(
            "{} rows, {same}/{} repeats byte-identical (jobs {:?})",
            configs.len(),
            runs.len(),
            runs
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let throughputs = Throughputs {
        cache: Mutex::new(HashMap::new()),
    };
    let mut long: Option<Vec<LongRun>> = None;
    let mut failed = 0;
    let names = [
        "formula exactness",
        "buffer oracle equivalence",
        "no starvation",
        "reserve accounting",
        "routing legality",
        "deadlock/livelock freedom",
        "conservation",
        "pre-saturation equivalence",
        "fault-robustness ordering",
        "buffer economy",
        "unbalanced-traffic benefit",
        "determinism",
    ];
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !on(n) {
            continue;
        }
        let t0 = Instant::now();
        let v = match n {
            1 => c1_buf_total(),
            2 => c2_oracle_equivalence(),
            3 => c3_no_starvation(),
            4 => c4_reserve_accounting(),
            5 => c5_routing_legality(),
            6 => c6_deadlock_freedom(long.get_or_insert_with(long_runs)),
            7 => c7_conservation(long.get_or_insert_with(long_runs)),
            8 => c8_pre_saturation(),
            9 => c9_fault_ordering(&throughputs),
            10 => c10_buffer_economy(&throughputs),
            11 => c11_unbalanced_benefit(&throughputs),
            _ => c12_determinism(),
        };
        failed += usize::from(!v.pass);
        println!(
            "{} {n:>2} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
