//! End-to-end acceptance checks. Prints one line per criterion and fails if
//! any of them does not hold.

mod common;

use std::time::{Duration, Instant};

use common::scenario;
use detmac::harness::experiments::{fig4, fig6_points, fig7_points, FIG4_TARGET_BPS, FIG6_SUPERFRAMES};
use detmac::harness::setup::Purpose;
use detmac::harness::{build_network, run_scenario, Arbitration, Scenario};
use detmac::ids::{AllocId, NodeId, StarId};
use detmac::protocol::{AssocPath, FrameKind};
use detmac::schedule::{
    conflicts, occupancy, occupancy_of, AllocKind, Allocation, Direction, Interference, ReleaseReason,
    ReservationLevel, Request, ScheduleConfig, ScheduleCycle,
};
use detmac::timing::{self, Micros, SuperframeConfig, MAX_ORDER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, Duration, fn() -> Verdict);

struct Verdict {
    ok: bool,
    detail: String,
}

impl Verdict {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Verdict { ok, detail: detail.into() }
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let within = took <= budget;
    let mut detail = format!("{} [{:.2?} of {:?}]", v.detail, took, budget);
    if !within {
        detail += " over budget";
    }
    Verdict { ok: v.ok && within, detail }
}

fn timing_exactness() -> Verdict {
    let mut checked = 0;
    for bo in 0..=MAX_ORDER {
        let bi = 15_360u64 * 2u64.pow(u32::from(bo));
        if timing::beacon_interval(bo) != Ok(Micros(bi)) {
            return Verdict::new(false, format!("beacon interval wrong at BO={bo}"));
        }
        for so in 0..=bo {
            let sd = 15_360u64 * 2u64.pow(u32::from(so));
            let cfg = SuperframeConfig::with_orders(bo, so).unwrap();
            if timing::active_portion(so) != Ok(Micros(sd))
                || cfg.beacon_interval() != Micros(bi)
                || cfg.active_portion() != Micros(sd)
                || cfg.slot_duration() * 16 != Micros(sd)
            {
                return Verdict::new(false, format!("durations wrong at BO={bo} SO={so}"));
            }
            checked += 1;
        }
    }
    Verdict::new(true, format!("{checked} order pairs exact"))
}

const N_MAX: u8 = 4;

fn random_alloc(rng: &mut ChaCha8Rng, id: u32) -> Allocation {
    let level = rng.gen_range(0..=N_MAX);
    Allocation {
        id: AllocId(id),
        kind: AllocKind::Gts,
        owner: NodeId(1000 + id as u16),
        star: StarId(rng.gen_range(0..3)),
        slot: rng.gen_range(2..6),
        level: ReservationLevel::new(level, N_MAX).unwrap(),
        phase: rng.gen_range(0..1 << level),
        direction: Direction::ToCoordinator,
        granted_at: 0,
    }
}

fn pair_oracle(a: &Allocation, b: &Allocation, rel: &Interference) -> bool {
    !occupancy_of([a, b], rel, N_MAX).double_occupied().is_empty()
}

fn schedule_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let sequences = 10_000;
    let mut admitted = 0u64;
    let mut pairs = 0u64;
    for seq in 0..sequences {
        let mask: u8 = rng.gen_range(0..8);
        let rel = Interference::from_pairs(
            [(0, 1), (0, 2), (1, 2)]
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, (a, b))| (StarId(a), StarId(b))),
        );
        let slots = [6u8, 8, 16][rng.gen_range(0..3)];
        let sf = SuperframeConfig::new(3, 3, slots, slots - 4).unwrap();
        let cfg = ScheduleConfig { n_max: N_MAX, ..ScheduleConfig::for_superframe(&sf) };
        let mut c = ScheduleCycle::new(cfg, rel.clone()).unwrap();
        for s in 0..3u16 {
            c.register_star(StarId(s), NodeId(s)).unwrap();
            for n in 0..6u16 {
                c.register_node(StarId(s), NodeId(10 * (s + 1) + n)).unwrap();
            }
        }
        for t in 0..rng.gen_range(1..40u64) {
            if rng.gen_bool(0.8) {
                let star = rng.gen_range(0..3u16);
                let req = Request {
                    kind: AllocKind::Gts,
                    owner: NodeId(10 * (star + 1) + rng.gen_range(0..6)),
                    star: StarId(star),
                    level: rng.gen_range(0..=N_MAX),
                    direction: Direction::ToCoordinator,
                };
                if c.admit(req, t).unwrap().granted().is_some() {
                    admitted += 1;
                }
            } else {
                let ids: Vec<AllocId> = c.allocations().map(|a| a.id).collect();
                if !ids.is_empty() {
                    let id = ids[rng.gen_range(0..ids.len())];
                    c.release(id, ReleaseReason::NodeRequest, t).unwrap();
                }
            }
        }
        if !occupancy(&c).double_occupied().is_empty() {
            return Verdict::new(false, format!("sequence {seq} double-occupies a cell"));
        }
        let mut all: Vec<Allocation> = c.allocations().cloned().collect();
        all.push(random_alloc(&mut rng, 90_000));
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                pairs += 1;
                if conflicts(a, b, &rel) != pair_oracle(a, b, &rel) {
                    return Verdict::new(false, format!("sequence {seq}: conflicts disagrees for {a:?} / {b:?}"));
                }
            }
        }
    }
    Verdict::new(true, format!("{sequences} sequences, {admitted} grants, {pairs} pairs agree"))
}

fn fractional_bandwidth() -> Verdict {
    let horizon = 1u64 << N_MAX;
    for level in 0..=N_MAX {
        for phase in 0..1u32 << level {
            let a = Allocation {
                id: AllocId(1),
                kind: AllocKind::Pds,
                owner: NodeId(1),
                star: StarId(0),
                slot: 9,
                level: ReservationLevel::new(level, N_MAX).unwrap(),
                phase,
                direction: Direction::ToCoordinator,
                granted_at: 0,
            };
            let expect = (horizon >> level) as usize;
            let cells = occupancy_of([&a], &Interference::new(), N_MAX).occupied_cells();
            let counted = (0..horizon).filter(|&k| a.occurs_in(k)).count();
            if cells != expect || counted != expect {
                return Verdict::new(false, format!("level {level} phase {phase}: {cells} cells, expected {expect}"));
            }
        }
    }
    Verdict::new(true, format!("levels 0..={N_MAX} at every phase"))
}

fn fig4_endpoint() -> Verdict {
    let rows: Vec<_> = fig4().into_iter().filter(|r| r.scenario == "fig4-calibrated").collect();
    let at_127 = rows.iter().find(|r| r.psdu == 127).map(|r| r.delivered_bps).unwrap_or(0.0);
    let err = (at_127 - FIG4_TARGET_BPS).abs() / FIG4_TARGET_BPS;
    let increasing = rows.windows(2).all(|w| w[0].psdu < w[1].psdu && w[0].delivered_bps < w[1].delivered_bps);
    Verdict::new(
        err <= 0.05 && increasing,
        format!("{at_127:.1} bps at PSDU 127 ({:.2}% off), strictly increasing: {increasing}", err * 100.0),
    )
}

fn fig6_shape() -> Verdict {
    let points = fig6_points(1).expect("fig6 scenarios are valid");
    let acked: Vec<_> = points.iter().filter(|p| p.acked).collect();
    let bps = |bo: u8| acked.iter().find(|p| p.bo == bo).map(|p| p.row.delivered_bps).unwrap();
    let zero_at_0 = bps(0) == 0.0;
    let rising = bps(1) < bps(2) && bps(2) < bps(3);
    let band: Vec<f64> = (3..=8).map(bps).collect();
    let (lo, hi) = band.iter().fold((f64::MAX, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let variation = (hi - lo) / hi;
    let mismatch: Vec<String> = points
        .iter()
        .filter(|p| (p.row.delivered_bps - p.analytic_bps).abs() > p.tolerance_bps)
        .map(|p| format!("BO{} acked={}", p.bo, p.acked))
        .collect();
    let ok = zero_at_0 && rising && variation < 0.25 && mismatch.is_empty();
    Verdict::new(
        ok,
        format!(
            "BO0 acked {:.1} bps; BO1..3 {:.1} / {:.1} / {:.1} strictly rising: {rising}; \
             BO3..8 variation {:.1}%; analytic mismatches: {}; {} superframes per point",
            bps(0),
            bps(1),
            bps(2),
            bps(3),
            variation * 100.0,
            if mismatch.is_empty() { "none".to_string() } else { mismatch.join(", ") },
            FIG6_SUPERFRAMES,
        ),
    )
}

fn fig7_determinism() -> Verdict {
    let points = fig7_points(1).expect("fig7 scenarios are valid");
    let refs: Vec<f64> = points.iter().map(|p| p.reference.delivered_bps).collect();
    let mean = refs.iter().sum::<f64>() / refs.len() as f64;
    let spread = refs.iter().cloned().fold(f64::MIN, f64::max) - refs.iter().cloned().fold(f64::MAX, f64::min);
    let stable = mean > 0.0 && spread <= 0.001 * mean;
    let peak = points.iter().map(|p| p.aggregate.delivered_bps).fold(0.0, f64::max);
    let at_32 = points.iter().find(|p| p.contenders == 32).map(|p| p.aggregate.delivered_bps).unwrap();
    Verdict::new(
        stable && at_32 < peak,
        format!("reference {mean:.1} bps, spread {spread:.3} bps; CAP aggregate {at_32:.1} at 32 vs peak {peak:.1}"),
    )
}

const HIDDEN: &str = "[pan]\nbo=2\nso=2\nduration=1024\n[star 1]\n[star 2]\n[node 3]\nstar=1\n\
                      [links]\nrange = 0-1 0-2 1-3 2-3\ninterfere = 1-2\n";

fn shared_node_collisions(s: &Scenario, seed: u64) -> u64 {
    let out = run_scenario(s, seed).unwrap();
    out.global.beacon_collisions.get(&NodeId(3)).copied().unwrap_or(0)
}

fn beacon_collision_freedom() -> Verdict {
    let with_gbs = scenario(HIDDEN);
    let mut without = with_gbs.clone();
    without.arbitration = Arbitration::None;
    let hit = (1..=40).find(|&seed| shared_node_collisions(&without, seed) > 0);
    let with: u64 = (1..=3).map(|seed| shared_node_collisions(&with_gbs, seed)).sum();
    let beacons = run_scenario(&with_gbs, 1)
        .unwrap()
        .trace
        .iter()
        .filter(|r| r.kind == FrameKind::Beacon && r.outcome == detmac::harness::TraceOutcome::Ok)
        .count();
    Verdict::new(
        hit.is_some() && with == 0 && with_gbs.duration >= 1000 && beacons > 0,
        format!(
            "without arbitration first collision at seed {hit:?}; with beacon slots {with} collisions over {} superframes",
            with_gbs.duration
        ),
    )
}

fn deterministic_association() -> Verdict {
    let path = format!("{}/scenarios/critical_association.cfg", env!("CARGO_MANIFEST_DIR"));
    let s = scenario(&std::fs::read_to_string(path).unwrap());
    let net = build_network(&s, 1).unwrap();
    let pds = net
        .decisions
        .iter()
        .find(|d| d.purpose == Purpose::Dedicated(NodeId(1)))
        .and_then(|d| d.outcome.clone().ok())
        .expect("critical node holds a dedicated slot");
    let bi = 15_360u64 << s.mac.sf.bo;
    let slot = (15_360u64 << s.mac.sf.so) / 16;
    let first = Micros(u64::from(pds.phase) * bi + u64::from(pds.slot) * slot);

    let out = run_scenario(&s, 1).unwrap();
    let critical = out.global.associations.iter().find(|a| a.node == NodeId(1));
    let exact = critical.is_some_and(|a| a.path == AssocPath::Dedicated && a.started_at == first);
    let bi = Micros(bi);
    let late = out
        .global
        .associations
        .iter()
        .filter(|a| a.path == AssocPath::Contention && a.completed_at > bi * 2)
        .count();
    let failed = out.global.association_failures.len();
    let contending = s.nodes.iter().filter(|n| !n.associated && n.pds_level.is_none()).count();
    let joined = out.global.associations.iter().filter(|a| a.path == AssocPath::Contention).count();
    let never = contending - joined - failed;
    Verdict::new(
        exact && late + failed + never > 0 && s.contenders() == 32,
        format!(
            "critical node at {:?} (first dedicated slot {first}); contention: {late} delayed, {failed} failed, {never} still waiting",
            critical.map(|a| a.started_at)
        ),
    )
}

fn reproducibility() -> Verdict {
    let dir = format!("{}/scenarios", env!("CARGO_MANIFEST_DIR"));
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    names.sort();
    for p in &names {
        let mut s = scenario(&std::fs::read_to_string(p).unwrap());
        s.duration = s.duration.min(128);
        let a = run_scenario(&s, 42).unwrap();
        let b = run_scenario(&s, 42).unwrap();
        if a.csv() != b.csv() || a.trace_text() != b.trace_text() {
            return Verdict::new(false, format!("{} differs between runs", p.display()));
        }
    }
    Verdict::new(true, format!("{} scenarios byte-identical", names.len()))
}

#[test]
fn acceptance() {
    let criteria: Vec<Criterion> = vec![
        ("timing exactness", Duration::from_secs(1), timing_exactness),
        ("schedule oracle equivalence", Duration::from_secs(30), schedule_oracle),
        ("fractional bandwidth", Duration::from_secs(1), fractional_bandwidth),
        ("unconstrained throughput endpoint", Duration::from_secs(1), fig4_endpoint),
        ("throughput versus beacon order", Duration::from_secs(60), fig6_shape),
        ("reserved flow under contention", Duration::from_secs(120), fig7_determinism),
        ("beacon collision freedom", Duration::from_secs(30), beacon_collision_freedom),
        ("deterministic association", Duration::from_secs(30), deterministic_association),
        ("reproducibility", Duration::from_secs(10), reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let v = timed(budget, check);
        println!("criterion {}: {} {name}: {}", i + 1, if v.ok { "PASS" } else { "FAIL" }, v.detail);
        if !v.ok {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
