mod common;

use common::{assert_slot_ownership, scenario, shipped};
use detmac::harness::{run_scenario, TraceOutcome};
use detmac::ids::{FlowId, NodeId};
use detmac::protocol::{AssocPath, FrameKind, Note};
use detmac::timing::{frames_per_slot, Micros, PhyParams, SuperframeConfig};
use proptest::prelude::*;

fn single_gts(bo: u8, level: u8, psdu: usize, acked: bool) -> String {
    format!(
        "[pan]\nbo={bo}\nso={bo}\n[node 1]\nstar=0\n[flow 1]\nsrc=1\npsdu={psdu}\nacked={acked}\nmode=gts {level}\n"
    )
}

fn analytic_bps(bo: u8, psdu: usize, acked: bool, level: u8) -> f64 {
    let sf = SuperframeConfig::with_orders(bo, bo).unwrap();
    let k = frames_per_slot(psdu, acked, &sf, &PhyParams::default()).unwrap();
    (k * psdu as u64 * 8) as f64 / sf.beacon_interval().as_secs_f64() / f64::from(1u32 << level)
}

#[test]
fn single_gts_throughput_equals_analytic_value() {
    let out = run_scenario(&scenario(&single_gts(3, 0, 127, true)), 1).unwrap();
    let expect = 127.0 * 8.0 / 0.122_88;
    assert!((analytic_bps(3, 127, true, 0) - expect).abs() < 1e-9);
    let got = out.flows[0].delivered_bps;
    let one_frame = 127.0 * 8.0 / (out.window.1 - out.window.0).as_secs_f64();
    assert!((got - expect).abs() <= one_frame, "{got} vs {expect}");
}

#[test]
fn level_one_halves_throughput() {
    let l0 = run_scenario(&scenario(&single_gts(3, 0, 127, true)), 1).unwrap();
    let l1 = run_scenario(&scenario(&single_gts(3, 1, 127, true)), 1).unwrap();
    assert_eq!(l0.flows[0].delivered_bits, 2 * l1.flows[0].delivered_bits);
}

#[test]
fn level_one_transfers_alternate_superframes() {
    let out = run_scenario(&scenario(&single_gts(3, 1, 60, true)), 4).unwrap();
    let parities: std::collections::BTreeSet<u64> =
        out.trace.iter().filter(|r| r.kind == FrameKind::Data).map(|r| r.superframe % 2).collect();
    assert_eq!(parities.len(), 1);
}

#[test]
fn one_exchange_per_occurrence_at_bo3_and_none_at_bo0() {
    let out = run_scenario(&scenario(&single_gts(3, 0, 127, true)), 1).unwrap();
    let mut per_sf = std::collections::BTreeMap::new();
    for r in out.trace.iter().filter(|r| r.kind == FrameKind::Data) {
        *per_sf.entry(r.superframe).or_insert(0) += 1;
    }
    assert!(per_sf.values().all(|&n| n == 1));
    let acks = out.trace.iter().filter(|r| r.kind == FrameKind::Ack && r.slot == Some(9)).count();
    assert_eq!(acks, per_sf.len());

    let out = run_scenario(&scenario(&single_gts(0, 0, 127, true)), 1).unwrap();
    assert_eq!(out.flows[0].sent, 0);
    assert_eq!(out.flows[0].delivered_bps, 0.0);
}

#[test]
fn zero_flow_scenario_has_zero_metrics() {
    let out = run_scenario(&scenario("[pan]\nbo=3\nso=3\n[node 1]\nstar=0\n"), 1).unwrap();
    assert!(out.flows.is_empty());
    assert!(out.rows().is_empty());
    assert_eq!(out.global.collisions, 0);
    assert!(out.trace.iter().all(|r| r.kind == FrameKind::Beacon));
}

#[test]
fn shipped_multi_star_scenario_respects_reservations() {
    let s = shipped("two_stars.cfg");
    for seed in 1..=5 {
        let out = run_scenario(&s, seed).unwrap();
        assert_slot_ownership(&out);
        assert_eq!(out.global.total_beacon_collisions(), 0);
        assert_eq!(out.global.radio_conflicts, 0);
        for (f, m) in s.flows.iter().zip(&out.flows) {
            assert!(m.delivered_bps <= m.offered_bps + 1e-9, "flow {} above its offered load", f.id);
        }
    }
}

#[test]
fn reserved_traffic_alone_never_collides() {
    let mut text = String::from("[pan]\nbo=4\nso=4\n[star 1]\ngbs_level=1\n[star 2]\ngbs_level=1\n");
    for (n, star) in [(10, 0), (11, 0), (20, 1), (21, 1), (30, 2)] {
        text += &format!("[node {n}]\nstar={star}\n");
    }
    for (i, (src, level)) in [(10, 0), (11, 2), (20, 1), (21, 3), (30, 0)].iter().enumerate() {
        text += &format!("[flow {}]\nsrc={src}\nmode=pds {level}\npsdu={}\n", i + 1, 40 + 20 * i);
    }
    text += "[flow 9]\nsrc=1\ndst=20\nmode=pds 1\npsdu=50\n[links]\ninterfere = 1-2\n";
    let s = scenario(&text);
    for seed in 1..=3 {
        let out = run_scenario(&s, seed).unwrap();
        assert_eq!(out.global.collisions, 0, "seed {seed}");
        assert!(out.trace.iter().all(|r| r.outcome == TraceOutcome::Ok));
        assert!(out.flows.iter().all(|m| m.delivered > 0));
        assert_slot_ownership(&out);
    }
}

#[test]
fn grant_arrives_within_two_star_beacon_intervals() {
    let s = scenario(
        "[pan]\nbo=3\nso=3\n[star 1]\n[node 5]\nstar=1\n[flow 1]\nsrc=5\nmode=gts 0\npsdu=50\n",
    );
    let out = run_scenario(&s, 2).unwrap();
    let bi = s.mac.sf.beacon_interval();
    let req = out
        .trace
        .iter()
        .find(|r| r.kind == FrameKind::GtsRequest && r.src == NodeId(5) && r.outcome == TraceOutcome::Ok)
        .expect("request reaches the star coordinator");
    let grant = out
        .notes
        .iter()
        .find(|n| matches!(n.note, Note::GrantReceived { node: NodeId(5), .. }))
        .expect("grant reaches the node");
    assert!(grant.time > req.time);
    assert!(grant.time - req.time <= bi * 2, "grant took {}", grant.time - req.time);
}

#[test]
fn saturated_schedule_refuses_with_reason() {
    let out = run_scenario(&shipped("oversubscribed.cfg"), 3).unwrap();
    let refusals: Vec<_> = out.notes.iter().filter(|n| matches!(n.note, Note::RefuseReceived { .. })).collect();
    assert_eq!(refusals.len(), 1);
    let grants = out.notes.iter().filter(|n| matches!(n.note, Note::GrantReceived { .. })).count();
    assert_eq!(grants, 7);
}

#[test]
fn sole_node_associates_within_one_superframe() {
    let s = scenario("[pan]\nbo=3\nso=3\n[node 1]\nstar=0\nassociated=false\n");
    let out = run_scenario(&s, 1).unwrap();
    let bi = s.mac.sf.beacon_interval();
    let a = out.global.associations.first().expect("associated");
    assert_eq!(a.path, AssocPath::Contention);
    let req = out.trace.iter().find(|r| r.kind == FrameKind::AssocRequest).unwrap();
    assert_eq!((req.superframe, req.outcome), (0, TraceOutcome::Ok));
    // the response rides on the next beacon
    let next_beacon = out.trace.iter().find(|r| r.kind == FrameKind::Beacon && r.superframe == 1).unwrap();
    assert_eq!(a.completed_at, next_beacon.end);
    assert!(a.started_at < bi);
}

#[test]
fn simultaneous_associations_collide() {
    let mut text = String::from("[pan]\nbo=3\nso=3\nduration=32\n");
    for n in 1..=32 {
        text += &format!("[node {n}]\nstar=0\nassociated=false\n");
    }
    let s = scenario(&text);
    let out = run_scenario(&s, 7).unwrap();
    let lost = out
        .trace
        .iter()
        .filter(|r| r.kind == FrameKind::AssocRequest && r.outcome == TraceOutcome::Collision)
        .count();
    assert!(lost > 0);
    let late = out.global.associations.iter().filter(|a| a.completed_at > s.mac.sf.beacon_interval() * 2).count();
    assert!(late + out.global.association_failures.len() + (32 - out.global.associations.len()) > 0);
}

#[test]
fn missed_beacon_skips_the_reserved_slot() {
    // stars 1 and 2 are not declared as interfering, so their beacons meet at node 3
    let s = scenario(
        "[pan]\nbo=2\nso=2\nduration=64\n[star 1]\ngbs_level=1\n[star 2]\ngbs_level=2\n[node 3]\nstar=1\n\
         [flow 1]\nsrc=3\nmode=pds 0\npsdu=40\n[links]\nrange = 0-1 0-2 1-3 2-3\n",
    );
    let out = run_scenario(&s, 1).unwrap();
    let lost: std::collections::BTreeSet<u64> = out
        .trace
        .iter()
        .filter(|r| r.kind == FrameKind::Beacon && r.src == NodeId(1) && r.outcome == TraceOutcome::Collision)
        .map(|r| r.superframe)
        .collect();
    assert!(!lost.is_empty());
    assert!(out.notes.iter().any(|n| matches!(n.note, Note::GtsSkipped { node: NodeId(3), .. })));
    let sent: Vec<u64> =
        out.trace.iter().filter(|r| r.kind == FrameKind::Data && r.src == NodeId(3)).map(|r| r.superframe).collect();
    assert!(!sent.is_empty());
    for k in sent {
        // star 1 beacons every second superframe
        assert!(!lost.contains(&(k - k % 2)), "sent in superframe {k} after a lost beacon");
    }
}

#[test]
fn gbs_level1_beacons_never_collide() {
    let s = scenario(
        "[pan]\nbo=2\nso=2\nduration=512\n[star 1]\ngbs_level=1\n[star 2]\ngbs_level=1\n[node 3]\nstar=1\n\
         [links]\nrange = 0-1 0-2 1-3 2-3\ninterfere = 1-2\n",
    );
    let out = run_scenario(&s, 5).unwrap();
    assert_eq!(out.global.total_beacon_collisions(), 0);
    let beacons = |star: u16| out.trace.iter().filter(move |r| r.kind == FrameKind::Beacon && r.src == NodeId(star));
    assert!(beacons(1).all(|r| r.superframe % 2 == 0 && r.slot == Some(9)));
    assert!(beacons(2).all(|r| r.superframe % 2 == 1 && r.slot == Some(9)));
}

#[test]
fn contention_loses_gts_requests_for_some_seed() {
    let mut text = String::from("[pan]\nbo=3\nso=3\nduration=32\n");
    for n in 1..=4 {
        text += &format!("[node {n}]\nstar=0\n[flow {n}]\nsrc={n}\nmode=gts 2\npsdu=30\n");
    }
    for n in 5..=8 {
        text += &format!("[node {n}]\nstar=0\n[flow {n}]\nsrc={n}\nmode=cap\n");
    }
    let s = scenario(&text);
    let lossy = (1..=20).filter(|&seed| run_scenario(&s, seed).unwrap().global.gts_request_losses > 0).count();
    assert!(lossy > 0);
}

#[test]
fn same_seed_same_bytes() {
    for name in ["two_stars.cfg", "critical_association.cfg"] {
        let s = shipped(name);
        let a = run_scenario(&s, 11).unwrap();
        let b = run_scenario(&s, 11).unwrap();
        assert_eq!(a.csv(), b.csv());
        assert_eq!(a.trace_text(), b.trace_text());
    }
}

#[test]
fn pds_association_happens_at_the_first_occurrence() {
    let s = shipped("critical_association.cfg");
    let out = run_scenario(&s, 3).unwrap();
    let a = out.global.associations.iter().find(|a| a.node == NodeId(1)).unwrap();
    assert_eq!(a.path, AssocPath::Dedicated);
    assert_eq!(a.started_at, s.mac.sf.slot_offset(9));
    assert!(a.completed_at < s.mac.sf.slot_offset(10));
}

fn contention(n: u16, psdu: usize) -> String {
    let mut text = String::from("[pan]\nbo=2\nso=2\nduration=48\nretry_limit=2\n");
    for i in 1..=n {
        text += &format!("[node {i}]\nstar=0\n[flow {i}]\nsrc={i}\nmode=cap\npsdu={psdu}\n");
    }
    text
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frames_are_conserved(seed in any::<u64>(), n in 1u16..10, psdu in 12usize..=127) {
        let out = run_scenario(&scenario(&contention(n, psdu)), seed).unwrap();
        for m in &out.flows {
            prop_assert_eq!(m.sent, m.delivered + m.dropped + m.in_flight);
            prop_assert!(m.in_flight <= 1);
        }
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), n in 1u16..6) {
        let s = scenario(&contention(n, 80));
        let a = run_scenario(&s, seed).unwrap();
        let b = run_scenario(&s, seed).unwrap();
        prop_assert_eq!(a.csv(), b.csv());
        prop_assert_eq!(a.trace_text(), b.trace_text());
    }

    #[test]
    fn contention_stays_out_of_reserved_slots(seed in any::<u64>(), n in 1u16..8) {
        let mut text = contention(n, 100);
        text += "[node 50]\nstar=0\n[flow 50]\nsrc=50\nmode=pds 1\npsdu=70\n";
        let out = run_scenario(&scenario(&text), seed).unwrap();
        assert_slot_ownership(&out);
        let reserved = out.flows.last().unwrap();
        prop_assert_eq!(reserved.collisions, 0);
    }
}

#[test]
fn latency_is_measured_from_enqueue() {
    let s = scenario("[pan]\nbo=3\nso=3\n[node 1]\nstar=0\n[flow 1]\nsrc=1\nmode=pds 0\npsdu=40\nload=1\n");
    let out = run_scenario(&s, 1).unwrap();
    let m = out.flow(FlowId(1)).unwrap();
    // one frame per superframe, queued at its start and sent at slot 9
    let expect = s.mac.sf.slot_offset(9) + detmac::timing::frame_airtime(40, &s.mac.phy).unwrap();
    assert_eq!(m.max_latency_us, Some(expect.as_u64()));
    assert_eq!(m.mean_latency_us, Some(expect.as_u64() as f64));
    assert_eq!(m.delivered_bps, 40.0 * 8.0 / s.mac.sf.beacon_interval().as_secs_f64());
    let _ = Micros::ZERO;
}
