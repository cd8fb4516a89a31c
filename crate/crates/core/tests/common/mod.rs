#![allow(dead_code)]

use detmac::harness::{parse_scenario, Scenario, SimOutput};
use detmac::ids::NodeId;
use detmac::protocol::FrameKind;
use detmac::schedule::{Allocation, Direction};

pub fn scenario(text: &str) -> Scenario {
    parse_scenario(text).unwrap_or_else(|e| panic!("bad test scenario:\n{e}"))
}

pub fn shipped(name: &str) -> Scenario {
    let path = format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    scenario(&std::fs::read_to_string(path).unwrap())
}

/// Device that transmits in a reservation.
pub fn holder(a: &Allocation) -> NodeId {
    match a.direction {
        Direction::ToCoordinator => a.owner,
        Direction::FromCoordinator | Direction::Beacon => a.star.coordinator(),
    }
}

/// Every data frame in a reservable slot lies inside a reservation its
/// sender holds, and no data frame touches the beacon slot.
pub fn assert_slot_ownership(out: &SimOutput) {
    let sf = out.scenario.mac.sf;
    let slot_len = sf.slot_duration();
    let bi = sf.beacon_interval();
    for r in out.trace.iter().filter(|r| r.kind == FrameKind::Data && r.outcome != detmac::harness::TraceOutcome::Dropped) {
        let slot = r.slot.expect("data sent in the inactive portion");
        assert_ne!(slot, 0, "data in the beacon slot: {r}");
        if !sf.is_reservable(slot) {
            let cap_end = bi * r.superframe + sf.cap_window().1;
            assert!(r.end <= cap_end, "contention frame overruns the CAP: {r}");
            continue;
        }
        let held = out
            .schedules
            .iter()
            .flat_map(|c| c.allocations())
            .any(|a| a.slot == slot && a.occurs_in(r.superframe) && holder(a) == r.src);
        assert!(held, "data outside the sender's reservations: {r}");
        let slot_end = bi * r.superframe + sf.slot_offset(slot) + slot_len;
        assert!(r.end <= slot_end, "frame overruns its slot: {r}");
    }
}
