//! Turns a scenario into devices, a medium and the reservations decided
//! before the first superframe.

use std::collections::BTreeMap;

use rand::Rng;

use super::scenario::{Arbitration, Scenario};
use crate::ids::{FlowId, NodeId, StarId};
use crate::protocol::{Arbiter, BeaconCalendar, Device, DeviceSetup, FlowMode, Role};
use crate::schedule::{
    Admission, AllocKind, Allocation, Direction, Interference, Refusal, Request, ScheduleConfig, ScheduleCycle,
    ScheduleError,
};
use crate::simcore::{Medium, Port, RngStream};
use crate::timing::Micros;

/// What a start-up reservation is for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Purpose {
    Beacon(StarId),
    Uplink(StarId),
    Dedicated(NodeId),
    Flow(FlowId),
}

impl std::fmt::Display for Purpose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Purpose::Beacon(s) => write!(f, "beacon slot of star {s}"),
            Purpose::Uplink(s) => write!(f, "uplink of star {s}"),
            Purpose::Dedicated(n) => write!(f, "dedicated slot of node {n}"),
            Purpose::Flow(id) => write!(f, "flow {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub purpose: Purpose,
    pub outcome: Result<Allocation, Refusal>,
}

/// Everything the simulation driver needs.
#[derive(Debug, Clone)]
pub struct Network {
    pub devices: Vec<Device>,
    pub ports: BTreeMap<NodeId, Port>,
    pub medium: Medium,
    pub decisions: Vec<Decision>,
}

impl Network {
    pub fn port(&self, id: NodeId) -> Option<Port> {
        self.ports.get(&id).copied()
    }
}

fn schedule_config(s: &Scenario) -> ScheduleConfig {
    ScheduleConfig {
        n_max: s.mac.n_max,
        slots_per_superframe: s.mac.sf.slots_per_superframe,
        min_cap_slots: s.mac.sf.min_cap_slots,
        max_gts_per_superframe: s.mac.max_gts_per_superframe,
    }
}

/// Admits through `arb`, recording the decision and marking the result.
fn provision(
    arb: &mut Arbiter,
    req: Request,
    purpose: Purpose,
    decisions: &mut Vec<Decision>,
) -> Result<Option<Allocation>, ScheduleError> {
    let outcome = match arb.cycle.admit(req, 0)? {
        Admission::Granted(a) => Ok(a),
        Admission::Refused(r) => Err(r),
    };
    let granted = outcome.clone().ok();
    decisions.push(Decision { purpose, outcome });
    Ok(granted)
}

/// Start-up reservations of one arbiter, with the flow each one serves.
type Provisioned = Vec<(Allocation, Option<FlowId>)>;

fn provision_dedicated(
    s: &Scenario,
    arb: &mut Arbiter,
    stars: &[StarId],
    decisions: &mut Vec<Decision>,
) -> Result<Provisioned, ScheduleError> {
    let mut out = Vec::new();
    for n in s.nodes.iter().filter(|n| stars.contains(&n.star)) {
        if let Some(level) = n.pds_level {
            let req = Request { kind: AllocKind::Pds, owner: n.id, star: n.star, level, direction: Direction::ToCoordinator };
            if let Some(a) = provision(arb, req, Purpose::Dedicated(n.id), decisions)? {
                arb.track(a.id, None);
                out.push((a, None));
            }
        }
    }
    for f in &s.flows {
        let FlowMode::Pds { level } = f.mode else {
            continue;
        };
        let (owner, star) = s.flow_owner(f);
        if !stars.contains(&star) {
            continue;
        }
        let direction = if s.is_coordinator(f.src) { Direction::FromCoordinator } else { Direction::ToCoordinator };
        let req = Request { kind: AllocKind::Pds, owner, star, level, direction };
        if let Some(a) = provision(arb, req, Purpose::Flow(f.id), decisions)? {
            arb.track(a.id, Some(f.id));
            out.push((a, Some(f.id)));
        }
    }
    Ok(out)
}

fn register_members(s: &Scenario, cycle: &mut ScheduleCycle, stars: &[StarId]) -> Result<(), ScheduleError> {
    for n in s.nodes.iter().filter(|n| stars.contains(&n.star)) {
        cycle.register_node(n.star, n.id)?;
    }
    Ok(())
}

/// Builds every device. `seed` only matters for unarbitrated stars, whose
/// grid offsets are drawn at random.
pub fn build_network(s: &Scenario, seed: u64) -> Result<Network, ScheduleError> {
    let mut decisions = Vec::new();
    let pan_star = s.pan_star();
    let mut ids = vec![s.pan];
    ids.extend(s.stars.iter().map(|st| st.id.coordinator()));
    ids.extend(s.nodes.iter().map(|n| n.id));
    let ports: BTreeMap<NodeId, Port> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let mut setups: Vec<DeviceSetup> = ids
        .iter()
        .map(|&id| {
            let coordinator = s.is_coordinator(id);
            let star = s.star_of(id).unwrap_or(pan_star);
            DeviceSetup {
                id,
                star,
                role: if id == s.pan {
                    Role::Pan
                } else if coordinator {
                    Role::Coordinator
                } else {
                    Role::EndNode
                },
                parent: if coordinator { s.pan } else { star.coordinator() },
                associated: s.nodes.iter().find(|n| n.id == id).is_none_or(|n| n.associated),
                grid_offset: Micros::ZERO,
                calendar: None,
                flows: s.flows.iter().filter(|f| f.src == id).cloned().collect(),
                arbiter: None,
                superbeacon: false,
            }
        })
        .collect();

    // reservations announced by each coordinator before superframe 0
    let mut announce: BTreeMap<Port, Provisioned> = BTreeMap::new();
    match s.arbitration {
        Arbitration::Pan => {
            let mut cycle = ScheduleCycle::new(schedule_config(s), Interference::from_pairs(s.interference_pairs()))?;
            for star in s.all_stars() {
                cycle.register_star(star, star.coordinator())?;
            }
            let mut arb = Arbiter::new(cycle);
            for st in &s.stars {
                let req = Request {
                    kind: AllocKind::Gbs,
                    owner: st.id.coordinator(),
                    star: st.id,
                    level: st.gbs_level,
                    direction: Direction::Beacon,
                };
                if let Some(a) = provision(&mut arb, req, Purpose::Beacon(st.id), &mut decisions)? {
                    arb.mark_infrastructure(a.id);
                }
            }
            for st in &s.stars {
                let owner = st.id.coordinator();
                arb.cycle.register_node(pan_star, owner)?;
                let req = Request { kind: AllocKind::Gts, owner, star: pan_star, level: 0, direction: Direction::ToCoordinator };
                if let Some(a) = provision(&mut arb, req, Purpose::Uplink(st.id), &mut decisions)? {
                    arb.mark_infrastructure(a.id);
                }
            }
            register_members(s, &mut arb.cycle, &s.all_stars())?;
            let provisioned = provision_dedicated(s, &mut arb, &s.all_stars(), &mut decisions)?;
            for (a, flow) in provisioned {
                let coord = ports[&a.star.coordinator()];
                announce.entry(coord).or_default().push((a.clone(), flow));
                if a.star != pan_star {
                    announce.entry(0).or_default().push((a, flow));
                }
            }
            let pan = &mut setups[0];
            pan.calendar = Some(BeaconCalendar::every_superframe(Micros::ZERO));
            pan.superbeacon = !s.stars.is_empty();
            pan.arbiter = Some(arb);
        }
        Arbitration::None => {
            let mut rng = RngStream::new(seed).substream(0);
            let bi = s.mac.sf.beacon_interval();
            let slot = s.mac.sf.slot_duration();
            let positions = bi / slot;
            let mut offsets = BTreeMap::new();
            for star in s.all_stars() {
                let offset = slot * rng.gen_range(0..positions);
                offsets.insert(star, offset);
                let mut cycle = ScheduleCycle::new(schedule_config(s), Interference::new())?;
                cycle.register_star(star, star.coordinator())?;
                register_members(s, &mut cycle, &[star])?;
                let mut arb = Arbiter::new(cycle);
                let provisioned = provision_dedicated(s, &mut arb, &[star], &mut decisions)?;
                let port = ports[&star.coordinator()];
                announce.entry(port).or_default().extend(provisioned);
                let c = &mut setups[port];
                c.calendar = Some(BeaconCalendar::every_superframe(offset));
                c.arbiter = Some(arb);
            }
            for setup in &mut setups {
                setup.grid_offset = offsets[&setup.star];
            }
        }
    }

    let mut devices: Vec<Device> = setups.into_iter().map(|d| Device::new(d, s.mac)).collect();
    for (port, grants) in announce {
        for (a, flow) in grants {
            devices[port].announce_grant(&a, flow);
        }
    }
    let medium = match &s.range {
        None => Medium::fully_connected(ids.len()),
        Some(pairs) => Medium::new(ids.len(), pairs.iter().map(|(a, b)| (ports[a], ports[b]))),
    };
    Ok(Network { devices, ports, medium, decisions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::parse_scenario;

    #[test]
    fn pan_mode_provisions_beacons_uplinks_then_dedicated_slots() {
        let s = parse_scenario(
            "[pan]\nbo=3\nso=3\n[star 1]\ngbs_level=1\n[star 2]\n[node 5]\nstar=1\npds_level=2\n[links]\ninterfere = 1-2\n",
        )
        .unwrap();
        let net = build_network(&s, 1).unwrap();
        let purposes: Vec<String> = net.decisions.iter().map(|d| d.purpose.to_string()).collect();
        assert_eq!(
            purposes,
            ["beacon slot of star 1", "beacon slot of star 2", "uplink of star 1", "uplink of star 2", "dedicated slot of node 5"]
        );
        assert!(net.decisions.iter().all(|d| d.outcome.is_ok()));
        let arb = net.devices[0].arbiter().unwrap();
        assert_eq!(arb.infrastructure().len(), 4);
        assert_eq!(net.devices[1].pending_announcements().len(), 1);
    }

    #[test]
    fn unarbitrated_offsets_are_slot_aligned_and_seeded() {
        let s = parse_scenario("[pan]\nbo=3\nso=2\narbitration=none\n[star 1]\n[node 2]\nstar=1\n").unwrap();
        let a = build_network(&s, 9).unwrap();
        let b = build_network(&s, 9).unwrap();
        let slot = s.mac.sf.slot_duration();
        for (x, y) in a.devices.iter().zip(&b.devices) {
            assert_eq!(x.grid_offset(), y.grid_offset());
            assert_eq!(x.grid_offset() % slot, Micros::ZERO);
            assert!(x.grid_offset() < s.mac.sf.beacon_interval());
        }
        assert_eq!(a.devices[2].grid_offset(), a.devices[1].grid_offset());
    }
}
