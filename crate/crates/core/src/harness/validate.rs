//! Offline admission of every declared reservation.

use std::fmt::Write;

use super::scenario::{Arbitration, Scenario};
use super::setup::{build_network, Decision, Purpose};
use crate::protocol::FlowMode;
use crate::schedule::{dump, occupancy, Admission, AllocKind, Direction, Request, ScheduleCycle, ScheduleError};

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub decisions: Vec<Decision>,
    pub cycles: Vec<ScheduleCycle>,
    pub double_occupied: usize,
    pub text: String,
}

impl ValidationReport {
    pub fn refusals(&self) -> usize {
        self.decisions.iter().filter(|d| d.outcome.is_err()).count()
    }

    pub fn is_ok(&self) -> bool {
        self.refusals() == 0 && self.double_occupied == 0
    }
}

/// Admits start-up reservations as the simulator would, then every GTS
/// flow in declaration order, and reports the resulting schedules.
pub fn validate_schedule(s: &Scenario) -> Result<ValidationReport, ScheduleError> {
    let net = build_network(s, 0)?;
    let mut decisions = net.decisions.clone();
    let mut cycles: Vec<ScheduleCycle> =
        net.devices.iter().filter_map(|d| d.arbiter().map(|a| a.cycle.clone())).collect();
    for f in &s.flows {
        let FlowMode::Gts { level } = f.mode else {
            continue;
        };
        let (owner, star) = s.flow_owner(f);
        let direction = if s.is_coordinator(f.src) { Direction::FromCoordinator } else { Direction::ToCoordinator };
        let cycle = match s.arbitration {
            Arbitration::Pan => cycles.first_mut(),
            Arbitration::None => cycles.iter_mut().find(|c| c.stars().contains_key(&star)),
        };
        let Some(cycle) = cycle else {
            continue;
        };
        if !cycle.knows(star, owner) {
            cycle.register_node(star, owner)?;
        }
        let admission = cycle.admit(Request { kind: AllocKind::Gts, owner, star, level, direction }, 0)?;
        let outcome = match admission {
            Admission::Granted(a) => Ok(a),
            Admission::Refused(r) => Err(r),
        };
        decisions.push(Decision { purpose: Purpose::Flow(f.id), outcome });
    }
    let mut text = String::new();
    let _ = writeln!(text, "# scenario {}", s.name);
    for d in &decisions {
        match &d.outcome {
            Ok(a) => {
                let _ = writeln!(
                    text,
                    "granted {}: id {} slot {} level {} phase {}",
                    d.purpose,
                    a.id,
                    a.slot,
                    a.level.n(),
                    a.phase
                );
            }
            Err(r) => {
                let _ = writeln!(text, "refused {}: {r}", d.purpose);
            }
        }
    }
    let mut double_occupied = 0;
    for c in &cycles {
        if cycles.len() > 1 {
            let stars: Vec<String> = c.stars().keys().map(|s| s.to_string()).collect();
            let _ = writeln!(text, "# schedule of star {}", stars.join(","));
        }
        text.push_str(&dump(c));
        double_occupied += occupancy(c).double_occupied().len();
    }
    let refused = decisions.iter().filter(|d| d.outcome.is_err()).count();
    let _ = writeln!(text, "# refusals: {refused}");
    Ok(ValidationReport { decisions, cycles, double_occupied, text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::parse_scenario;

    fn flows(levels: &[u8], slots: u8) -> String {
        let mut t = format!("[pan]\nbo=3\nso=3\nslots={slots}\nmin_cap=1\nmax_gts=7\n");
        for (i, l) in levels.iter().enumerate() {
            let id = i + 1;
            t += &format!("[node {id}]\nstar=0\n[flow {id}]\nsrc={id}\nmode=gts {l}\n");
        }
        t
    }

    #[test]
    fn feasible_schedule_validates() {
        let s = parse_scenario(&flows(&[0, 1, 1], 16)).unwrap();
        let r = validate_schedule(&s).unwrap();
        assert!(r.is_ok(), "{}", r.text);
        assert!(r.text.contains("# double-occupied cells: 0"));
    }

    #[test]
    fn oversubscribed_slot_is_refused() {
        // three slots of which one is the beacon and one the CAP: a single reservable slot
        let s = parse_scenario(&flows(&[1, 1, 2], 3)).unwrap();
        let r = validate_schedule(&s).unwrap();
        assert_eq!(r.refusals(), 1, "{}", r.text);
        assert!(r.text.contains("refused flow 3"));
    }

    #[test]
    fn non_interfering_stars_reuse_a_slot() {
        let text = "[pan]\nbo=3\nso=3\narbitration=none\n[star 1]\n[node 2]\nstar=0\n[node 3]\nstar=1\n\
                    [flow 1]\nsrc=2\nmode=gts 0\n[flow 2]\nsrc=3\nmode=gts 0\n";
        let s = parse_scenario(text).unwrap();
        let r = validate_schedule(&s).unwrap();
        assert!(r.is_ok());
        let slots: Vec<u8> = r.decisions.iter().map(|d| d.outcome.as_ref().unwrap().slot).collect();
        assert_eq!(slots, vec![9, 9]);
    }
}
