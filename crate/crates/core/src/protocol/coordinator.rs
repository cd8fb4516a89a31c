use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::device::{Device, LeasePurpose, RequestState, Role};
use super::frame::{
    beacon_entry_capacity, Announcement, BeaconBody, BeaconCalendar, Frame, GtsAsk, Payload, SuperbeaconBody,
};
use super::{FlowMode, Note, Outbox, Timer};
use crate::ids::{AllocId, FlowId, NodeId};
use crate::schedule::{
    inactivity_sweep, AllocKind, Admission, Allocation, Direction, LeaseTable, Request, ScheduleCycle,
};
use crate::timing::Micros;

const SEEN_MEMORY: usize = 256;
const MAX_RELAY_ASKS: usize = 24;
const MAX_LEASE_REPORT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
struct Queued {
    arrival: Micros,
    requester: NodeId,
    ask: GtsAsk,
}

/// Admission state held by the device that arbitrates reservations: the PAN
/// coordinator, or every coordinator when stars run unarbitrated.
#[derive(Debug, Clone)]
pub struct Arbiter {
    pub cycle: ScheduleCycle,
    pub leases: LeaseTable,
    infrastructure: BTreeSet<AllocId>,
    flow_of: BTreeMap<AllocId, FlowId>,
    queue: Vec<Queued>,
}

impl Arbiter {
    pub fn new(cycle: ScheduleCycle) -> Self {
        Arbiter {
            cycle,
            leases: LeaseTable::new(),
            infrastructure: BTreeSet::new(),
            flow_of: BTreeMap::new(),
            queue: Vec::new(),
        }
    }

    /// Marks a beacon slot or relay uplink: listed in superbeacons, never timed out.
    pub fn mark_infrastructure(&mut self, id: AllocId) {
        self.infrastructure.insert(id);
    }

    pub fn is_infrastructure(&self, id: AllocId) -> bool {
        self.infrastructure.contains(&id)
    }

    /// Tracks a data reservation for inactivity and remembers which flow it serves.
    pub fn track(&mut self, id: AllocId, flow: Option<FlowId>) {
        self.leases.track(id);
        if let Some(f) = flow {
            self.flow_of.insert(id, f);
        }
    }

    pub fn flow_of(&self, id: AllocId) -> Option<FlowId> {
        self.flow_of.get(&id).copied()
    }

    pub fn infrastructure(&self) -> Vec<Allocation> {
        self.infrastructure.iter().filter_map(|id| self.cycle.allocation(*id)).cloned().collect()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn enqueue(&mut self, arrival: Micros, requester: NodeId, ask: GtsAsk) {
        let dup_queued = self.queue.iter().any(|q| q.ask.owner == ask.owner && q.ask.flow == ask.flow);
        let dup_granted = self.flow_of.iter().any(|(id, f)| {
            *f == ask.flow && self.cycle.allocation(*id).is_some_and(|a| a.owner == ask.owner)
        });
        if !dup_queued && !dup_granted {
            self.queue.push(Queued { arrival, requester, ask });
        }
    }

    /// Processes queued requests in arrival order, ties broken by requester,
    /// then sweeps idle leases once per horizon.
    pub fn tick(&mut self, superframe: u64, threshold: u32, out: &mut Outbox) -> Vec<Announcement> {
        let mut queue = std::mem::take(&mut self.queue);
        queue.sort_by_key(|q| (q.arrival, q.requester));
        let mut decided = Vec::new();
        for q in queue {
            let ask = q.ask;
            if !self.cycle.knows(ask.star, ask.owner) && self.cycle.register_node(ask.star, ask.owner).is_err() {
                continue;
            }
            let req = Request { kind: ask.kind, owner: ask.owner, star: ask.star, level: ask.level, direction: ask.direction };
            match self.cycle.admit(req, superframe) {
                Ok(Admission::Granted(alloc)) => {
                    self.track(alloc.id, Some(ask.flow));
                    out.note(Note::Admitted { star: alloc.star, alloc: alloc.id, owner: alloc.owner });
                    decided.push(Announcement::Grant { alloc, flow: Some(ask.flow) });
                }
                Ok(Admission::Refused(reason)) => {
                    out.note(Note::Refused { star: ask.star, owner: ask.owner, reason });
                    decided.push(Announcement::Refuse { owner: ask.owner, star: ask.star, flow: ask.flow, reason });
                }
                Err(_) => {}
            }
        }
        let horizon = u64::from(self.cycle.horizon());
        if superframe > 0 && superframe.is_multiple_of(horizon) {
            for r in inactivity_sweep(&mut self.cycle, &mut self.leases, threshold, superframe) {
                self.flow_of.remove(&r.alloc);
                decided.push(Announcement::Release { alloc: r.alloc, owner: r.owner, star: r.star });
            }
        }
        decided
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CoordState {
    pub arbiter: Option<Arbiter>,
    superbeacon: bool,
    announcements: Vec<(Announcement, u8)>,
    seen: VecDeque<Announcement>,
    star_allocs: BTreeMap<AllocId, Allocation>,
    relay_asks: Vec<GtsAsk>,
    in_flight: usize,
    unused: BTreeMap<AllocId, u32>,
    report_dirty: bool,
    heard: BTreeSet<AllocId>,
    last_superbeacon: Option<u64>,
    suspended: bool,
}

impl CoordState {
    pub fn new(arbiter: Option<Arbiter>, superbeacon: bool) -> Self {
        CoordState {
            arbiter,
            superbeacon,
            announcements: Vec::new(),
            seen: VecDeque::new(),
            star_allocs: BTreeMap::new(),
            relay_asks: Vec::new(),
            in_flight: 0,
            unused: BTreeMap::new(),
            report_dirty: false,
            heard: BTreeSet::new(),
            last_superbeacon: None,
            suspended: false,
        }
    }

    pub fn mark_used(&mut self, alloc: AllocId) {
        self.heard.insert(alloc);
    }

    fn remember(&mut self, a: &Announcement) -> bool {
        if self.seen.contains(a) {
            return false;
        }
        if self.seen.len() == SEEN_MEMORY {
            self.seen.pop_front();
        }
        self.seen.push_back(a.clone());
        true
    }
}

impl Device {
    /// Announces a reservation decided outside the request path (dedicated
    /// slots provisioned at start-up).
    pub fn announce_grant(&mut self, alloc: &Allocation, flow: Option<FlowId>) {
        let mut out = Outbox::new();
        if let Some(arb) = self.coord.as_mut().and_then(|c| c.arbiter.as_mut()) {
            arb.track(alloc.id, flow);
        }
        self.apply_announcement(Announcement::Grant { alloc: alloc.clone(), flow }, &mut out);
    }

    /// Pending announcements with their remaining repeat counts.
    pub fn pending_announcements(&self) -> Vec<(Announcement, u8)> {
        self.coord.as_ref().map(|c| c.announcements.clone()).unwrap_or_default()
    }

    /// Reservations of this coordinator's star that it currently knows of.
    pub fn star_allocations(&self) -> Vec<Allocation> {
        self.coord.as_ref().map(|c| c.star_allocs.values().cloned().collect()).unwrap_or_default()
    }

    fn apply_announcement(&mut self, a: Announcement, out: &mut Outbox) {
        let own = a.star() == self.star;
        if own {
            match &a {
                Announcement::Grant { alloc, flow } => {
                    if let Some(c) = self.coord.as_mut() {
                        c.star_allocs.insert(alloc.id, alloc.clone());
                    }
                    self.take_grant(alloc, *flow, out);
                }
                Announcement::Release { alloc, .. } => {
                    if let Some(c) = self.coord.as_mut() {
                        c.star_allocs.remove(alloc);
                        c.unused.remove(alloc);
                    }
                    if let Some(lease) = self.leases.remove(alloc) {
                        if let LeasePurpose::Data(i) = lease.purpose {
                            if matches!(self.flows[i].spec.mode, FlowMode::Gts { .. }) {
                                self.flows[i].request = RequestState::Needed { not_before: self.superframe };
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let repeats = self.mac.announce_repeats;
        if let Some(c) = self.coord.as_mut() {
            if c.superbeacon || own {
                c.remember(&a);
                c.announcements.push((a, repeats));
            }
        }
    }

    pub(crate) fn coordinator_active(&self) -> bool {
        let Some(c) = self.coord.as_ref() else {
            return false;
        };
        if c.arbiter.is_some() {
            return true;
        }
        self.calendar.is_some() && c.last_superbeacon.is_some() && !c.suspended
    }

    pub(crate) fn coordinator_superframe(&mut self, k: u64, now: Micros, out: &mut Outbox) {
        self.ask_for_own_flows(now);
        let threshold = self.mac.inactivity_threshold;
        let decided = match self.coord.as_mut().and_then(|c| c.arbiter.as_mut()) {
            Some(arb) => arb.tick(k, threshold, out),
            None => Vec::new(),
        };
        for a in decided {
            self.apply_announcement(a, out);
        }
        let horizon = self.mac.horizon();
        let c = self.coord.as_mut().expect("coordinator state");
        if c.arbiter.is_none() {
            if let Some(s) = c.last_superbeacon {
                if k > s + horizon && !c.suspended {
                    c.suspended = true;
                    out.note(Note::BeaconSuspended { star: self.star, superframe: k });
                }
            }
        }
        if let Some(cal) = self.calendar {
            if cal.occurs_in(k) && self.coordinator_active() {
                let at = self.beacon_time(&cal, k);
                if at > now {
                    out.wake(at, Timer::Beacon { superframe: k });
                } else {
                    let frame = self.build_beacon(k, cal);
                    out.transmit(at, frame);
                }
            }
        }
        let slot = self.mac.sf.slot_duration();
        let c = self.coord.as_ref().expect("coordinator state");
        for a in c.star_allocs.values() {
            if a.kind != AllocKind::Gbs && a.occurs_in(k) {
                // one tick late, after any frame ending on the boundary
                let at = now + self.mac.sf.slot_offset(a.slot) + slot + Micros(1);
                out.wake(at, Timer::SlotEnd { alloc: a.id, superframe: k });
            }
        }
    }

    /// Beacon built at its own slot, so that announcements heard earlier in
    /// the superframe go out with it.
    pub(crate) fn beacon_due(&mut self, k: u64, now: Micros, out: &mut Outbox) {
        if k != self.superframe || !self.coordinator_active() {
            return;
        }
        if let Some(cal) = self.calendar.filter(|c| c.occurs_in(k)) {
            let frame = self.build_beacon(k, cal);
            out.transmit(now, frame);
        }
    }

    fn ask_for_own_flows(&mut self, now: Micros) {
        let k = self.superframe;
        let mut asks = Vec::new();
        for f in &mut self.flows {
            let FlowMode::Gts { level } = f.spec.mode else {
                continue;
            };
            if !matches!(f.request, RequestState::Needed { not_before } if not_before <= k) {
                continue;
            }
            f.request = RequestState::Requested { since: k };
            asks.push(GtsAsk {
                owner: f.spec.dst,
                star: self.star,
                flow: f.spec.id,
                kind: AllocKind::Gts,
                level,
                direction: Direction::FromCoordinator,
            });
        }
        let id = self.id;
        let c = self.coord.as_mut().expect("coordinator state");
        for ask in asks {
            match c.arbiter.as_mut() {
                Some(arb) => arb.enqueue(now, id, ask),
                None => c.relay_asks.push(ask),
            }
        }
    }

    fn max_beacon_psdu(&self) -> usize {
        let phy = &self.mac.phy;
        let bytes = self.mac.sf.slot_duration().as_u64() * phy.data_rate_bps / 8_000_000;
        (bytes as usize).saturating_sub(phy.phy_overhead_bytes).min(phy.max_psdu_bytes)
    }

    fn build_beacon(&mut self, k: u64, cal: BeaconCalendar) -> Frame {
        let mut budget = beacon_entry_capacity(self.max_beacon_psdu());
        let (bo, so) = (self.mac.sf.bo, self.mac.sf.so);
        let star = self.star;
        let seq = self.mac_seq;
        self.mac_seq = self.mac_seq.wrapping_add(1);
        let c = self.coord.as_mut().expect("coordinator state");
        let mut gbs_table = Vec::new();
        let mut digest = 0;
        if c.superbeacon && budget > 0 {
            let arb = c.arbiter.as_ref().expect("superbeacons come from the arbiter");
            budget -= 1;
            digest = arb.cycle.digest();
            gbs_table = arb.infrastructure();
            gbs_table.truncate(budget);
            budget -= gbs_table.len();
        }
        let mut announcements = Vec::new();
        for (a, left) in c.announcements.iter_mut() {
            if budget == 0 {
                break;
            }
            announcements.push(a.clone());
            *left -= 1;
            budget -= 1;
        }
        c.announcements.retain(|(_, left)| *left > 0);
        let slot_map: Vec<_> = c
            .star_allocs
            .values()
            .filter(|a| a.occurs_in(k))
            .take(budget)
            .map(|a| (a.id, a.owner, a.slot))
            .collect();
        let body = BeaconBody { star, superframe: k, bo, so, calendar: cal, slot_map, announcements };
        let payload = if c.superbeacon {
            Payload::Superbeacon(SuperbeaconBody { beacon: body, gbs_table, digest })
        } else {
            Payload::Beacon(body)
        };
        Frame { src: self.id, dst: NodeId::BROADCAST, seq, ack_request: false, payload }
    }

    pub(crate) fn on_superbeacon(&mut self, sb: &SuperbeaconBody, out: &mut Outbox) {
        if self.role != Role::Coordinator {
            return;
        }
        {
            let c = self.coord.as_mut().expect("coordinator state");
            if c.arbiter.is_some() {
                return;
            }
            c.last_superbeacon = Some(sb.beacon.superframe);
            c.suspended = false;
        }
        for a in &sb.gbs_table {
            if a.kind == AllocKind::Gbs && a.star == self.star {
                self.calendar = Some(BeaconCalendar::from_gbs(a, self.grid_offset));
            } else if a.owner == self.id && a.direction == Direction::ToCoordinator {
                self.add_relay_lease(a);
            }
        }
        for a in &sb.beacon.announcements {
            if a.star() != self.star {
                continue;
            }
            let fresh = self.coord.as_mut().expect("coordinator state").remember(a);
            if fresh {
                self.apply_announcement(a.clone(), out);
            }
        }
    }

    pub(crate) fn coordinator_frame(&mut self, frame: &Frame, now: Micros, _out: &mut Outbox) {
        let k = self.superframe;
        let offset_in_sf = now.saturating_sub(self.sf_start);
        let slot_len = self.mac.sf.slot_duration();
        let (cap_start, cap_end) = self.mac.sf.cap_window();
        let in_cap = offset_in_sf > cap_start && offset_in_sf <= cap_end;
        let star = self.star;
        let c = self.coord.as_mut().expect("coordinator state");
        for a in c.star_allocs.values() {
            let start = self.mac.sf.slot_offset(a.slot);
            if a.owner == frame.src && a.occurs_in(k) && offset_in_sf > start && offset_in_sf <= start + slot_len {
                c.heard.insert(a.id);
            }
        }
        match &frame.payload {
            Payload::AssocRequest => {
                if let Some(arb) = c.arbiter.as_mut() {
                    let _ = arb.cycle.register_node(star, frame.src);
                }
                if in_cap {
                    let resp = Announcement::AssocResponse { node: frame.src, star };
                    if !c.announcements.iter().any(|(a, _)| *a == resp) {
                        c.announcements.push((resp, self.mac.announce_repeats));
                    }
                }
            }
            Payload::GtsRequest { asks, lease_report } => match c.arbiter.as_mut() {
                Some(arb) => {
                    for ask in asks {
                        arb.enqueue(now, ask.owner, *ask);
                    }
                    for (id, unused) in lease_report {
                        arb.leases.set_unused(*id, *unused);
                    }
                }
                None => {
                    for ask in asks {
                        if !c.relay_asks.iter().any(|x| x.owner == ask.owner && x.flow == ask.flow) {
                            c.relay_asks.push(*ask);
                        }
                    }
                }
            },
            _ => {}
        }
    }

    pub(crate) fn slot_end(&mut self, id: AllocId, k: u64) {
        let Some(c) = self.coord.as_mut() else {
            return;
        };
        if !c.star_allocs.get(&id).is_some_and(|a| a.occurs_in(k)) {
            return;
        }
        let used = c.heard.remove(&id);
        match c.arbiter.as_mut() {
            Some(arb) => arb.leases.record_occurrence(id, used),
            None => {
                let counter = c.unused.entry(id).or_insert(0);
                let before = *counter;
                *counter = if used { 0 } else { before + 1 };
                if *counter != before {
                    c.report_dirty = true;
                }
            }
        }
    }

    pub(crate) fn relay_frame(&mut self, seq: u8) -> Option<Frame> {
        let parent = self.parent;
        let id = self.id;
        let c = self.coord.as_mut()?;
        if c.relay_asks.is_empty() && !c.report_dirty {
            return None;
        }
        let asks: Vec<GtsAsk> = c.relay_asks.iter().take(MAX_RELAY_ASKS).copied().collect();
        let lease_report: Vec<(AllocId, u32)> =
            c.unused.iter().take(MAX_LEASE_REPORT).map(|(a, u)| (*a, *u)).collect();
        c.in_flight = asks.len();
        Some(Frame { src: id, dst: parent, seq, ack_request: true, payload: Payload::GtsRequest { asks, lease_report } })
    }

    pub(crate) fn relay_acked(&mut self) {
        if let Some(c) = self.coord.as_mut() {
            let n = c.in_flight.min(c.relay_asks.len());
            c.relay_asks.drain(..n);
            c.in_flight = 0;
            c.report_dirty = false;
        }
    }
}
