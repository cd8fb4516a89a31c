use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::Serialize;

use super::coordinator::{Arbiter, CoordState};
use super::csma::{CapWindow, CsmaRun, CsmaStep};
use super::frame::{data_frame, Announcement, BeaconBody, BeaconCalendar, Frame, FrameKind, GtsAsk, Payload};
use super::{AssocPath, FlowMode, FlowSpec, Input, Load, MacParams, Note, Outbox, Timer};
use crate::ids::{AllocId, FlowId, NodeId, StarId};
use crate::schedule::{AllocKind, Allocation, Direction};
use crate::simcore::ChannelState;
use crate::timing::{exchange_time, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    EndNode,
    Coordinator,
    Pan,
}

/// Initial state of one device.
#[derive(Debug, Clone)]
pub struct DeviceSetup {
    pub id: NodeId,
    pub star: StarId,
    pub role: Role,
    /// Star coordinator for end nodes, PAN coordinator for star coordinators.
    pub parent: NodeId,
    pub associated: bool,
    /// Start of superframe 0 on this device's grid.
    pub grid_offset: Micros,
    /// Own beacon calendar when known before the first superbeacon.
    pub calendar: Option<BeaconCalendar>,
    pub flows: Vec<FlowSpec>,
    /// Present on devices that run admission themselves.
    pub arbiter: Option<Arbiter>,
    pub superbeacon: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pending {
    pub seq: u32,
    pub enqueued_at: Micros,
    pub tries: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RequestState {
    NotNeeded,
    Needed { not_before: u64 },
    Requested { since: u64 },
    Granted(AllocId),
    Refused,
}

#[derive(Debug, Clone)]
pub(crate) struct TxFlow {
    pub spec: FlowSpec,
    pub queue: VecDeque<Pending>,
    pub next_seq: u32,
    pub request: RequestState,
}

impl TxFlow {
    fn new(spec: FlowSpec) -> Self {
        let request = match spec.mode {
            FlowMode::Gts { .. } => RequestState::Needed { not_before: 0 },
            _ => RequestState::NotNeeded,
        };
        TxFlow { spec, queue: VecDeque::new(), next_seq: 0, request }
    }

    /// Head-of-line frame, generating one first if the source saturates.
    pub fn head(&mut self, now: Micros) -> Option<Pending> {
        if self.queue.is_empty() && self.spec.load == Load::Saturate {
            self.push(now);
        }
        self.queue.front().copied()
    }

    fn push(&mut self, now: Micros) {
        self.queue.push_back(Pending { seq: self.next_seq, enqueued_at: now, tries: 0 });
        self.next_seq += 1;
    }
}

/// A reservation this device transmits in.
#[derive(Debug, Clone)]
pub(crate) struct Lease {
    pub alloc: Allocation,
    pub purpose: LeasePurpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LeasePurpose {
    Data(usize),
    /// Dedicated slot of a node with no flow bound to it; carries association.
    Dedicated,
    Relay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct GtsRun {
    pub alloc: AllocId,
    pub purpose: LeasePurpose,
    pub next_start: Micros,
    pub slot_end: Micros,
    pub exchange_start: Micros,
    /// The exchange in progress carries an association request.
    pub assoc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CapItem {
    Data(usize),
    GtsRequest(usize),
    Assoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CapPhase {
    Idle,
    Sensing,
    OnAir,
    AwaitAck,
}

#[derive(Debug, Clone)]
struct CapTx {
    item: CapItem,
    frame: Frame,
    run: CsmaRun,
    phase: CapPhase,
    tries: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AckContext {
    Cap,
    Gts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AckWait {
    pub token: u64,
    pub seq: u8,
    pub from: NodeId,
    pub ctx: AckContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AssocState {
    Associated,
    /// Waiting for the dedicated slot.
    AwaitDedicated,
    Contending { attempts: u8 },
    AwaitResponse { started_at: Micros },
    Failed,
}

/// One device of the PAN: end node, star coordinator or PAN coordinator.
#[derive(Debug, Clone)]
pub struct Device {
    pub(crate) id: NodeId,
    pub(crate) star: StarId,
    pub(crate) role: Role,
    pub(crate) parent: NodeId,
    pub(crate) mac: MacParams,
    pub(crate) grid_offset: Micros,
    pub(crate) calendar: Option<BeaconCalendar>,
    pub(crate) last_beacon: Option<u64>,
    pub(crate) superframe: u64,
    pub(crate) sf_start: Micros,
    now: Micros,
    pub(crate) flows: Vec<TxFlow>,
    pub(crate) leases: BTreeMap<AllocId, Lease>,
    rx_last: BTreeMap<FlowId, u32>,
    pub(crate) mac_seq: u8,
    cap: Option<CapTx>,
    cap_cursor: usize,
    pub(crate) gts: Option<GtsRun>,
    pub(crate) ack_wait: Option<AckWait>,
    token: u64,
    assoc: AssocState,
    pending_assoc_start: Option<Micros>,
    pub(crate) coord: Option<CoordState>,
}

impl Device {
    pub fn new(setup: DeviceSetup, mac: MacParams) -> Self {
        let flows: Vec<TxFlow> = setup.flows.into_iter().map(TxFlow::new).collect();
        let assoc = if setup.associated || setup.role != Role::EndNode {
            AssocState::Associated
        } else {
            AssocState::Contending { attempts: 0 }
        };
        let coord = match setup.role {
            Role::EndNode => None,
            _ => Some(CoordState::new(setup.arbiter, setup.superbeacon)),
        };
        Device {
            id: setup.id,
            star: setup.star,
            role: setup.role,
            parent: setup.parent,
            mac,
            grid_offset: setup.grid_offset,
            calendar: setup.calendar,
            last_beacon: None,
            superframe: 0,
            sf_start: setup.grid_offset,
            now: Micros::ZERO,
            flows,
            leases: BTreeMap::new(),
            rx_last: BTreeMap::new(),
            mac_seq: 0,
            cap: None,
            cap_cursor: 0,
            gts: None,
            ack_wait: None,
            token: 0,
            assoc,
            pending_assoc_start: None,
            coord,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn star(&self) -> StarId {
        self.star
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn grid_offset(&self) -> Micros {
        self.grid_offset
    }

    pub fn is_associated(&self) -> bool {
        self.assoc == AssocState::Associated
    }

    pub fn calendar(&self) -> Option<BeaconCalendar> {
        self.calendar
    }

    /// Reservations this device currently transmits in.
    pub fn lease_ids(&self) -> Vec<AllocId> {
        self.leases.keys().copied().collect()
    }

    pub fn arbiter(&self) -> Option<&Arbiter> {
        self.coord.as_ref().and_then(|c| c.arbiter.as_ref())
    }

    pub fn handle<R: Rng>(&mut self, input: Input<'_>, now: Micros, rng: &mut R, out: &mut Outbox) {
        self.now = now;
        match input {
            Input::SuperframeStart { index } => self.on_superframe(index, now, rng, out),
            Input::Timer(t) => self.on_timer(t, now, rng, out),
            Input::Received(frame) => self.on_frame(frame, now, rng, out),
            Input::TxDone(frame) => self.on_tx_done(frame, now, rng, out),
            Input::CcaDone { at, state } => self.on_cca(at, state, now, rng, out),
        }
    }

    fn on_superframe<R: Rng>(&mut self, index: u64, now: Micros, rng: &mut R, out: &mut Outbox) {
        self.superframe = index;
        self.sf_start = now;
        for f in &mut self.flows {
            if let Load::PerSuperframe(n) = f.spec.load {
                for _ in 0..n {
                    f.push(now);
                }
            }
        }
        if self.coord.is_some() {
            self.coordinator_superframe(index, now, out);
        }
        let slot_of = |a: &Allocation| self.mac.sf.slot_offset(a.slot);
        for lease in self.leases.values() {
            if lease.alloc.occurs_in(index) {
                out.wake(now + slot_of(&lease.alloc), Timer::SlotStart { alloc: lease.alloc.id, superframe: index });
            }
        }
        if self.role == Role::EndNode {
            self.expire_requests(index);
        }
        if let Some(cap) = &mut self.cap {
            if cap.phase == CapPhase::Idle {
                // deferred from the previous contention period
                cap.run = CsmaRun::new(&self.mac.csma);
            }
        }
        self.cap_kick(now, rng, out);
    }

    fn expire_requests(&mut self, index: u64) {
        let patience = 2 * self.mac.horizon();
        for f in &mut self.flows {
            if let RequestState::Requested { since } = f.request {
                if index > since + patience {
                    f.request = RequestState::Needed { not_before: index };
                }
            }
        }
    }

    pub(crate) fn cap_window(&self) -> CapWindow {
        let (s, e) = self.mac.sf.cap_window();
        CapWindow { start: self.sf_start + s, end: self.sf_start + e }
    }

    /// Time at which the beacon occurrence `k` of `cal` starts, on this grid.
    pub(crate) fn beacon_time(&self, cal: &BeaconCalendar, k: u64) -> Micros {
        self.grid_offset + self.mac.sf.beacon_interval() * k + self.mac.sf.slot_offset(cal.slot)
    }

    /// True iff the latest beacon expected before `t` has been received.
    pub(crate) fn synced_at(&self, t: Micros) -> bool {
        let (Some(cal), Some(last)) = (self.calendar, self.last_beacon) else {
            return false;
        };
        let mut k = self.superframe;
        if self.beacon_time(&cal, k) > t {
            if k == 0 {
                return false;
            }
            k -= 1;
        }
        let p = 1u64 << cal.level;
        let phase = u64::from(cal.phase);
        if k < phase {
            return false;
        }
        let expected = k - (k - phase) % p;
        last == expected
    }

    fn next_mac_seq(&mut self) -> u8 {
        let s = self.mac_seq;
        self.mac_seq = self.mac_seq.wrapping_add(1);
        s
    }

    fn next_token(&mut self) -> u64 {
        self.token += 1;
        self.token
    }

    pub(crate) fn await_ack(&mut self, frame: &Frame, now: Micros, ctx: AckContext, out: &mut Outbox) {
        let token = self.next_token();
        self.ack_wait = Some(AckWait { token, seq: frame.seq, from: frame.dst, ctx });
        out.wake(now + self.mac.ack_wait, Timer::AckTimeout { token });
    }

    // ---- contention access ----

    fn next_cap_item(&mut self, now: Micros) -> Option<CapItem> {
        match self.assoc {
            AssocState::Associated => {}
            AssocState::Contending { attempts } if attempts < self.mac.assoc_attempts => return Some(CapItem::Assoc),
            _ => return None,
        }
        if let Some(i) = self.flows.iter().position(
            |f| matches!(f.request, RequestState::Needed { not_before } if not_before <= self.superframe),
        ) {
            return Some(CapItem::GtsRequest(i));
        }
        let n = self.flows.len();
        for step in 0..n {
            let i = (self.cap_cursor + step) % n;
            if self.flows[i].spec.mode == FlowMode::Cap && self.flows[i].head(now).is_some() {
                self.cap_cursor = (i + 1) % n;
                return Some(CapItem::Data(i));
            }
        }
        None
    }

    fn cap_frame(&mut self, item: CapItem, now: Micros) -> Frame {
        let seq = self.next_mac_seq();
        match item {
            CapItem::Assoc => Frame { src: self.id, dst: self.parent, seq, ack_request: true, payload: Payload::AssocRequest },
            CapItem::GtsRequest(i) => {
                let spec = &self.flows[i].spec;
                let level = spec.mode.level().unwrap_or(0);
                Frame {
                    src: self.id,
                    dst: self.parent,
                    seq,
                    ack_request: true,
                    payload: Payload::GtsRequest {
                        asks: vec![GtsAsk {
                            owner: self.id,
                            star: self.star,
                            flow: spec.id,
                            kind: AllocKind::Gts,
                            level,
                            direction: Direction::ToCoordinator,
                        }],
                        lease_report: vec![],
                    },
                }
            }
            CapItem::Data(i) => {
                let head = self.flows[i].head(now).expect("CAP item chosen with an empty queue");
                let spec = &self.flows[i].spec;
                data_frame(self.id, spec.dst, seq, spec.id, head.seq, spec.psdu, spec.acked, head.enqueued_at)
            }
        }
    }

    fn cap_kick<R: Rng>(&mut self, now: Micros, rng: &mut R, out: &mut Outbox) {
        if self.role != Role::EndNode || self.ack_wait.is_some() || self.gts.is_some() {
            return;
        }
        if self.cap.as_ref().is_some_and(|c| c.phase != CapPhase::Idle) {
            return;
        }
        let window = self.cap_window();
        if now >= window.end || !self.synced_at(window.start.max(now)) {
            return;
        }
        if self.cap.is_none() {
            let Some(item) = self.next_cap_item(now) else {
                return;
            };
            if item == CapItem::Assoc && self.pending_assoc_start.is_none() {
                self.pending_assoc_start = Some(now);
            }
            let frame = self.cap_frame(item, now);
            self.cap = Some(CapTx { item, frame, run: CsmaRun::new(&self.mac.csma), phase: CapPhase::Idle, tries: 0 });
        }
        let cap = self.cap.as_mut().expect("set above");
        let exchange = exchange_time(cap.frame.psdu_len(), cap.frame.ack_request, &self.mac.phy)
            .expect("frames are built within PHY limits");
        let step = cap.run.backoff(now.max(window.start), window, exchange, &self.mac.csma, rng);
        self.apply_csma(step, now, rng, out);
    }

    fn apply_csma<R: Rng>(&mut self, step: CsmaStep, now: Micros, rng: &mut R, out: &mut Outbox) {
        let Some(cap) = self.cap.as_mut() else {
            return;
        };
        match step {
            CsmaStep::Cca { at } => {
                cap.phase = CapPhase::Sensing;
                out.actions.push(super::Action::Cca { at });
            }
            CsmaStep::Transmit { at } => {
                cap.phase = CapPhase::OnAir;
                out.transmit(at, cap.frame.clone());
            }
            CsmaStep::Defer => {
                cap.phase = CapPhase::Idle;
            }
            CsmaStep::ChannelAccessFailure => {
                let kind = cap.frame.kind();
                out.note(Note::ChannelAccessFailure { node: self.id, kind });
                let item = cap.item;
                match item {
                    CapItem::Data(_) => {
                        // the frame stays queued; contention restarts from scratch
                        cap.phase = CapPhase::Idle;
                        cap.run = CsmaRun::new(&self.mac.csma);
                        self.cap_kick(now, rng, out);
                    }
                    CapItem::GtsRequest(i) => {
                        self.cap = None;
                        self.gts_request_failed(i, out);
                        self.cap_kick(now, rng, out);
                    }
                    CapItem::Assoc => {
                        self.cap = None;
                        self.assoc_attempt_failed(out);
                    }
                }
            }
        }
    }

    fn gts_request_failed(&mut self, i: usize, out: &mut Outbox) {
        let f = &mut self.flows[i];
        f.request = RequestState::Needed { not_before: self.superframe + 1 };
        out.note(Note::GtsRequestFailed { node: self.id, flow: f.spec.id });
    }

    fn assoc_attempt_failed(&mut self, out: &mut Outbox) {
        if let AssocState::Contending { attempts } = self.assoc {
            let attempts = attempts + 1;
            if attempts >= self.mac.assoc_attempts {
                self.assoc = AssocState::Failed;
                out.note(Note::AssocFailed { node: self.id });
            } else {
                self.assoc = AssocState::Contending { attempts };
            }
        }
    }

    fn on_cca<R: Rng>(&mut self, at: Micros, state: ChannelState, now: Micros, rng: &mut R, out: &mut Outbox) {
        let window = self.cap_window();
        let Some(cap) = self.cap.as_mut() else {
            return;
        };
        if cap.phase != CapPhase::Sensing {
            return;
        }
        let exchange = exchange_time(cap.frame.psdu_len(), cap.frame.ack_request, &self.mac.phy)
            .expect("frames are built within PHY limits");
        let step = cap.run.on_cca(state, at, window, exchange, &self.mac.csma, rng);
        self.apply_csma(step, now, rng, out);
    }

    /// Outcome of a contention-access frame: acknowledged, not acknowledged, or sent without ack.
    fn cap_finished<R: Rng>(&mut self, success: bool, now: Micros, rng: &mut R, out: &mut Outbox) {
        let Some(mut cap) = self.cap.take() else {
            return;
        };
        match cap.item {
            CapItem::Data(i) => {
                let limit = self.mac.retry_limit;
                let f = &mut self.flows[i];
                if success || !cap.frame.ack_request {
                    f.queue.pop_front();
                } else if let Some(head) = f.queue.front_mut() {
                    head.tries += 1;
                    if head.tries > limit {
                        let seq = head.seq;
                        f.queue.pop_front();
                        out.note(Note::DataDropped { flow: f.spec.id, seq });
                    } else {
                        cap.tries += 1;
                        cap.phase = CapPhase::Idle;
                        cap.run = CsmaRun::new(&self.mac.csma);
                        self.cap = Some(cap);
                    }
                }
            }
            CapItem::GtsRequest(i) => {
                if success {
                    let f = &mut self.flows[i];
                    f.request = RequestState::Requested { since: self.superframe };
                    out.note(Note::GtsRequested { node: self.id, flow: f.spec.id });
                } else if cap.tries < self.mac.retry_limit {
                    cap.tries += 1;
                    cap.phase = CapPhase::Idle;
                    cap.run = CsmaRun::new(&self.mac.csma);
                    self.cap = Some(cap);
                } else {
                    self.gts_request_failed(i, out);
                }
            }
            CapItem::Assoc => {
                if success {
                    let started = self.pending_assoc_start.take().unwrap_or(now);
                    self.assoc = AssocState::AwaitResponse { started_at: started };
                } else if cap.tries < self.mac.retry_limit {
                    cap.tries += 1;
                    cap.phase = CapPhase::Idle;
                    cap.run = CsmaRun::new(&self.mac.csma);
                    self.cap = Some(cap);
                } else {
                    self.pending_assoc_start = None;
                    self.assoc_attempt_failed(out);
                }
            }
        }
        self.cap_kick(now, rng, out);
    }

    // ---- reserved slots ----

    fn on_timer<R: Rng>(&mut self, t: Timer, now: Micros, rng: &mut R, out: &mut Outbox) {
        match t {
            Timer::SlotStart { alloc, superframe } => self.slot_start(alloc, superframe, now, out),
            Timer::SlotEnd { alloc, superframe } => self.slot_end(alloc, superframe),
            Timer::Beacon { superframe } => self.beacon_due(superframe, now, out),
            Timer::AckTimeout { token } => {
                let Some(w) = self.ack_wait else {
                    return;
                };
                if w.token != token {
                    return;
                }
                self.ack_wait = None;
                match w.ctx {
                    AckContext::Cap => self.cap_finished(false, now, rng, out),
                    AckContext::Gts => self.gts_exchange_failed(now, rng, out),
                }
            }
        }
    }

    fn slot_start(&mut self, id: AllocId, superframe: u64, now: Micros, out: &mut Outbox) {
        let Some(lease) = self.leases.get(&id) else {
            return;
        };
        if superframe != self.superframe || self.gts.is_some() || self.ack_wait.is_some() {
            return;
        }
        let purpose = lease.purpose;
        let slot_end = now + self.mac.sf.slot_duration();
        if !self.may_use_reserved(now) {
            out.note(Note::GtsSkipped { node: self.id, alloc: id, superframe });
            return;
        }
        self.gts = Some(GtsRun { alloc: id, purpose, next_start: now, slot_end, exchange_start: now, assoc: false });
        self.gts_send(now, out);
    }

    fn may_use_reserved(&self, now: Micros) -> bool {
        match self.role {
            Role::EndNode => self.synced_at(now),
            _ => self.coordinator_active(),
        }
    }

    /// Starts the next exchange of the running slot transfer, if it fits.
    fn gts_send(&mut self, now: Micros, out: &mut Outbox) {
        let Some(run) = self.gts else {
            return;
        };
        let assoc = self.role == Role::EndNode && self.assoc != AssocState::Associated;
        let frame = if assoc {
            Frame { src: self.id, dst: self.parent, seq: self.mac_seq, ack_request: true, payload: Payload::AssocRequest }
        } else {
            match run.purpose {
                LeasePurpose::Data(i) => {
                    if self.flows[i].head(now).is_none() {
                        self.gts = None;
                        return;
                    }
                    let seq = self.mac_seq;
                    let f = &mut self.flows[i];
                    let head = f.head(now).expect("checked above");
                    let spec = &f.spec;
                    data_frame(self.id, spec.dst, seq, spec.id, head.seq, spec.psdu, spec.acked, head.enqueued_at)
                }
                LeasePurpose::Dedicated => {
                    self.gts = None;
                    return;
                }
                LeasePurpose::Relay => match self.relay_frame(self.mac_seq) {
                    Some(f) => f,
                    None => {
                        self.gts = None;
                        return;
                    }
                },
            }
        };
        let Ok(cycle) = exchange_time(frame.psdu_len(), frame.ack_request, &self.mac.phy) else {
            self.gts = None;
            return;
        };
        if run.next_start + cycle > run.slot_end {
            self.gts = None;
            return;
        }
        self.mac_seq = self.mac_seq.wrapping_add(1);
        if assoc {
            self.pending_assoc_start = Some(run.next_start);
        }
        if let Some(c) = self.coord.as_mut() {
            c.mark_used(run.alloc);
        }
        let g = self.gts.as_mut().expect("run present");
        g.assoc = assoc;
        g.exchange_start = g.next_start;
        g.next_start += cycle;
        out.transmit(g.exchange_start + self.mac.phy.host_delay, frame);
    }

    fn gts_exchange_done(&mut self, now: Micros, out: &mut Outbox) {
        let Some(run) = self.gts else {
            return;
        };
        if run.assoc {
            let started_at = self.pending_assoc_start.take().unwrap_or(run.exchange_start);
            self.assoc = AssocState::Associated;
            out.note(Note::Associated { node: self.id, path: AssocPath::Dedicated, started_at });
        } else {
            match run.purpose {
                LeasePurpose::Data(i) => {
                    self.flows[i].queue.pop_front();
                }
                LeasePurpose::Dedicated => {}
                LeasePurpose::Relay => self.relay_acked(),
            }
        }
        self.gts_send(now, out);
    }

    fn gts_exchange_failed<R: Rng>(&mut self, now: Micros, rng: &mut R, out: &mut Outbox) {
        let Some(run) = self.gts.take() else {
            return;
        };
        if let (LeasePurpose::Data(i), false) = (run.purpose, run.assoc) {
            let limit = self.mac.retry_limit;
            let f = &mut self.flows[i];
            if let Some(head) = f.queue.front_mut() {
                head.tries += 1;
                if head.tries > limit {
                    let seq = head.seq;
                    f.queue.pop_front();
                    out.note(Note::DataDropped { flow: f.spec.id, seq });
                }
            }
        }
        self.pending_assoc_start = None;
        self.cap_kick(now, rng, out);
    }

    // ---- transmission and reception ----

    fn on_tx_done<R: Rng>(&mut self, frame: &Frame, now: Micros, rng: &mut R, out: &mut Outbox) {
        if let Payload::Data { flow, seq, .. } = frame.payload {
            if let Some(f) = self.flows.iter().find(|f| f.spec.id == flow) {
                if f.queue.front().is_some_and(|h| h.seq == seq && h.tries == 0) {
                    out.note(Note::DataSent { flow, seq });
                }
            }
        }
        if matches!(frame.kind(), FrameKind::Ack | FrameKind::Beacon | FrameKind::Superbeacon) {
            return;
        }
        let on_cap = self.cap.as_ref().is_some_and(|c| c.phase == CapPhase::OnAir && c.frame == *frame);
        if on_cap {
            if frame.ack_request {
                self.cap.as_mut().expect("checked").phase = CapPhase::AwaitAck;
                self.await_ack(frame, now, AckContext::Cap, out);
            } else {
                self.cap_finished(true, now, rng, out);
            }
            return;
        }
        if self.gts.is_some() {
            if frame.ack_request {
                self.await_ack(frame, now, AckContext::Gts, out);
            } else {
                self.gts_exchange_done(now, out);
            }
        }
    }

    fn on_frame<R: Rng>(&mut self, frame: &Frame, now: Micros, rng: &mut R, out: &mut Outbox) {
        if frame.src == self.id {
            return;
        }
        match &frame.payload {
            Payload::Beacon(_) | Payload::Superbeacon(_) => {
                self.on_beacon(frame, now, out);
                if self.role == Role::EndNode {
                    self.cap_kick(now, rng, out);
                }
                return;
            }
            Payload::Ack => {
                if frame.dst != self.id {
                    return;
                }
                let Some(w) = self.ack_wait else {
                    return;
                };
                if w.seq != frame.seq || w.from != frame.src {
                    return;
                }
                self.ack_wait = None;
                match w.ctx {
                    AckContext::Cap => self.cap_finished(true, now, rng, out),
                    AckContext::Gts => self.gts_exchange_done(now, out),
                }
                return;
            }
            _ => {}
        }
        if frame.dst != self.id {
            return;
        }
        if frame.ack_request {
            out.transmit(now + self.mac.phy.turnaround_time, Frame::ack_for(frame));
        }
        if let Payload::Data { flow, seq, enqueued_at, .. } = frame.payload {
            let fresh = self.rx_last.get(&flow).is_none_or(|&last| seq > last);
            if fresh {
                self.rx_last.insert(flow, seq);
                out.note(Note::DataDelivered { flow, seq, psdu: frame.psdu_len(), enqueued_at });
            }
        }
        if self.coord.is_some() {
            self.coordinator_frame(frame, now, out);
        }
    }

    pub(crate) fn on_beacon(&mut self, frame: &Frame, now: Micros, out: &mut Outbox) {
        let Some(body) = frame.beacon() else {
            return;
        };
        if self.role != Role::EndNode {
            if let Payload::Superbeacon(sb) = &frame.payload {
                if frame.src == self.parent {
                    self.on_superbeacon(sb, out);
                }
            }
            return;
        }
        if frame.src != self.parent || body.star != self.star {
            return;
        }
        if let Some(last) = self.last_beacon {
            if body.superframe < last {
                out.note(Note::StaleBeacon { node: self.id });
                return;
            }
            if body.superframe == last {
                return;
            }
        }
        self.last_beacon = Some(body.superframe);
        self.calendar = Some(body.calendar);
        self.absorb_announcements(body, now, out);
    }

    fn absorb_announcements(&mut self, body: &BeaconBody, now: Micros, out: &mut Outbox) {
        for a in &body.announcements {
            if a.star() != self.star || a.addressee() != self.id {
                continue;
            }
            match a {
                Announcement::Grant { alloc, flow } => self.take_grant(alloc, *flow, out),
                Announcement::Refuse { flow, reason, .. } => {
                    if let Some(f) = self.flows.iter_mut().find(|f| f.spec.id == *flow) {
                        if matches!(f.request, RequestState::Requested { .. } | RequestState::Needed { .. }) {
                            f.request = RequestState::Refused;
                            out.note(Note::RefuseReceived { node: self.id, flow: *flow, reason: *reason });
                        }
                    }
                }
                Announcement::Release { alloc, .. } => {
                    if let Some(lease) = self.leases.remove(alloc) {
                        if let LeasePurpose::Data(i) = lease.purpose {
                            let f = &mut self.flows[i];
                            if f.spec.mode != FlowMode::Cap {
                                f.request = match f.spec.mode {
                                    FlowMode::Gts { .. } => RequestState::Needed { not_before: self.superframe },
                                    _ => RequestState::NotNeeded,
                                };
                            }
                        }
                        out.note(Note::Revoked { node: self.id, alloc: *alloc });
                    }
                }
                Announcement::AssocResponse { .. } => {
                    if let AssocState::AwaitResponse { started_at } = self.assoc {
                        self.assoc = AssocState::Associated;
                        out.note(Note::Associated { node: self.id, path: AssocPath::Contention, started_at });
                    }
                }
            }
        }
        let _ = now;
    }

    /// Binds a granted reservation to the flow or role it serves, when this
    /// device is the one transmitting in it.
    pub(crate) fn take_grant(&mut self, alloc: &Allocation, flow: Option<FlowId>, out: &mut Outbox) {
        if self.leases.contains_key(&alloc.id) {
            return;
        }
        let purpose = match flow {
            Some(id) => match self.flows.iter().position(|f| f.spec.id == id) {
                Some(i) => LeasePurpose::Data(i),
                None => return,
            },
            None if alloc.kind == AllocKind::Pds && alloc.owner == self.id => LeasePurpose::Dedicated,
            None => return,
        };
        let transmits = match alloc.direction {
            Direction::ToCoordinator => alloc.owner == self.id,
            Direction::FromCoordinator => self.role != Role::EndNode,
            Direction::Beacon => false,
        };
        if !transmits {
            return;
        }
        if let LeasePurpose::Data(i) = purpose {
            self.flows[i].request = RequestState::Granted(alloc.id);
        }
        if alloc.kind == AllocKind::Pds && self.role == Role::EndNode && self.assoc != AssocState::Associated {
            self.assoc = AssocState::AwaitDedicated;
        }
        out.note(Note::GrantReceived { node: self.id, flow, alloc: alloc.id });
        let start = self.sf_start + self.mac.sf.slot_offset(alloc.slot);
        if alloc.occurs_in(self.superframe) && start > self.now {
            out.wake(start, Timer::SlotStart { alloc: alloc.id, superframe: self.superframe });
        }
        self.leases.insert(alloc.id, Lease { alloc: alloc.clone(), purpose });
    }

    pub(crate) fn add_relay_lease(&mut self, alloc: &Allocation) {
        self.leases.entry(alloc.id).or_insert_with(|| Lease { alloc: alloc.clone(), purpose: LeasePurpose::Relay });
    }
}
