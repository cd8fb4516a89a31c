//! Simulation driver: feeds device state machines from the event queue and
//! executes what they ask for on the shared medium.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand_chacha::ChaCha8Rng;

use super::metrics::{flow_metrics, FlowMetrics};
use super::scenario::Scenario;
use super::setup::{build_network, Network};
use crate::ids::{FlowId, NodeId};
use crate::protocol::{Action, AssocPath, Frame, FrameKind, Input, Note, Outbox, Payload, Timer};
use crate::schedule::{ScheduleCycle, ScheduleError};
use crate::simcore::{EventQueue, Port, RngStream, RxOutcome, Transmission};
use crate::timing::{frame_airtime, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOutcome {
    Ok,
    Collision,
    Dropped,
}

impl std::fmt::Display for TraceOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TraceOutcome::Ok => "ok",
            TraceOutcome::Collision => "collision",
            TraceOutcome::Dropped => "dropped",
        })
    }
}

/// One line of the frame trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: Micros,
    pub end: Micros,
    pub kind: FrameKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub psdu_len: usize,
    /// Slot of the sender's superframe; `None` in the inactive portion.
    pub slot: Option<u8>,
    pub superframe: u64,
    pub outcome: TraceOutcome,
    pub flow: Option<FlowId>,
}

impl std::fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {} ", self.time.as_u64(), self.kind, self.src)?;
        if self.dst == NodeId::BROADCAST {
            f.write_str("*")?;
        } else {
            write!(f, "{}", self.dst)?;
        }
        write!(f, " {} ", self.psdu_len)?;
        match self.slot {
            Some(s) => write!(f, "{s}")?,
            None => f.write_str("-")?,
        }
        write!(f, " {} {}", self.superframe, self.outcome)
    }
}

/// Completed association.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssocRecord {
    pub node: NodeId,
    pub path: AssocPath,
    pub started_at: Micros,
    pub completed_at: Micros,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GlobalMetrics {
    pub transmissions: u64,
    /// Receptions lost to overlap, over every receiver and frame kind.
    pub collisions: u64,
    /// Lost beacon and superbeacon receptions per receiving device.
    pub beacon_collisions: BTreeMap<NodeId, u64>,
    pub beacons_sent: u64,
    pub associations: Vec<AssocRecord>,
    pub association_failures: Vec<NodeId>,
    pub gts_request_losses: u64,
    pub events: u64,
    /// Transmissions requested while the sender was already on air.
    pub radio_conflicts: u64,
}

impl GlobalMetrics {
    pub fn total_beacon_collisions(&self) -> u64 {
        self.beacon_collisions.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct TimedNote {
    pub time: Micros,
    pub device: NodeId,
    pub note: Note,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub scenario: Scenario,
    pub seed: u64,
    pub flows: Vec<FlowMetrics>,
    pub global: GlobalMetrics,
    pub trace: Vec<TraceRecord>,
    pub notes: Vec<TimedNote>,
    /// Measurement window `[start, end)`.
    pub window: (Micros, Micros),
    pub end: Micros,
    /// Reservation state of every arbiter at the end of the run.
    pub schedules: Vec<ScheduleCycle>,
}

impl SimOutput {
    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for r in &self.trace {
            let _ = writeln!(s, "{r}");
        }
        s
    }

    pub fn flow(&self, id: FlowId) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.flow == id)
    }
}

#[derive(Debug, Clone)]
enum Ev {
    Superframe { port: Port, k: u64 },
    Wake { port: Port, timer: Timer },
    TxStart { port: Port, frame: Box<Frame> },
    TxEnd { tx: Transmission, frame: Box<Frame> },
    CcaEnd { port: Port, at: Micros },
}

struct Driver {
    net: Network,
    scenario: Scenario,
    queue: EventQueue<Ev>,
    rngs: Vec<ChaCha8Rng>,
    ids: Vec<NodeId>,
    outbox: Outbox,
    notes: Vec<TimedNote>,
    trace: Vec<TraceRecord>,
    global: GlobalMetrics,
    /// Lost receptions at the flow's destination.
    flow_collisions: BTreeMap<FlowId, u64>,
}

impl Driver {
    fn dispatch(&mut self, port: Port, input: Input<'_>, now: Micros) {
        let mut out = std::mem::take(&mut self.outbox);
        out.clear();
        self.net.devices[port].handle(input, now, &mut self.rngs[port], &mut out);
        for action in out.actions.drain(..) {
            match action {
                Action::Transmit { at, frame } => {
                    self.queue.schedule(at.max(now), Ev::TxStart { port, frame: Box::new(frame) });
                }
                Action::Wake { at, timer } => {
                    self.queue.schedule(at.max(now), Ev::Wake { port, timer });
                }
                Action::Cca { at } => {
                    let at = at.max(now);
                    self.queue.schedule(at + self.scenario.mac.csma.cca_duration, Ev::CcaEnd { port, at });
                }
            }
        }
        let device = self.ids[port];
        for note in out.notes.drain(..) {
            match &note {
                Note::Associated { node, path, started_at } => self.global.associations.push(AssocRecord {
                    node: *node,
                    path: *path,
                    started_at: *started_at,
                    completed_at: now,
                }),
                Note::AssocFailed { node } => self.global.association_failures.push(*node),
                Note::DataDropped { flow, .. } => {
                    if let Some(spec) = self.scenario.flows.iter().find(|f| f.id == *flow) {
                        let (slot, superframe) = self.position(port, now);
                        self.trace.push(TraceRecord {
                            time: now,
                            end: now,
                            kind: FrameKind::Data,
                            src: spec.src,
                            dst: spec.dst,
                            psdu_len: spec.psdu,
                            slot,
                            superframe,
                            outcome: TraceOutcome::Dropped,
                            flow: Some(*flow),
                        });
                    }
                }
                _ => {}
            }
            self.notes.push(TimedNote { time: now, device, note });
        }
        self.outbox = out;
    }

    /// Slot and superframe of `t` on the grid of device `port`.
    fn position(&self, port: Port, t: Micros) -> (Option<u8>, u64) {
        let sf = &self.scenario.mac.sf;
        let rel = t.saturating_sub(self.net.devices[port].grid_offset());
        let bi = sf.beacon_interval();
        let within = rel % bi;
        let slot = (within < sf.active_portion()).then(|| (within / sf.slot_duration()) as u8);
        (slot, rel / bi)
    }

    fn step(&mut self, ev: Ev, now: Micros) {
        match ev {
            Ev::Superframe { port, k } => {
                self.dispatch(port, Input::SuperframeStart { index: k }, now);
                if k + 1 < self.scenario.duration {
                    let next = now + self.scenario.mac.sf.beacon_interval();
                    self.queue.schedule(next, Ev::Superframe { port, k: k + 1 });
                }
            }
            Ev::Wake { port, timer } => self.dispatch(port, Input::Timer(timer), now),
            Ev::CcaEnd { port, at } => {
                let state = self.net.medium.cca_window(port, at, now);
                self.dispatch(port, Input::CcaDone { at, state }, now);
            }
            Ev::TxStart { port, frame } => {
                let air = frame_airtime(frame.psdu_len(), &self.scenario.mac.phy)
                    .expect("devices only build frames within PHY limits");
                if self.net.medium.is_transmitting(port) {
                    self.global.radio_conflicts += 1;
                    self.dispatch(port, Input::TxDone(&frame), now);
                    return;
                }
                let tx = self.net.medium.begin_tx(port, now, air);
                self.global.transmissions += 1;
                if matches!(frame.kind(), FrameKind::Beacon | FrameKind::Superbeacon) {
                    self.global.beacons_sent += 1;
                }
                self.queue.schedule(tx.end, Ev::TxEnd { tx, frame });
            }
            Ev::TxEnd { tx, frame } => self.finish_tx(tx, &frame, now),
        }
    }

    fn finish_tx(&mut self, tx: Transmission, frame: &Frame, now: Micros) {
        let receptions = self.net.medium.end_tx(&tx);
        let broadcast = frame.is_broadcast();
        let dst_port = self.net.port(frame.dst);
        let beacon = matches!(frame.kind(), FrameKind::Beacon | FrameKind::Superbeacon);
        let flow = match frame.payload {
            Payload::Data { flow, .. } => Some(flow),
            _ => None,
        };
        let mut all_ok = !receptions.is_empty();
        let mut dst_ok = false;
        for r in &receptions {
            let ok = r.outcome == RxOutcome::Delivered;
            if ok {
                self.dispatch(r.receiver, Input::Received(frame), now);
            } else {
                all_ok = false;
                self.global.collisions += 1;
                if beacon {
                    *self.global.beacon_collisions.entry(self.ids[r.receiver]).or_insert(0) += 1;
                }
                if Some(r.receiver) == dst_port {
                    if let Some(f) = flow {
                        *self.flow_collisions.entry(f).or_insert(0) += 1;
                    }
                    if frame.kind() == FrameKind::GtsRequest {
                        self.global.gts_request_losses += 1;
                    }
                }
            }
            if Some(r.receiver) == dst_port {
                dst_ok = ok;
            }
        }
        let (slot, superframe) = self.position(tx.sender, tx.start);
        let delivered = if broadcast { all_ok } else { dst_ok };
        self.trace.push(TraceRecord {
            time: tx.start,
            end: tx.end,
            kind: frame.kind(),
            src: frame.src,
            dst: frame.dst,
            psdu_len: frame.psdu_len(),
            slot,
            superframe,
            outcome: if delivered { TraceOutcome::Ok } else { TraceOutcome::Collision },
            flow,
        });
        self.dispatch(tx.sender, Input::TxDone(frame), now);
    }
}

/// Runs a scenario to completion with the given seed.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<SimOutput, ScheduleError> {
    let net = build_network(scenario, seed)?;
    let streams = RngStream::new(seed);
    let n = net.devices.len();
    let ids: Vec<NodeId> = net.devices.iter().map(|d| d.id()).collect();
    let mut queue = EventQueue::new();
    for (port, d) in net.devices.iter().enumerate() {
        queue.schedule(d.grid_offset(), Ev::Superframe { port, k: 0 });
    }
    let bi = scenario.mac.sf.beacon_interval();
    let latest_offset = net.devices.iter().map(|d| d.grid_offset()).max().unwrap_or(Micros::ZERO);
    let end = bi * scenario.duration;
    let mut d = Driver {
        net,
        scenario: scenario.clone(),
        queue,
        rngs: (0..n).map(|i| streams.substream(i as u64 + 1)).collect(),
        ids,
        outbox: Outbox::new(),
        notes: Vec::new(),
        trace: Vec::new(),
        global: GlobalMetrics::default(),
        flow_collisions: BTreeMap::new(),
    };
    let stop = end + latest_offset;
    while let Some(ev) = d.queue.pop_until(stop) {
        let now = ev.time;
        d.step(ev.payload, now);
    }
    d.global.events = d.queue.processed();
    let warm = (bi * scenario.mac.horizon()).min(end);
    let window = (warm, end);
    let flows = scenario
        .flows
        .iter()
        .map(|f| flow_metrics(scenario, f, &d.notes, window, d.flow_collisions.get(&f.id).copied().unwrap_or(0)))
        .collect();
    let schedules = d.net.devices.iter().filter_map(|x| x.arbiter().map(|a| a.cycle.clone())).collect();
    Ok(SimOutput {
        scenario: d.scenario,
        seed,
        flows,
        global: d.global,
        trace: d.trace,
        notes: d.notes,
        window,
        end: stop,
        schedules,
    })
}
