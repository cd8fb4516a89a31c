//! Frame formats and per-role MAC state machines.
//!
//! A [`Device`] is a pure transition function: the simulation driver feeds
//! it [`Input`]s at given times and executes the [`Action`]s it returns.
//! Observations useful for metrics come out as [`Note`]s.

mod coordinator;
pub mod csma;
mod device;
pub mod frame;
pub mod transfer;

use serde::Serialize;

use crate::ids::{AllocId, FlowId, NodeId, StarId};
use crate::schedule::{Refusal, DEFAULT_INACTIVITY_THRESHOLD, DEFAULT_N_MAX};
use crate::simcore::ChannelState;
use crate::timing::{Micros, PhyParams, SuperframeConfig};

pub use csma::{CapWindow, CsmaParams, CsmaRun, CsmaStep};
pub use coordinator::Arbiter;
pub use device::{Device, DeviceSetup, Role};
pub use frame::{Announcement, BeaconCalendar, Frame, FrameKind, GtsAsk, Payload};
pub use transfer::{plan_gts_transfer, PlannedExchange};

pub const DEFAULT_RETRY_LIMIT: u8 = 3;
/// 54 symbols.
pub const DEFAULT_ACK_WAIT: Micros = Micros(864);
pub const DEFAULT_ANNOUNCE_REPEATS: u8 = 4;
pub const DEFAULT_ASSOC_ATTEMPTS: u8 = 4;

/// MAC-wide configuration shared by every device of a PAN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MacParams {
    pub sf: SuperframeConfig,
    pub phy: PhyParams,
    pub csma: CsmaParams,
    pub n_max: u8,
    pub max_gts_per_superframe: usize,
    pub retry_limit: u8,
    pub ack_wait: Micros,
    /// How many beacons repeat each announcement.
    pub announce_repeats: u8,
    pub inactivity_threshold: u32,
    /// Contention attempts at association before giving up.
    pub assoc_attempts: u8,
}

impl MacParams {
    pub fn new(sf: SuperframeConfig, phy: PhyParams) -> Self {
        MacParams {
            sf,
            phy,
            csma: CsmaParams::default(),
            n_max: DEFAULT_N_MAX,
            max_gts_per_superframe: crate::schedule::DEFAULT_MAX_GTS_PER_SUPERFRAME,
            retry_limit: DEFAULT_RETRY_LIMIT,
            ack_wait: DEFAULT_ACK_WAIT,
            announce_repeats: DEFAULT_ANNOUNCE_REPEATS,
            inactivity_threshold: DEFAULT_INACTIVITY_THRESHOLD,
            assoc_attempts: DEFAULT_ASSOC_ATTEMPTS,
        }
    }

    pub fn horizon(&self) -> u64 {
        1 << self.n_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowMode {
    Gts { level: u8 },
    Pds { level: u8 },
    Cap,
}

impl FlowMode {
    pub fn level(&self) -> Option<u8> {
        match self {
            FlowMode::Gts { level } | FlowMode::Pds { level } => Some(*level),
            FlowMode::Cap => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowMode::Gts { .. } => "gts",
            FlowMode::Pds { .. } => "pds",
            FlowMode::Cap => "cap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Load {
    /// The queue never runs dry.
    Saturate,
    /// Frames generated at every superframe start.
    PerSuperframe(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    pub psdu: usize,
    pub acked: bool,
    pub mode: FlowMode,
    pub load: Load,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Timer {
    SlotStart { alloc: AllocId, superframe: u64 },
    SlotEnd { alloc: AllocId, superframe: u64 },
    AckTimeout { token: u64 },
    Beacon { superframe: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input<'a> {
    /// Start of superframe `index` on this device's grid.
    SuperframeStart { index: u64 },
    Timer(Timer),
    Received(&'a Frame),
    /// The frame this device put on air has ended.
    TxDone(&'a Frame),
    /// Result of the assessment started at `at`.
    CcaDone { at: Micros, state: ChannelState },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Transmit { at: Micros, frame: Frame },
    Wake { at: Micros, timer: Timer },
    Cca { at: Micros },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AssocPath {
    Contention,
    Dedicated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Note {
    DataSent { flow: FlowId, seq: u32 },
    DataDelivered { flow: FlowId, seq: u32, psdu: usize, enqueued_at: Micros },
    DataDropped { flow: FlowId, seq: u32 },
    Associated { node: NodeId, path: AssocPath, started_at: Micros },
    AssocFailed { node: NodeId },
    GtsRequested { node: NodeId, flow: FlowId },
    GtsRequestFailed { node: NodeId, flow: FlowId },
    GrantReceived { node: NodeId, flow: Option<FlowId>, alloc: AllocId },
    RefuseReceived { node: NodeId, flow: FlowId, reason: Refusal },
    Revoked { node: NodeId, alloc: AllocId },
    GtsSkipped { node: NodeId, alloc: AllocId, superframe: u64 },
    StaleBeacon { node: NodeId },
    ChannelAccessFailure { node: NodeId, kind: FrameKind },
    BeaconSuspended { star: StarId, superframe: u64 },
    Admitted { star: StarId, alloc: AllocId, owner: NodeId },
    Refused { star: StarId, owner: NodeId, reason: Refusal },
}

/// Everything a device emits for one input.
#[derive(Debug, Default)]
pub struct Outbox {
    pub actions: Vec<Action>,
    pub notes: Vec<Note>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.actions.clear();
        self.notes.clear();
    }

    pub(crate) fn transmit(&mut self, at: Micros, frame: Frame) {
        self.actions.push(Action::Transmit { at, frame });
    }

    pub(crate) fn wake(&mut self, at: Micros, timer: Timer) {
        self.actions.push(Action::Wake { at, timer });
    }

    pub(crate) fn note(&mut self, note: Note) {
        self.notes.push(note);
    }
}

/// Refusal kinds plus star identity, for announcements addressed to a node.
pub fn announcement_for(node: NodeId, star: StarId, a: &Announcement) -> bool {
    a.star() == star && a.addressee() == node
}
