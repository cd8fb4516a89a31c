//! MAC frames. Only the encoded length matters for timing, but every frame
//! has a concrete byte layout and its PSDU length is taken from it.

use std::fmt;

use serde::Serialize;

use crate::ids::{AllocId, FlowId, NodeId, StarId};
use crate::schedule::{AllocKind, Allocation, Direction, Refusal};
use crate::timing::Micros;

/// Frame control, sequence number, PAN id, short destination and source.
pub const MAC_HEADER_BYTES: usize = 9;
pub const FCS_BYTES: usize = 2;
/// MAC header plus FCS of a data or command frame.
pub const MAC_OVERHEAD_BYTES: usize = MAC_HEADER_BYTES + FCS_BYTES;
/// Smallest data PSDU: full MAC overhead and one payload byte.
pub const MIN_DATA_PSDU: usize = MAC_OVERHEAD_BYTES + 1;
pub const BEACON_HEADER_BYTES: usize = 8;
pub const BEACON_ENTRY_BYTES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum FrameKind {
    Beacon,
    Superbeacon,
    Data,
    Ack,
    GtsRequest,
    GtsGrant,
    GtsRefuse,
    AssocRequest,
    AssocResponse,
    ReleaseNotice,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrameKind::Beacon => "beacon",
            FrameKind::Superbeacon => "superbeacon",
            FrameKind::Data => "data",
            FrameKind::Ack => "ack",
            FrameKind::GtsRequest => "gts-request",
            FrameKind::GtsGrant => "gts-grant",
            FrameKind::GtsRefuse => "gts-refuse",
            FrameKind::AssocRequest => "assoc-request",
            FrameKind::AssocResponse => "assoc-response",
            FrameKind::ReleaseNotice => "release-notice",
        };
        f.write_str(s)
    }
}

/// When and how often a star's beacon is sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BeaconCalendar {
    pub offset: Micros,
    pub slot: u8,
    pub level: u8,
    pub phase: u32,
}

impl BeaconCalendar {
    pub fn every_superframe(offset: Micros) -> Self {
        BeaconCalendar { offset, slot: 0, level: 0, phase: 0 }
    }

    pub fn from_gbs(alloc: &Allocation, offset: Micros) -> Self {
        BeaconCalendar { offset, slot: alloc.slot, level: alloc.level.n(), phase: alloc.phase }
    }

    pub fn occurs_in(&self, superframe: u64) -> bool {
        superframe % (1u64 << self.level) == u64::from(self.phase)
    }
}

/// A GTS request; relayed unchanged from star coordinator to PAN coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GtsAsk {
    pub owner: NodeId,
    pub star: StarId,
    pub flow: FlowId,
    pub kind: AllocKind,
    pub level: u8,
    pub direction: Direction,
}

/// Coordinator decisions carried in beacons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Announcement {
    Grant { alloc: Allocation, flow: Option<FlowId> },
    Refuse { owner: NodeId, star: StarId, flow: FlowId, reason: Refusal },
    Release { alloc: AllocId, owner: NodeId, star: StarId },
    AssocResponse { node: NodeId, star: StarId },
}

impl Announcement {
    pub fn star(&self) -> StarId {
        match self {
            Announcement::Grant { alloc, .. } => alloc.star,
            Announcement::Refuse { star, .. }
            | Announcement::Release { star, .. }
            | Announcement::AssocResponse { star, .. } => *star,
        }
    }

    pub fn addressee(&self) -> NodeId {
        match self {
            Announcement::Grant { alloc, .. } => alloc.owner,
            Announcement::Refuse { owner, .. } | Announcement::Release { owner, .. } => *owner,
            Announcement::AssocResponse { node, .. } => *node,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BeaconBody {
    pub star: StarId,
    pub superframe: u64,
    pub bo: u8,
    pub so: u8,
    pub calendar: BeaconCalendar,
    /// This star's reservations occurring in this superframe: (alloc, owner, slot).
    pub slot_map: Vec<(AllocId, NodeId, u8)>,
    pub announcements: Vec<Announcement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuperbeaconBody {
    pub beacon: BeaconBody,
    /// Beacon slots and relay uplinks of every star.
    pub gbs_table: Vec<Allocation>,
    pub digest: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Payload {
    Beacon(BeaconBody),
    Superbeacon(SuperbeaconBody),
    Data {
        flow: FlowId,
        seq: u32,
        payload_len: usize,
        /// Simulation metadata used for latency accounting; not on air.
        enqueued_at: Micros,
    },
    Ack,
    GtsRequest {
        asks: Vec<GtsAsk>,
        /// `(allocation, consecutive unused occurrences)` reported by a star coordinator.
        lease_report: Vec<(AllocId, u32)>,
    },
    GtsGrant(Allocation),
    GtsRefuse { flow: FlowId, reason: Refusal },
    AssocRequest,
    AssocResponse { star: StarId },
    ReleaseNotice { alloc: AllocId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Frame {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u8,
    pub ack_request: bool,
    pub payload: Payload,
}

impl Frame {
    pub fn kind(&self) -> FrameKind {
        match &self.payload {
            Payload::Beacon(_) => FrameKind::Beacon,
            Payload::Superbeacon(_) => FrameKind::Superbeacon,
            Payload::Data { .. } => FrameKind::Data,
            Payload::Ack => FrameKind::Ack,
            Payload::GtsRequest { .. } => FrameKind::GtsRequest,
            Payload::GtsGrant(_) => FrameKind::GtsGrant,
            Payload::GtsRefuse { .. } => FrameKind::GtsRefuse,
            Payload::AssocRequest => FrameKind::AssocRequest,
            Payload::AssocResponse { .. } => FrameKind::AssocResponse,
            Payload::ReleaseNotice { .. } => FrameKind::ReleaseNotice,
        }
    }

    pub fn ack_for(data: &Frame) -> Frame {
        Frame { src: data.dst, dst: data.src, seq: data.seq, ack_request: false, payload: Payload::Ack }
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == NodeId::BROADCAST
    }

    pub fn beacon(&self) -> Option<&BeaconBody> {
        match &self.payload {
            Payload::Beacon(b) => Some(b),
            Payload::Superbeacon(s) => Some(&s.beacon),
            _ => None,
        }
    }

    /// PSDU length, derived from the encoding.
    pub fn psdu_len(&self) -> usize {
        self.encode().len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32);
        match &self.payload {
            Payload::Ack => {
                out.extend_from_slice(&[0x02, 0x00, self.seq]);
                push_fcs(&mut out);
                return out;
            }
            Payload::Beacon(b) => {
                encode_beacon_header(&mut out, b, 0x00, b.slot_map.len() + b.announcements.len());
                encode_beacon_entries(&mut out, b);
                return out;
            }
            Payload::Superbeacon(s) => {
                let entries = s.beacon.slot_map.len() + s.beacon.announcements.len() + s.gbs_table.len() + 1;
                encode_beacon_header(&mut out, &s.beacon, 0x80, entries);
                encode_beacon_entries(&mut out, &s.beacon);
                for a in &s.gbs_table {
                    out.extend_from_slice(&alloc_entry(a));
                }
                out.extend_from_slice(&[0xd1, (s.digest >> 8) as u8, s.digest as u8]);
                return out;
            }
            _ => {}
        }
        let frame_type: u8 = if matches!(self.payload, Payload::Data { .. }) { 0x01 } else { 0x03 };
        out.push(frame_type | if self.ack_request { 0x20 } else { 0 });
        out.push(0x88);
        out.push(self.seq);
        out.extend_from_slice(&[0xcd, 0xab]);
        out.extend_from_slice(&self.dst.0.to_le_bytes());
        out.extend_from_slice(&self.src.0.to_le_bytes());
        match &self.payload {
            Payload::Data { flow, seq, payload_len, .. } => {
                let mut body = Vec::with_capacity(*payload_len);
                body.extend_from_slice(&(flow.0 as u16).to_le_bytes());
                body.extend_from_slice(&seq.to_le_bytes());
                body.resize(*payload_len, 0xa5);
                body.truncate(*payload_len);
                out.extend_from_slice(&body);
            }
            Payload::GtsRequest { asks, lease_report } => {
                out.push(0x09);
                if asks.len() == 1 && lease_report.is_empty() {
                    let a = asks[0];
                    out.push(characteristics(a.level, a.direction, a.kind));
                    out.push(a.flow.0 as u8);
                } else {
                    out.push(asks.len() as u8);
                    for a in asks {
                        out.extend_from_slice(&a.owner.0.to_le_bytes());
                        out.push(a.flow.0 as u8);
                        out.push(characteristics(a.level, a.direction, a.kind));
                    }
                    out.push(lease_report.len() as u8);
                    for (id, unused) in lease_report {
                        out.extend_from_slice(&(id.0 as u16).to_le_bytes());
                        out.push((*unused).min(255) as u8);
                    }
                }
            }
            Payload::GtsGrant(a) => {
                out.push(0x0a);
                out.extend_from_slice(&alloc_entry(a));
                out.extend_from_slice(&(a.id.0 as u16).to_le_bytes());
            }
            Payload::GtsRefuse { flow, reason } => {
                out.push(0x0b);
                out.push(flow.0 as u8);
                out.push(match reason {
                    Refusal::NoFreeSlot => 1,
                    Refusal::GtsCapReached => 2,
                });
            }
            Payload::AssocRequest => {
                out.push(0x01);
                out.push(0x80);
            }
            Payload::AssocResponse { star } => {
                out.push(0x02);
                out.extend_from_slice(&star.0.to_le_bytes());
                out.push(0x00);
            }
            Payload::ReleaseNotice { alloc } => {
                out.push(0x0c);
                out.extend_from_slice(&(alloc.0 as u16).to_le_bytes());
            }
            Payload::Ack | Payload::Beacon(_) | Payload::Superbeacon(_) => unreachable!(),
        }
        push_fcs(&mut out);
        out
    }
}

/// Data frame whose PSDU is exactly `psdu_len` bytes.
pub fn data_frame(src: NodeId, dst: NodeId, mac_seq: u8, flow: FlowId, seq: u32, psdu_len: usize, acked: bool, enqueued_at: Micros) -> Frame {
    assert!(psdu_len >= MIN_DATA_PSDU, "data PSDU of {psdu_len} bytes is below the MAC overhead");
    Frame {
        src,
        dst,
        seq: mac_seq,
        ack_request: acked,
        payload: Payload::Data { flow, seq, payload_len: psdu_len - MAC_OVERHEAD_BYTES, enqueued_at },
    }
}

/// How many entries fit in a beacon of at most `max_psdu` bytes.
pub fn beacon_entry_capacity(max_psdu: usize) -> usize {
    max_psdu.saturating_sub(BEACON_HEADER_BYTES) / BEACON_ENTRY_BYTES
}

fn characteristics(level: u8, direction: Direction, kind: AllocKind) -> u8 {
    let dir = match direction {
        Direction::ToCoordinator => 0,
        Direction::FromCoordinator => 1,
        Direction::Beacon => 2,
    };
    let kind = match kind {
        AllocKind::Gts => 0,
        AllocKind::Pds => 1,
        AllocKind::Gbs => 2,
    };
    (level & 0x0f) | (dir << 4) | (kind << 6)
}

fn alloc_entry(a: &Allocation) -> [u8; 3] {
    [a.owner.0 as u8, (a.slot << 4) | (a.level.n() & 0x0f), a.phase as u8]
}

fn encode_beacon_header(out: &mut Vec<u8>, b: &BeaconBody, flags: u8, entries: usize) {
    out.extend_from_slice(&b.star.0.to_le_bytes());
    out.extend_from_slice(&(b.superframe as u16).to_le_bytes());
    out.push((b.bo << 4) | (b.so & 0x0f));
    out.push(b.calendar.slot);
    out.push(flags | (b.calendar.level << 4 & 0x70) | (b.calendar.phase as u8 & 0x0f));
    out.push(entries as u8);
}

fn encode_beacon_entries(out: &mut Vec<u8>, b: &BeaconBody) {
    for (id, owner, slot) in &b.slot_map {
        out.extend_from_slice(&[owner.0 as u8, *slot, id.0 as u8]);
    }
    for a in &b.announcements {
        let entry = match a {
            Announcement::Grant { alloc, .. } => alloc_entry(alloc),
            Announcement::Refuse { owner, flow, .. } => [owner.0 as u8, 0xf0, flow.0 as u8],
            Announcement::Release { alloc, owner, .. } => [owner.0 as u8, 0xf1, alloc.0 as u8],
            Announcement::AssocResponse { node, .. } => [node.0 as u8, 0xf2, (node.0 >> 8) as u8],
        };
        out.extend_from_slice(&entry);
    }
}

fn push_fcs(out: &mut Vec<u8>) {
    // CRC-16/KERMIT as used by the 2.4 GHz PHY
    let mut crc: u16 = 0;
    for &byte in out.iter() {
        crc ^= u16::from(byte);
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0x8408 } else { crc >> 1 };
        }
    }
    out.extend_from_slice(&crc.to_le_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ReservationLevel;
    use proptest::prelude::*;

    fn beacon(entries: usize) -> BeaconBody {
        BeaconBody {
            star: StarId(1),
            superframe: 3,
            bo: 3,
            so: 3,
            calendar: BeaconCalendar::every_superframe(Micros::ZERO),
            slot_map: (0..entries).map(|i| (AllocId(i as u32), NodeId(i as u16), 9)).collect(),
            announcements: vec![],
        }
    }

    #[test]
    fn ack_is_five_bytes() {
        let data = data_frame(NodeId(1), NodeId(0), 7, FlowId(1), 0, 127, true, Micros::ZERO);
        assert_eq!(Frame::ack_for(&data).psdu_len(), 5);
    }

    #[test]
    fn beacon_length_is_header_plus_entries() {
        for n in [0, 1, 5] {
            let f = Frame { src: NodeId(1), dst: NodeId::BROADCAST, seq: 0, ack_request: false, payload: Payload::Beacon(beacon(n)) };
            assert_eq!(f.psdu_len(), BEACON_HEADER_BYTES + BEACON_ENTRY_BYTES * n);
        }
        let alloc = Allocation {
            id: AllocId(1),
            kind: AllocKind::Gbs,
            owner: NodeId(2),
            star: StarId(2),
            slot: 9,
            level: ReservationLevel::new(1, 4).unwrap(),
            phase: 1,
            direction: Direction::Beacon,
            granted_at: 0,
        };
        let sb = Frame {
            src: NodeId(0),
            dst: NodeId::BROADCAST,
            seq: 0,
            ack_request: false,
            payload: Payload::Superbeacon(SuperbeaconBody { beacon: beacon(2), gbs_table: vec![alloc], digest: 0xbeef }),
        };
        // two slot-map entries, one GBS entry, one digest entry
        assert_eq!(sb.psdu_len(), 8 + 3 * 4);
        assert_eq!(sb.kind(), FrameKind::Superbeacon);
    }

    #[test]
    fn command_frames_have_mac_overhead() {
        let f = Frame { src: NodeId(4), dst: NodeId(0), seq: 1, ack_request: true, payload: Payload::AssocRequest };
        assert_eq!(f.psdu_len(), MAC_OVERHEAD_BYTES + 2);
        let g = Frame {
            src: NodeId(4),
            dst: NodeId(0),
            seq: 2,
            ack_request: true,
            payload: Payload::GtsRequest {
                asks: vec![GtsAsk {
                    owner: NodeId(4),
                    star: StarId(0),
                    flow: FlowId(1),
                    kind: AllocKind::Gts,
                    level: 0,
                    direction: Direction::ToCoordinator,
                }],
                lease_report: vec![],
            },
        };
        assert_eq!(g.psdu_len(), MAC_OVERHEAD_BYTES + 3);
    }

    #[test]
    fn entry_capacity() {
        assert_eq!(beacon_entry_capacity(127), 39);
        assert_eq!(beacon_entry_capacity(8), 0);
        assert_eq!(beacon_entry_capacity(4), 0);
    }

    proptest! {
        #[test]
        fn data_psdu_matches_request(psdu in MIN_DATA_PSDU..=127usize, seq in any::<u32>(), flow in 0u32..1000) {
            let f = data_frame(NodeId(3), NodeId(0), 0, FlowId(flow), seq, psdu, true, Micros::ZERO);
            prop_assert_eq!(f.psdu_len(), psdu);
            prop_assert_eq!(f.kind(), FrameKind::Data);
        }
    }
}
