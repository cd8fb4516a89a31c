//! PAN-wide reservation engine.
//!
//! A reservation of level `n` on slot `s` with phase `φ` occupies slot `s`
//! in every superframe `k` with `k mod 2^n = φ`. The engine keeps the whole
//! `2^n_max`-superframe horizon conflict-free: two reservations on the same
//! slot whose stars interfere may never share a superframe.

mod dump;
mod lease;
mod occupancy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ids::{AllocId, NodeId, StarId};
use crate::timing::SuperframeConfig;

pub use dump::dump;
pub use lease::{inactivity_sweep, LeaseState, LeaseStatus, LeaseTable, Revocation};
pub use occupancy::{occupancy, occupancy_of, DoubleOccupancy, Occupancy, Occupant};

pub const DEFAULT_N_MAX: u8 = 4;
pub const DEFAULT_MAX_GTS_PER_SUPERFRAME: usize = 7;
pub const DEFAULT_INACTIVITY_THRESHOLD: u32 = 4;

/// Periodicity of a reservation: it occurs once every `2^n` superframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ReservationLevel(u8);

impl ReservationLevel {
    pub fn new(n: u8, n_max: u8) -> Result<Self, ScheduleError> {
        if n > n_max {
            return Err(ScheduleError::LevelTooHigh { level: n, n_max });
        }
        Ok(ReservationLevel(n))
    }

    pub fn n(self) -> u8 {
        self.0
    }

    pub fn period(self) -> u32 {
        1 << self.0
    }

    /// Share of the slot's occurrences owned by this level, `2^-n`.
    pub fn fraction(self) -> f64 {
        1.0 / f64::from(self.period())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum AllocKind {
    Gts,
    Gbs,
    Pds,
}

impl fmt::Display for AllocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocKind::Gts => "GTS",
            AllocKind::Gbs => "GBS",
            AllocKind::Pds => "PDS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Direction {
    ToCoordinator,
    FromCoordinator,
    Beacon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Allocation {
    pub id: AllocId,
    pub kind: AllocKind,
    pub owner: NodeId,
    pub star: StarId,
    pub slot: u8,
    pub level: ReservationLevel,
    pub phase: u32,
    pub direction: Direction,
    pub granted_at: u64,
}

impl Allocation {
    pub fn occurs_in(&self, superframe: u64) -> bool {
        occurs_in(self, superframe)
    }

    /// First superframe index `>= from` in which the allocation occurs.
    pub fn next_occurrence(&self, from: u64) -> u64 {
        let p = u64::from(self.level.period());
        let phase = u64::from(self.phase);
        let base = from - from % p + phase;
        if base >= from {
            base
        } else {
            base + p
        }
    }
}

/// True iff `superframe mod 2^n == phase`.
pub fn occurs_in(a: &Allocation, superframe: u64) -> bool {
    superframe % u64::from(a.level.period()) == u64::from(a.phase)
}

/// Symmetric relation over stars whose transmissions can collide.
/// Every star interferes with itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Interference {
    pairs: BTreeSet<(StarId, StarId)>,
}

impl Interference {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (StarId, StarId)>>(pairs: I) -> Self {
        let mut rel = Self::new();
        for (a, b) in pairs {
            rel.add(a, b);
        }
        rel
    }

    pub fn add(&mut self, a: StarId, b: StarId) {
        if a != b {
            self.pairs.insert((a.min(b), a.max(b)));
        }
    }

    pub fn interferes(&self, a: StarId, b: StarId) -> bool {
        a == b || self.pairs.contains(&(a.min(b), a.max(b)))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (StarId, StarId)> + '_ {
        self.pairs.iter().copied()
    }
}

/// Whether two reservations can ever occupy the same slot of the same
/// superframe within one interference neighbourhood.
pub fn conflicts(a: &Allocation, b: &Allocation, interference: &Interference) -> bool {
    if a.slot != b.slot || !interference.interferes(a.star, b.star) {
        return false;
    }
    let (coarse, fine) = if a.level <= b.level { (a, b) } else { (b, a) };
    fine.phase % coarse.level.period() == coarse.phase
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("reservation level {level} exceeds n_max {n_max}")]
    LevelTooHigh { level: u8, n_max: u8 },
    #[error("unknown star {0}")]
    UnknownStar(StarId),
    #[error("node {node} is not known to star {star}")]
    UnknownNode { node: NodeId, star: StarId },
    #[error("star {0} is already registered")]
    DuplicateStar(StarId),
    #[error("unknown allocation {0}")]
    UnknownAllocation(AllocId),
    #[error("{kind} requests cannot use direction {direction:?}")]
    BadDirection { kind: AllocKind, direction: Direction },
    #[error("GBS owner {owner} is not the coordinator of star {star}")]
    GbsOwner { owner: NodeId, star: StarId },
    #[error("n_max {0} is too large")]
    HorizonTooLarge(u8),
}

/// Why admission declined a well-formed request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Refusal {
    /// Every reservable (slot, phase) at this level conflicts with an existing reservation.
    NoFreeSlot,
    /// A conflict-free position exists but would exceed the per-superframe GTS cap of the star.
    GtsCapReached,
}

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Refusal::NoFreeSlot => "no free slot/phase",
            Refusal::GtsCapReached => "per-superframe GTS cap reached",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Admission {
    Granted(Allocation),
    Refused(Refusal),
}

impl Admission {
    pub fn granted(&self) -> Option<&Allocation> {
        match self {
            Admission::Granted(a) => Some(a),
            Admission::Refused(_) => None,
        }
    }
}

/// What a requester may ask for. The phase and slot are always chosen by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub kind: AllocKind,
    pub owner: NodeId,
    pub star: StarId,
    pub level: u8,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReleaseReason {
    NodeRequest,
    CoordinatorRevocation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum AuditEvent {
    Granted { slot: u8, level: u8, phase: u32 },
    Released(ReleaseReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub superframe: u64,
    pub alloc: AllocId,
    pub owner: NodeId,
    pub event: AuditEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleConfig {
    pub n_max: u8,
    pub slots_per_superframe: u8,
    pub min_cap_slots: u8,
    pub max_gts_per_superframe: usize,
}

impl ScheduleConfig {
    pub fn for_superframe(sf: &SuperframeConfig) -> Self {
        ScheduleConfig {
            n_max: DEFAULT_N_MAX,
            slots_per_superframe: sf.slots_per_superframe,
            min_cap_slots: sf.min_cap_slots,
            max_gts_per_superframe: DEFAULT_MAX_GTS_PER_SUPERFRAME,
        }
    }

    pub fn horizon(&self) -> u32 {
        1 << self.n_max
    }

    pub fn reservable_slots(&self) -> std::ops::Range<u8> {
        1 + self.min_cap_slots..self.slots_per_superframe
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StarEntry {
    pub coordinator: NodeId,
    pub members: BTreeSet<NodeId>,
}

/// The coordinator's exhaustive view of every reservation over the horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleCycle {
    config: ScheduleConfig,
    interference: Interference,
    stars: BTreeMap<StarId, StarEntry>,
    allocations: BTreeMap<AllocId, Allocation>,
    next_id: u32,
    audit: Vec<AuditRecord>,
}

impl ScheduleCycle {
    pub fn new(config: ScheduleConfig, interference: Interference) -> Result<Self, ScheduleError> {
        if config.n_max > 16 {
            return Err(ScheduleError::HorizonTooLarge(config.n_max));
        }
        Ok(ScheduleCycle {
            config,
            interference,
            stars: BTreeMap::new(),
            allocations: BTreeMap::new(),
            next_id: 1,
            audit: Vec::new(),
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn horizon(&self) -> u32 {
        self.config.horizon()
    }

    pub fn interference(&self) -> &Interference {
        &self.interference
    }

    pub fn stars(&self) -> &BTreeMap<StarId, StarEntry> {
        &self.stars
    }

    pub fn allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.allocations.values()
    }

    pub fn allocation(&self, id: AllocId) -> Option<&Allocation> {
        self.allocations.get(&id)
    }

    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn register_star(&mut self, star: StarId, coordinator: NodeId) -> Result<(), ScheduleError> {
        if self.stars.contains_key(&star) {
            return Err(ScheduleError::DuplicateStar(star));
        }
        self.stars.insert(star, StarEntry { coordinator, members: BTreeSet::new() });
        Ok(())
    }

    pub fn register_node(&mut self, star: StarId, node: NodeId) -> Result<(), ScheduleError> {
        self.stars
            .get_mut(&star)
            .ok_or(ScheduleError::UnknownStar(star))?
            .members
            .insert(node);
        Ok(())
    }

    pub fn knows(&self, star: StarId, node: NodeId) -> bool {
        self.stars
            .get(&star)
            .is_some_and(|e| e.coordinator == node || e.members.contains(&node))
    }

    fn check_request(&self, req: &Request) -> Result<ReservationLevel, ScheduleError> {
        let level = ReservationLevel::new(req.level, self.config.n_max)?;
        let entry = self.stars.get(&req.star).ok_or(ScheduleError::UnknownStar(req.star))?;
        match req.kind {
            AllocKind::Gbs => {
                if req.direction != Direction::Beacon {
                    return Err(ScheduleError::BadDirection { kind: req.kind, direction: req.direction });
                }
                if entry.coordinator != req.owner {
                    return Err(ScheduleError::GbsOwner { owner: req.owner, star: req.star });
                }
            }
            AllocKind::Gts | AllocKind::Pds => {
                if req.direction == Direction::Beacon {
                    return Err(ScheduleError::BadDirection { kind: req.kind, direction: req.direction });
                }
                if !self.knows(req.star, req.owner) {
                    return Err(ScheduleError::UnknownNode { node: req.owner, star: req.star });
                }
            }
        }
        Ok(level)
    }

    /// GTS/PDS occurrences of `star` in superframe `k` of the horizon.
    fn gts_load(&self, star: StarId, superframe: u64) -> usize {
        self.allocations
            .values()
            .filter(|a| a.star == star && a.kind != AllocKind::Gbs && a.occurs_in(superframe))
            .count()
    }

    fn within_cap(&self, candidate: &Allocation) -> bool {
        if candidate.kind == AllocKind::Gbs {
            return true;
        }
        let period = u64::from(candidate.level.period());
        (u64::from(candidate.phase)..u64::from(self.horizon()))
            .step_by(period as usize)
            .all(|k| self.gts_load(candidate.star, k) < self.config.max_gts_per_superframe)
    }

    /// Admits a request at the lowest conflict-free slot, then the lowest phase.
    pub fn admit(&mut self, req: Request, now: u64) -> Result<Admission, ScheduleError> {
        let level = self.check_request(&req)?;
        let mut capped = false;
        for slot in self.config.reservable_slots() {
            for phase in 0..level.period() {
                let candidate = Allocation {
                    id: AllocId(self.next_id),
                    kind: req.kind,
                    owner: req.owner,
                    star: req.star,
                    slot,
                    level,
                    phase,
                    direction: req.direction,
                    granted_at: now,
                };
                if self.allocations.values().any(|a| conflicts(a, &candidate, &self.interference)) {
                    continue;
                }
                if !self.within_cap(&candidate) {
                    capped = true;
                    continue;
                }
                self.next_id += 1;
                self.audit.push(AuditRecord {
                    superframe: now,
                    alloc: candidate.id,
                    owner: candidate.owner,
                    event: AuditEvent::Granted { slot, level: level.n(), phase },
                });
                self.allocations.insert(candidate.id, candidate.clone());
                return Ok(Admission::Granted(candidate));
            }
        }
        Ok(Admission::Refused(if capped { Refusal::GtsCapReached } else { Refusal::NoFreeSlot }))
    }

    /// Coordinator-initiated dedicated slot for a known node.
    pub fn admit_pds(
        &mut self,
        star: StarId,
        node: NodeId,
        level: u8,
        direction: Direction,
        now: u64,
    ) -> Result<Admission, ScheduleError> {
        self.admit(Request { kind: AllocKind::Pds, owner: node, star, level, direction }, now)
    }

    /// Beacon slot for a star coordinator.
    pub fn admit_gbs(&mut self, star: StarId, level: u8, now: u64) -> Result<Admission, ScheduleError> {
        let owner = self.stars.get(&star).ok_or(ScheduleError::UnknownStar(star))?.coordinator;
        self.admit(Request { kind: AllocKind::Gbs, owner, star, level, direction: Direction::Beacon }, now)
    }

    pub fn release(&mut self, id: AllocId, reason: ReleaseReason, now: u64) -> Result<Allocation, ScheduleError> {
        let alloc = self.allocations.remove(&id).ok_or(ScheduleError::UnknownAllocation(id))?;
        self.audit.push(AuditRecord {
            superframe: now,
            alloc: id,
            owner: alloc.owner,
            event: AuditEvent::Released(reason),
        });
        Ok(alloc)
    }

    /// Adds an allocation built elsewhere (e.g. merged from independent
    /// star-local schedules) without any admission check.
    pub fn insert_unchecked(&mut self, alloc: Allocation) {
        self.next_id = self.next_id.max(alloc.id.0 + 1);
        self.allocations.insert(alloc.id, alloc);
    }

    /// Fraction of `slot` reserved within `star`'s neighbourhood.
    pub fn slot_load(&self, slot: u8, star: StarId) -> f64 {
        self.allocations
            .values()
            .filter(|a| a.slot == slot && self.interference.interferes(a.star, star))
            .map(|a| a.level.fraction())
            .sum()
    }

    /// Short content hash carried in superbeacons.
    pub fn digest(&self) -> u16 {
        let mut h: u32 = 0x811c_9dc5;
        for a in self.allocations.values() {
            for v in [a.id.0, u32::from(a.owner.0), u32::from(a.slot), u32::from(a.level.n()), a.phase] {
                h = (h ^ v).wrapping_mul(0x0100_0193);
            }
        }
        (h ^ (h >> 16)) as u16
    }
}
