use std::collections::BTreeMap;

use serde::Serialize;

use super::{ReleaseReason, ScheduleCycle};
use crate::ids::{AllocId, NodeId, StarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LeaseStatus {
    Active,
    ReleasedByNode,
    RevokedByCoordinator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LeaseState {
    pub alloc: AllocId,
    pub consecutive_unused: u32,
    pub status: LeaseStatus,
}

/// Usage counters for leases that can time out. Infrastructure reservations
/// (beacon slots, relay uplinks) are simply never tracked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LeaseTable {
    leases: BTreeMap<AllocId, LeaseState>,
}

impl LeaseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn track(&mut self, alloc: AllocId) {
        self.leases
            .insert(alloc, LeaseState { alloc, consecutive_unused: 0, status: LeaseStatus::Active });
    }

    pub fn get(&self, alloc: AllocId) -> Option<&LeaseState> {
        self.leases.get(&alloc)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LeaseState> {
        self.leases.values()
    }

    /// Records one occurrence of the reservation; `used` when the owner transmitted in it.
    pub fn record_occurrence(&mut self, alloc: AllocId, used: bool) {
        if let Some(l) = self.leases.get_mut(&alloc) {
            if l.status != LeaseStatus::Active {
                return;
            }
            if used {
                l.consecutive_unused = 0;
            } else {
                l.consecutive_unused += 1;
            }
        }
    }

    /// Overwrites a counter with a value reported by another coordinator.
    pub fn set_unused(&mut self, alloc: AllocId, consecutive_unused: u32) {
        if let Some(l) = self.leases.get_mut(&alloc) {
            if l.status == LeaseStatus::Active {
                l.consecutive_unused = consecutive_unused;
            }
        }
    }

    pub fn mark_released(&mut self, alloc: AllocId) {
        if let Some(l) = self.leases.get_mut(&alloc) {
            l.status = LeaseStatus::ReleasedByNode;
        }
    }
}

/// A lease revoked for inactivity; the owner must be notified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Revocation {
    pub alloc: AllocId,
    pub owner: NodeId,
    pub star: StarId,
}

/// Revokes every active lease unused for at least `threshold` consecutive occurrences.
pub fn inactivity_sweep(
    cycle: &mut ScheduleCycle,
    leases: &mut LeaseTable,
    threshold: u32,
    now: u64,
) -> Vec<Revocation> {
    assert!(threshold >= 1, "inactivity threshold must be at least 1");
    let mut out = Vec::new();
    for lease in leases.leases.values_mut() {
        if lease.status != LeaseStatus::Active || lease.consecutive_unused < threshold {
            continue;
        }
        lease.status = LeaseStatus::RevokedByCoordinator;
        if let Ok(a) = cycle.release(lease.alloc, ReleaseReason::CoordinatorRevocation, now) {
            out.push(Revocation { alloc: a.id, owner: a.owner, star: a.star });
        }
    }
    out
}
