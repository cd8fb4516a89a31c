use std::collections::BTreeMap;

use serde::Serialize;

use super::{Allocation, Interference, ScheduleCycle};
use crate::ids::{AllocId, NodeId, StarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Occupant {
    pub alloc: AllocId,
    pub star: StarId,
    pub owner: NodeId,
}

/// Two reservations found in the same cell within one neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DoubleOccupancy {
    pub superframe: u32,
    pub slot: u8,
    pub first: AllocId,
    pub second: AllocId,
}

/// Every reservation expanded over `2^n_max` superframes, cell by cell.
///
/// This is a plain enumeration and does not use the congruence test in
/// [`super::conflicts`]; it serves as the oracle for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Occupancy {
    pub horizon: u32,
    cells: BTreeMap<(u32, u8), Vec<Occupant>>,
    #[serde(skip)]
    interference: Interference,
}

impl Occupancy {
    pub fn cells(&self) -> impl Iterator<Item = ((u32, u8), &[Occupant])> {
        self.cells.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Number of (superframe, slot, reservation) entries.
    pub fn occupied_cells(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Owner of `slot` in `superframe` as seen from `star`'s neighbourhood.
    pub fn owner(&self, superframe: u32, slot: u8, star: StarId) -> Option<NodeId> {
        self.cells
            .get(&(superframe, slot))?
            .iter()
            .find(|o| self.interference.interferes(o.star, star))
            .map(|o| o.owner)
    }

    pub fn occupant(&self, superframe: u32, slot: u8, star: StarId) -> Option<Occupant> {
        self.cells
            .get(&(superframe, slot))?
            .iter()
            .find(|o| self.interference.interferes(o.star, star))
            .copied()
    }

    pub fn double_occupied(&self) -> Vec<DoubleOccupancy> {
        let mut out = Vec::new();
        for (&(superframe, slot), occupants) in &self.cells {
            for (i, a) in occupants.iter().enumerate() {
                for b in &occupants[i + 1..] {
                    if self.interference.interferes(a.star, b.star) {
                        out.push(DoubleOccupancy { superframe, slot, first: a.alloc, second: b.alloc });
                    }
                }
            }
        }
        out
    }
}

/// Expands an arbitrary set of allocations over a horizon of `2^n_max` superframes.
pub fn occupancy_of<'a, I>(allocations: I, interference: &Interference, n_max: u8) -> Occupancy
where
    I: IntoIterator<Item = &'a Allocation>,
{
    let horizon = 1u32 << n_max;
    let mut cells: BTreeMap<(u32, u8), Vec<Occupant>> = BTreeMap::new();
    for a in allocations {
        for k in 0..horizon {
            if a.occurs_in(u64::from(k)) {
                cells.entry((k, a.slot)).or_default().push(Occupant { alloc: a.id, star: a.star, owner: a.owner });
            }
        }
    }
    Occupancy { horizon, cells, interference: interference.clone() }
}

pub fn occupancy(cycle: &ScheduleCycle) -> Occupancy {
    occupancy_of(cycle.allocations(), cycle.interference(), cycle.config().n_max)
}
