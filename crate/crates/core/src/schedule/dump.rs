use std::fmt::Write;

use super::{occupancy, ScheduleCycle};

/// Text dump: one `id kind owner star slot level phase` line per
/// reservation, followed by one occupancy matrix per star.
///
/// Matrix rows are reservable slots, columns are superframes of the
/// horizon; a cell shows the reservation id visible from that star's
/// neighbourhood or `.` when free.
pub fn dump(cycle: &ScheduleCycle) -> String {
    let mut out = String::new();
    out.push_str("# allocations\n");
    out.push_str("id kind owner star slot level phase\n");
    for a in cycle.allocations() {
        let _ = writeln!(out, "{} {} {} {} {} {} {}", a.id, a.kind, a.owner, a.star, a.slot, a.level.n(), a.phase);
    }
    let occ = occupancy(cycle);
    let horizon = cycle.horizon();
    for &star in cycle.stars().keys() {
        let _ = writeln!(out, "# occupancy star {star}");
        out.push_str("slot |");
        for k in 0..horizon {
            let _ = write!(out, " {k:>3}");
        }
        out.push('\n');
        for slot in cycle.config().reservable_slots() {
            let _ = write!(out, "{slot:>4} |");
            for k in 0..horizon {
                match occ.occupant(k, slot, star) {
                    Some(o) => {
                        let _ = write!(out, " {:>3}", o.alloc);
                    }
                    None => out.push_str("   ."),
                }
            }
            out.push('\n');
        }
    }
    let doubles = occ.double_occupied();
    let _ = writeln!(out, "# double-occupied cells: {}", doubles.len());
    for d in doubles {
        let _ = writeln!(out, "superframe {} slot {}: {} vs {}", d.superframe, d.slot, d.first, d.second);
    }
    out
}
