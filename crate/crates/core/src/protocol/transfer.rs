use serde::Serialize;

use crate::timing::{exchange_time, frame_airtime, Micros, PhyParams, TimingError};

/// One data exchange inside a reserved slot occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlannedExchange {
    /// Start of the exchange; the frame goes on air after the host delay.
    pub start: Micros,
    pub data_at: Micros,
    pub data_end: Micros,
    pub ack_end: Option<Micros>,
}

/// Back-to-back exchanges for `queued` frames inside `[slot_start, slot_end)`.
/// Every exchange, ack included, completes inside the slot.
pub fn plan_gts_transfer(
    slot_start: Micros,
    slot_end: Micros,
    queued: usize,
    psdu: usize,
    acked: bool,
    phy: &PhyParams,
) -> Result<Vec<PlannedExchange>, TimingError> {
    let cycle = exchange_time(psdu, acked, phy)?;
    let air = frame_airtime(psdu, phy)?;
    let mut out = Vec::new();
    let mut start = slot_start;
    while out.len() < queued && start + cycle <= slot_end {
        let data_at = start + phy.host_delay;
        let data_end = data_at + air;
        let ack_end = acked.then(|| data_end + phy.turnaround_time + phy.ack_airtime());
        out.push(PlannedExchange { start, data_at, data_end, ack_end });
        start += cycle;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::{frames_per_slot, SuperframeConfig};

    #[test]
    fn bo0_acked_max_frame_plans_nothing() {
        let phy = PhyParams::default();
        let cfg = SuperframeConfig::with_orders(0, 0).unwrap();
        let plan = plan_gts_transfer(Micros(0), cfg.slot_duration(), 10, 127, true, &phy).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn bo3_acked_max_frame_plans_one_exchange() {
        let phy = PhyParams::default();
        let cfg = SuperframeConfig::with_orders(3, 3).unwrap();
        let start = cfg.slot_offset(9);
        let plan = plan_gts_transfer(start, start + cfg.slot_duration(), 10, 127, true, &phy).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].data_at, start);
        assert_eq!(plan[0].data_end, start + Micros(4256));
        assert_eq!(plan[0].ack_end, Some(start + Micros(4800)));
    }

    #[test]
    fn plan_agrees_with_frames_per_slot() {
        let phy = PhyParams::default().with_host_delay(Micros(300));
        for so in 0..6 {
            let cfg = SuperframeConfig::with_orders(so, so).unwrap();
            for psdu in [12usize, 40, 90, 127] {
                for acked in [false, true] {
                    let k = frames_per_slot(psdu, acked, &cfg, &phy).unwrap();
                    let plan = plan_gts_transfer(Micros(0), cfg.slot_duration(), 1000, psdu, acked, &phy).unwrap();
                    assert_eq!(plan.len() as u64, k);
                    assert!(plan.iter().all(|x| x.ack_end.unwrap_or(x.data_end) <= cfg.slot_duration()));
                }
            }
        }
    }

    #[test]
    fn queue_limits_the_plan() {
        let phy = PhyParams::default();
        let plan = plan_gts_transfer(Micros(0), Micros(100_000), 2, 20, false, &phy).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[1].start, Micros(832));
    }
}
