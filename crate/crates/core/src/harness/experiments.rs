//! Preset sweeps: analytic throughput versus PSDU, single-GTS throughput
//! versus beacon order, and GTS isolation under growing contention.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::metrics::Row;
use super::scenario::{NodeSpec, Scenario};
use super::sim::run_scenario;
use crate::ids::{FlowId, NodeId, StarId};
use crate::protocol::frame::MIN_DATA_PSDU;
use crate::protocol::{FlowMode, FlowSpec, Load};
use crate::schedule::ScheduleError;
use crate::timing::{calibrate_host_delay, frames_per_slot, unconstrained_throughput, PhyParams, SuperframeConfig};

pub const FIG4_TARGET_BPS: f64 = 120_000.0;
pub const FIG7_CONTENDERS: [u32; 7] = [0, 1, 2, 4, 8, 16, 32];
/// Superframes simulated per point: the warm-up cycle plus 256 measured.
pub const FIG6_SUPERFRAMES: u64 = 16 + 256;

fn map_points<T, R, F>(points: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        points.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.into_iter().map(f).collect()
    }
}

pub fn sort_rows(rows: &mut [Row]) {
    rows.sort_by(|a, b| {
        (&a.scenario, a.bo, a.so, a.contenders, a.psdu, a.acked, &a.flow_id)
            .cmp(&(&b.scenario, b.bo, b.so, b.contenders, b.psdu, b.acked, &b.flow_id))
    });
}

/// Host delay that brings the 127-byte unconstrained throughput down to
/// [`FIG4_TARGET_BPS`].
pub fn calibrated_phy() -> PhyParams {
    let phy = PhyParams::default();
    let delay = calibrate_host_delay(FIG4_TARGET_BPS, phy.max_psdu_bytes, &phy).expect("127 is a valid PSDU");
    phy.with_host_delay(delay)
}

pub fn fig4_psdus() -> Vec<usize> {
    let mut v: Vec<usize> = (8..=120).step_by(8).collect();
    v.push(127);
    v
}

fn analytic_row(scenario: &str, psdu: usize, phy: &PhyParams) -> Row {
    let bps = unconstrained_throughput(psdu, phy).expect("sampled PSDUs are valid");
    Row {
        scenario: scenario.to_string(),
        flow_id: "analytic".to_string(),
        bo: 0,
        so: 0,
        mode: "unconstrained".to_string(),
        level: None,
        psdu,
        acked: false,
        contenders: 0,
        offered_bps: bps,
        delivered_bps: bps,
        mean_latency_us: None,
        max_latency_us: None,
        sent: 0,
        delivered: 0,
        dropped: 0,
        collisions: 0,
    }
}

/// Unconstrained throughput per PSDU, with the calibrated and the zero host delay.
pub fn fig4() -> Vec<Row> {
    let calibrated = calibrated_phy();
    let ideal = PhyParams::default();
    let mut rows = Vec::new();
    for psdu in fig4_psdus() {
        rows.push(analytic_row("fig4-calibrated", psdu, &calibrated));
        rows.push(analytic_row("fig4-ideal", psdu, &ideal));
    }
    sort_rows(&mut rows);
    rows
}

/// PSDU maximising payload per slot; ties go to the larger frame.
pub fn best_psdu(sf: &SuperframeConfig, acked: bool, phy: &PhyParams) -> (usize, u64) {
    (MIN_DATA_PSDU..=phy.max_psdu_bytes)
        .map(|p| (p, frames_per_slot(p, acked, sf, phy).expect("valid PSDU")))
        .max_by_key(|&(p, k)| (k * p as u64, p))
        .expect("non-empty range")
}

/// One node, one saturating level-0 GTS flow to the PAN coordinator.
pub fn single_gts_scenario(bo: u8, so: u8, psdu: usize, acked: bool, level: u8) -> Scenario {
    let sf = SuperframeConfig::with_orders(bo, so).expect("orders within range");
    let mut s = Scenario::new(&format!("fig6-{}", if acked { "acked" } else { "unacked" }), sf, PhyParams::default());
    s.duration = FIG6_SUPERFRAMES;
    s.nodes.push(NodeSpec { id: NodeId(1), star: StarId(0), associated: true, pds_level: None });
    s.flows.push(FlowSpec {
        id: FlowId(1),
        src: NodeId(1),
        dst: NodeId(0),
        psdu,
        acked,
        mode: FlowMode::Gts { level },
        load: Load::Saturate,
    });
    s
}

#[derive(Debug, Clone)]
pub struct Fig6Point {
    pub bo: u8,
    pub acked: bool,
    pub psdu: usize,
    pub frames_per_slot: u64,
    /// k·psdu·8 / BI.
    pub analytic_bps: f64,
    /// One frame's payload spread over the measurement window.
    pub tolerance_bps: f64,
    pub row: Row,
}

pub fn fig6_points(seed: u64) -> Result<Vec<Fig6Point>, ScheduleError> {
    let phy = PhyParams::default();
    let mut points = Vec::new();
    for bo in 0..=8u8 {
        for acked in [true, false] {
            points.push((bo, acked));
        }
    }
    let out = map_points(points, |(bo, acked)| -> Result<Fig6Point, ScheduleError> {
        let sf = SuperframeConfig::with_orders(bo, bo).expect("orders within range");
        let (psdu, k) = best_psdu(&sf, acked, &phy);
        let s = single_gts_scenario(bo, bo, psdu, acked, 0);
        let sim = run_scenario(&s, seed)?;
        let bi = sf.beacon_interval().as_secs_f64();
        let span = (sim.window.1 - sim.window.0).as_secs_f64();
        let row = Row::from_flow(&s, &s.flows[0], &sim.flows[0]);
        Ok(Fig6Point {
            bo,
            acked,
            psdu,
            frames_per_slot: k,
            analytic_bps: (k * psdu as u64 * 8) as f64 / bi,
            tolerance_bps: (psdu * 8) as f64 / span,
            row,
        })
    });
    out.into_iter().collect()
}

pub fn fig6(seed: u64) -> Result<Vec<Row>, ScheduleError> {
    let mut rows: Vec<Row> = fig6_points(seed)?.into_iter().map(|p| p.row).collect();
    sort_rows(&mut rows);
    Ok(rows)
}

/// A dedicated-slot reference flow plus `contenders` saturating CAP stations.
pub fn contention_scenario(contenders: u32) -> Scenario {
    let sf = SuperframeConfig::with_orders(3, 3).expect("orders within range");
    let mut s = Scenario::new("fig7", sf, PhyParams::default());
    s.contenders = Some(contenders);
    s.nodes.push(NodeSpec { id: NodeId(1), star: StarId(0), associated: true, pds_level: None });
    s.flows.push(FlowSpec {
        id: FlowId(1),
        src: NodeId(1),
        dst: NodeId(0),
        psdu: 127,
        acked: true,
        mode: FlowMode::Pds { level: 0 },
        load: Load::Saturate,
    });
    for i in 0..contenders {
        let id = NodeId(2 + i as u16);
        s.nodes.push(NodeSpec { id, star: StarId(0), associated: true, pds_level: None });
        s.flows.push(FlowSpec {
            id: FlowId(2 + i),
            src: id,
            dst: NodeId(0),
            psdu: 127,
            acked: true,
            mode: FlowMode::Cap,
            load: Load::Saturate,
        });
    }
    s
}

#[derive(Debug, Clone)]
pub struct Fig7Point {
    pub contenders: u32,
    pub reference: Row,
    pub aggregate: Row,
}

pub fn fig7_points(seed: u64) -> Result<Vec<Fig7Point>, ScheduleError> {
    let out = map_points(FIG7_CONTENDERS.to_vec(), |c| -> Result<Fig7Point, ScheduleError> {
        let s = contention_scenario(c);
        let sim = run_scenario(&s, seed)?;
        let reference = Row::from_flow(&s, &s.flows[0], &sim.flows[0]);
        let cap: Vec<_> = s.flows.iter().zip(&sim.flows).filter(|(f, _)| f.mode == FlowMode::Cap).collect();
        let window_deliveries: Vec<f64> = cap.iter().map(|(f, m)| m.delivered_bits as f64 / (f.psdu * 8) as f64).collect();
        let weight: f64 = window_deliveries.iter().sum();
        let mean = (weight > 0.0).then(|| {
            cap.iter()
                .zip(&window_deliveries)
                .map(|((_, m), w)| m.mean_latency_us.unwrap_or(0.0) * w)
                .sum::<f64>()
                / weight
        });
        let aggregate = Row {
            scenario: s.name.clone(),
            flow_id: "cap-aggregate".to_string(),
            bo: s.mac.sf.bo,
            so: s.mac.sf.so,
            mode: "cap".to_string(),
            level: None,
            psdu: 127,
            acked: true,
            contenders: c,
            offered_bps: cap.iter().map(|(_, m)| m.offered_bps).sum(),
            delivered_bps: cap.iter().map(|(_, m)| m.delivered_bps).sum(),
            mean_latency_us: mean,
            max_latency_us: cap.iter().filter_map(|(_, m)| m.max_latency_us).max(),
            sent: cap.iter().map(|(_, m)| m.sent).sum(),
            delivered: cap.iter().map(|(_, m)| m.delivered).sum(),
            dropped: cap.iter().map(|(_, m)| m.dropped).sum(),
            collisions: cap.iter().map(|(_, m)| m.collisions).sum(),
        };
        Ok(Fig7Point { contenders: c, reference, aggregate })
    });
    out.into_iter().collect()
}

pub fn fig7(seed: u64) -> Result<Vec<Row>, ScheduleError> {
    let mut rows = Vec::new();
    for p in fig7_points(seed)? {
        rows.push(p.reference);
        rows.push(p.aggregate);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig4_has_both_curves_over_all_sizes() {
        let rows = fig4();
        assert_eq!(rows.len(), 2 * fig4_psdus().len());
        let ideal = rows.iter().find(|r| r.scenario == "fig4-ideal" && r.psdu == 127).unwrap();
        assert!((ideal.delivered_bps - 238_721.8).abs() < 1.0, "{}", ideal.delivered_bps);
    }

    #[test]
    fn best_psdu_at_bo0_acked_carries_nothing() {
        let sf = SuperframeConfig::with_orders(0, 0).unwrap();
        assert_eq!(best_psdu(&sf, true, &PhyParams::default()).1, 0);
    }

    #[test]
    fn best_psdu_maximises_payload_per_slot() {
        let phy = PhyParams::default();
        for bo in 0..=8 {
            let sf = SuperframeConfig::with_orders(bo, bo).unwrap();
            for acked in [true, false] {
                let (p, k) = best_psdu(&sf, acked, &phy);
                for q in MIN_DATA_PSDU..=127 {
                    assert!(frames_per_slot(q, acked, &sf, &phy).unwrap() * q as u64 <= k * p as u64);
                }
            }
        }
    }
}
