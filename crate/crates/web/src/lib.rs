//! Browser bindings for the demo page in `www/`.
//!
//! Each export returns a JSON string; the `*_json` functions hold the logic
//! and are plain Rust so they can be tested natively.

use std::collections::BTreeSet;

use detmac::harness::{parse_scenario, run_scenario, TraceOutcome};
use detmac::ids::{NodeId, StarId};
use detmac::protocol::FrameKind;
use detmac::schedule::{
    occupancy, AllocKind, Admission, Direction, Interference, Request, ScheduleConfig, ScheduleCycle,
};
use detmac::timing::{exchange_time, frame_airtime, frames_per_slot, Micros, PhyParams, SuperframeConfig};
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn timing(bo: u8, so: u8, psdu: usize, acked: bool, host_delay_us: u32, n_max: u8) -> Result<String, JsValue> {
    to_js(timing_json(bo, so, psdu, acked, host_delay_us, n_max))
}

#[wasm_bindgen]
pub fn schedule(request: &str) -> Result<String, JsValue> {
    to_js(schedule_json(request))
}

#[wasm_bindgen]
pub fn hidden_coordinators(gbs: bool, seed: u32, superframes: u32) -> Result<String, JsValue> {
    to_js(hidden_json(gbs, u64::from(seed), superframes))
}

pub fn timing_json(bo: u8, so: u8, psdu: usize, acked: bool, host_delay_us: u32, n_max: u8) -> Result<String, String> {
    let sf = SuperframeConfig::with_orders(bo, so).map_err(|e| e.to_string())?;
    let phy = PhyParams::default().with_host_delay(Micros(u64::from(host_delay_us)));
    let airtime = frame_airtime(psdu, &phy).map_err(|e| e.to_string())?;
    let exchange = exchange_time(psdu, acked, &phy).map_err(|e| e.to_string())?;
    let k = frames_per_slot(psdu, acked, &sf, &phy).map_err(|e| e.to_string())?;
    let bi = sf.beacon_interval();
    let per_level: Vec<Value> = (0..=n_max.min(10))
        .map(|level| {
            let bps = (k * psdu as u64 * 8) as f64 / bi.as_secs_f64() / f64::from(1u32 << level);
            json!({ "level": level, "period": 1u32 << level, "bps": bps })
        })
        .collect();
    Ok(json!({
        "beacon_interval_us": bi.as_u64(),
        "active_us": sf.active_portion().as_u64(),
        "slot_us": sf.slot_duration().as_u64(),
        "cap_slots": [sf.cap_slots().start, sf.cap_slots().end],
        "reservable_slots": [sf.reservable_slots().start, sf.reservable_slots().end],
        "airtime_us": airtime.as_u64(),
        "exchange_us": exchange.as_u64(),
        "frames_per_slot": k,
        "levels": per_level,
    })
    .to_string())
}

#[derive(Deserialize)]
struct ScheduleInput {
    #[serde(default = "default_n_max")]
    n_max: u8,
    #[serde(default)]
    interfere: Vec<(u16, u16)>,
    requests: Vec<StarRequest>,
}

#[derive(Deserialize)]
struct StarRequest {
    star: u16,
    level: u8,
}

fn default_n_max() -> u8 {
    3
}

/// Admits `requests` in order on a BO=SO=3 superframe and returns every
/// decision with the resulting slot-by-superframe grid.
pub fn schedule_json(request: &str) -> Result<String, String> {
    let input: ScheduleInput = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let sf = SuperframeConfig::with_orders(3, 3).map_err(|e| e.to_string())?;
    let cfg = ScheduleConfig { n_max: input.n_max, ..ScheduleConfig::for_superframe(&sf) };
    let rel = Interference::from_pairs(input.interfere.iter().map(|&(a, b)| (StarId(a), StarId(b))));
    let mut cycle = ScheduleCycle::new(cfg, rel).map_err(|e| e.to_string())?;
    let stars: BTreeSet<u16> = input.requests.iter().map(|r| r.star).collect();
    for &s in &stars {
        cycle.register_star(StarId(s), NodeId(s)).map_err(|e| e.to_string())?;
    }
    let mut decisions = Vec::new();
    for (i, r) in input.requests.iter().enumerate() {
        let owner = NodeId(1000 + i as u16);
        cycle.register_node(StarId(r.star), owner).map_err(|e| e.to_string())?;
        let req = Request {
            kind: AllocKind::Gts,
            owner,
            star: StarId(r.star),
            level: r.level,
            direction: Direction::ToCoordinator,
        };
        decisions.push(match cycle.admit(req, 0).map_err(|e| e.to_string())? {
            Admission::Granted(a) => json!({ "request": i, "granted": true, "slot": a.slot, "phase": a.phase }),
            Admission::Refused(why) => json!({ "request": i, "granted": false, "reason": why.to_string() }),
        });
    }
    let occ = occupancy(&cycle);
    let mut grid = Vec::new();
    for k in 0..cycle.horizon() {
        let row: Vec<Value> = cycle
            .config()
            .reservable_slots()
            .map(|slot| {
                let cell: Vec<Value> = stars
                    .iter()
                    .filter_map(|&s| {
                        occ.owner(k, slot, StarId(s)).map(|o| json!({ "star": s, "request": o.0.saturating_sub(1000) }))
                    })
                    .collect();
                Value::Array(cell)
            })
            .collect();
        grid.push(row);
    }
    Ok(json!({
        "horizon": cycle.horizon(),
        "slots": [cycle.config().reservable_slots().start, cycle.config().reservable_slots().end],
        "decisions": decisions,
        "grid": grid,
        "double_occupied": occ.double_occupied().len(),
    })
    .to_string())
}

/// Two coordinators that cannot hear each other and a node that hears both.
pub fn hidden_json(gbs: bool, seed: u64, superframes: u32) -> Result<String, String> {
    let superframes = superframes.clamp(1, 2000);
    let text = format!(
        "[pan]\nname=hidden\nbo=2\nso=2\nduration={superframes}\narbitration={}\n\
         [star 1]\ngbs_level=1\n[star 2]\ngbs_level=1\n[node 3]\nstar=1\n\
         [links]\nrange = 0-1 0-2 1-3 2-3\ninterfere = 1-2\n",
        if gbs { "pan" } else { "none" }
    );
    let s = parse_scenario(&text).map_err(|e| e.to_string())?;
    let out = run_scenario(&s, seed).map_err(|e| e.to_string())?;
    let beacons: Vec<Value> = out
        .trace
        .iter()
        .filter(|r| matches!(r.kind, FrameKind::Beacon | FrameKind::Superbeacon) && r.src != NodeId(0))
        .take(64)
        .map(|r| {
            json!({
                "time_us": r.time.as_u64(),
                "star": r.src.0,
                "superframe": r.superframe,
                "ok": r.outcome == TraceOutcome::Ok,
            })
        })
        .collect();
    Ok(json!({
        "superframes": superframes,
        "collisions_at_node": out.global.beacon_collisions.get(&NodeId(3)).copied().unwrap_or(0),
        "beacons_sent": out.global.beacons_sent,
        "beacons": beacons,
    })
    .to_string())
}
