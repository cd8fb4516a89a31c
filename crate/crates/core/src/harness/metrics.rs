//! Per-flow statistics and the CSV row format.

use std::collections::BTreeSet;
use std::io;

use serde::Serialize;

use super::scenario::Scenario;
use super::sim::TimedNote;
use crate::ids::FlowId;
use crate::protocol::{FlowSpec, Load, Note};
use crate::timing::{unconstrained_throughput, Micros};

/// Counters cover the whole run; throughput and latency only the
/// measurement window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub flow: FlowId,
    pub sent: u64,
    pub delivered: u64,
    /// Given up after the retry limit and never delivered.
    pub dropped: u64,
    pub in_flight: u64,
    pub delivered_bits: u64,
    pub offered_bps: f64,
    pub delivered_bps: f64,
    pub mean_latency_us: Option<f64>,
    pub max_latency_us: Option<u64>,
    pub collisions: u64,
}

pub fn offered_bps(s: &Scenario, f: &FlowSpec) -> f64 {
    match f.load {
        Load::Saturate => unconstrained_throughput(f.psdu, &s.mac.phy).unwrap_or(0.0),
        Load::PerSuperframe(n) => (u64::from(n) * f.psdu as u64 * 8) as f64 / s.mac.sf.beacon_interval().as_secs_f64(),
    }
}

pub(crate) fn flow_metrics(
    s: &Scenario,
    f: &FlowSpec,
    notes: &[TimedNote],
    window: (Micros, Micros),
    collisions: u64,
) -> FlowMetrics {
    let mut sent = BTreeSet::new();
    let mut delivered = BTreeSet::new();
    let mut dropped = BTreeSet::new();
    let mut bits = 0u64;
    let mut latencies = Vec::new();
    for n in notes {
        match n.note {
            Note::DataSent { flow, seq } if flow == f.id => {
                sent.insert(seq);
            }
            Note::DataDropped { flow, seq } if flow == f.id => {
                dropped.insert(seq);
            }
            Note::DataDelivered { flow, seq, psdu, enqueued_at } if flow == f.id => {
                delivered.insert(seq);
                if n.time >= window.0 && n.time < window.1 {
                    bits += psdu as u64 * 8;
                    latencies.push((n.time - enqueued_at).as_u64());
                }
            }
            _ => {}
        }
    }
    let dropped = dropped.difference(&delivered).count() as u64;
    let sent_n = sent.len() as u64;
    let delivered_n = delivered.len() as u64;
    let span = (window.1 - window.0).as_secs_f64();
    FlowMetrics {
        flow: f.id,
        sent: sent_n,
        delivered: delivered_n,
        dropped,
        in_flight: sent_n.saturating_sub(delivered_n + dropped),
        delivered_bits: bits,
        offered_bps: offered_bps(s, f),
        delivered_bps: if span > 0.0 { bits as f64 / span } else { 0.0 },
        mean_latency_us: (!latencies.is_empty())
            .then(|| latencies.iter().sum::<u64>() as f64 / latencies.len() as f64),
        max_latency_us: latencies.iter().max().copied(),
        collisions,
    }
}

pub const CSV_HEADER: [&str; 17] = [
    "scenario",
    "flow_id",
    "bo",
    "so",
    "mode",
    "level",
    "psdu",
    "acked",
    "contenders",
    "offered_bps",
    "delivered_bps",
    "mean_latency_us",
    "max_latency_us",
    "sent",
    "delivered",
    "dropped",
    "collisions",
];

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub scenario: String,
    pub flow_id: String,
    pub bo: u8,
    pub so: u8,
    pub mode: String,
    pub level: Option<u8>,
    pub psdu: usize,
    pub acked: bool,
    pub contenders: u32,
    pub offered_bps: f64,
    pub delivered_bps: f64,
    pub mean_latency_us: Option<f64>,
    pub max_latency_us: Option<u64>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub collisions: u64,
}

impl Row {
    pub fn from_flow(s: &Scenario, f: &FlowSpec, m: &FlowMetrics) -> Self {
        Row {
            scenario: s.name.clone(),
            flow_id: f.id.to_string(),
            bo: s.mac.sf.bo,
            so: s.mac.sf.so,
            mode: f.mode.name().to_string(),
            level: f.mode.level(),
            psdu: f.psdu,
            acked: f.acked,
            contenders: s.contenders(),
            offered_bps: m.offered_bps,
            delivered_bps: m.delivered_bps,
            mean_latency_us: m.mean_latency_us,
            max_latency_us: m.max_latency_us,
            sent: m.sent,
            delivered: m.delivered,
            dropped: m.dropped,
            collisions: m.collisions,
        }
    }

    pub fn record(&self) -> [String; 17] {
        [
            self.scenario.clone(),
            self.flow_id.clone(),
            self.bo.to_string(),
            self.so.to_string(),
            self.mode.clone(),
            self.level.map(|l| l.to_string()).unwrap_or_default(),
            self.psdu.to_string(),
            self.acked.to_string(),
            self.contenders.to_string(),
            format!("{:.3}", self.offered_bps + 0.0),
            format!("{:.3}", self.delivered_bps + 0.0),
            self.mean_latency_us.map(|l| format!("{l:.1}")).unwrap_or_default(),
            self.max_latency_us.map(|l| l.to_string()).unwrap_or_default(),
            self.sent.to_string(),
            self.delivered.to_string(),
            self.dropped.to_string(),
            self.collisions.to_string(),
        ]
    }
}

pub fn write_csv<W: io::Write>(rows: &[Row], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[Row]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV fields are UTF-8")
}
