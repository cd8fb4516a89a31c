//! Scenario files, the simulation driver, metrics and experiment presets.

pub mod experiments;
pub mod metrics;
pub mod scenario;
pub mod setup;
pub mod sim;
pub mod validate;

pub use metrics::{csv_string, write_csv, FlowMetrics, Row, CSV_HEADER};
pub use scenario::{parse_scenario, Arbitration, Issue, NodeSpec, Scenario, ScenarioError, StarSpec};
pub use setup::{build_network, Network};
pub use sim::{run_scenario, GlobalMetrics, SimOutput, TraceOutcome, TraceRecord};
pub use validate::{validate_schedule, ValidationReport};

impl SimOutput {
    /// One CSV row per flow, in declaration order.
    pub fn rows(&self) -> Vec<Row> {
        self.scenario.flows.iter().zip(&self.flows).map(|(f, m)| Row::from_flow(&self.scenario, f, m)).collect()
    }

    pub fn csv(&self) -> String {
        csv_string(&self.rows())
    }
}
