//! Scenario loading, workload execution, history recording, metrics and
//! the run checkers.

pub mod checkers;
pub mod history;
pub mod metrics;
pub mod runtime;
pub mod scenario;
pub mod sweep;

pub use checkers::{
    check_convergence, check_serializable, check_staleness, BoundViolation, CheckError,
    ConvergenceReport, SerializabilityReport,
};
pub use history::{load_history, parse_history, render_history, History};
pub use metrics::{compute_metrics, render_metrics, Metrics};
pub use runtime::{run_scenario, RunOutput, Runtime};
pub use scenario::{load_scenario, parse_scenario, render_scenario, Scenario, ScenarioError, WorkloadOp};
pub use sweep::{render_sweep, sweep, SweepTable};

#[cfg(test)]
mod tests;
