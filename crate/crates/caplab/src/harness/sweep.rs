//! Parameter sweeps: run the same scenario at several values of one knob
//! and tabulate availability per policy alongside freshness and
//! convergence.

use thiserror::Error;

use crate::simnet::Fault;

use super::metrics::Metrics;
use super::runtime::run_scenario;
use super::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SweepError {
    #[error("unknown sweep parameter {0:?} (supported: partition-duration)")]
    UnknownParameter(String),
    #[error("scenario has no partition fault to vary")]
    NoPartition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: u64,
    pub availability_lasp: Option<f64>,
    pub availability_austere: Option<f64>,
    pub availability_spry: Option<f64>,
    pub max_age_ms: Option<u64>,
    pub convergence_ms: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

fn availability_of(metrics: &Metrics, label: &str) -> Option<f64> {
    metrics.per_policy.get(label).map(|pa| pa.fraction())
}

/// Reshapes the scenario so the first partition lasts exactly
/// `duration_ms`, replacing the first heal that follows it.
pub fn with_partition_duration(scenario: &Scenario, duration_ms: u64) -> Result<Scenario, SweepError> {
    let partition_at = scenario
        .faults
        .iter()
        .find(|(_, f)| matches!(f, Fault::Partition(_)))
        .map(|(at, _)| *at)
        .ok_or(SweepError::NoPartition)?;
    let mut out = scenario.clone();
    let mut removed = false;
    out.faults.retain(|(at, fault)| {
        if !removed && *at >= partition_at && matches!(fault, Fault::Heal) {
            removed = true;
            false
        } else {
            true
        }
    });
    out.faults.push((partition_at + duration_ms, Fault::Heal));
    Ok(out)
}

/// One run per value; each run is independently deterministic under the
/// scenario's seed.
pub fn sweep(scenario: &Scenario, parameter: &str, values: &[u64]) -> Result<SweepTable, SweepError> {
    if parameter != "partition-duration" {
        return Err(SweepError::UnknownParameter(parameter.to_string()));
    }
    let mut table = SweepTable { parameter: parameter.to_string(), rows: Vec::new() };
    for &value in values {
        let variant = with_partition_duration(scenario, value)?;
        let output = run_scenario(variant, None, None);
        let metrics = output.metrics;
        table.rows.push(SweepRow {
            value,
            availability_lasp: availability_of(&metrics, "lasp"),
            availability_austere: availability_of(&metrics, "austere"),
            availability_spry: availability_of(&metrics, "spry"),
            max_age_ms: metrics.max_age.values().max().copied(),
            convergence_ms: metrics.convergence_ms,
        });
    }
    Ok(table)
}

fn fmt_avail(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |f| format!("{f:.6}"))
}

fn fmt_ms(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |n| n.to_string())
}

pub fn render_sweep(table: &SweepTable) -> String {
    let mut out = format!("# caplab sweep {}\n", table.parameter);
    out.push_str("value\tavail_lasp\tavail_austere\tavail_spry\tmax_age_ms\tconvergence_ms\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            row.value,
            fmt_avail(row.availability_lasp),
            fmt_avail(row.availability_austere),
            fmt_avail(row.availability_spry),
            fmt_ms(row.max_age_ms),
            fmt_ms(row.convergence_ms),
        ));
    }
    out
}
