//! Run metrics, derived purely from the recorded history plus the state
//! mutation log.

use std::collections::BTreeMap;
use std::fmt;

use crate::lattice::LatticeValue;
use crate::replica::RegisterId;
use crate::simnet::NodeId;

use super::history::History;
use super::scenario::Scenario;

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub ops_total: u64,
    pub ops_available: u64,
    /// ops_available / ops_total (1.0 for an empty workload).
    pub availability: f64,
    pub ops_completed: u64,
    pub latency_mean_ms: f64,
    pub latency_max_ms: u64,
    /// Availability per policy label, over the ops invoked under it.
    pub per_policy: BTreeMap<String, PolicyAvailability>,
    /// Max served age per register, over all served reads.
    pub max_age: BTreeMap<RegisterId, u64>,
    /// Time from the last update to all-replica equality; None if the run
    /// ended with divergent replicas.
    pub convergence_ms: Option<u64>,
    /// Messages actually delivered to live nodes.
    pub messages_delivered: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyAvailability {
    pub total: u64,
    pub available: u64,
}

impl PolicyAvailability {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.available as f64 / self.total as f64
        }
    }
}

/// A state change at one replica, in processing order.
pub type Mutation = (u64, NodeId, RegisterId, LatticeValue);

pub fn compute_metrics(
    scenario: &Scenario,
    history: &History,
    mutations: &[Mutation],
    messages_delivered: u64,
) -> Metrics {
    let mut available = 0u64;
    let mut completed = 0u64;
    let mut latency_sum = 0u64;
    let mut latency_max = 0u64;
    let mut per_policy: BTreeMap<String, PolicyAvailability> = BTreeMap::new();

    for op in &history.ops {
        let deadline = scenario.workload.get(op.index).and_then(|w| w.deadline_ms);
        let ok = op.is_available(deadline);
        if ok {
            available += 1;
        }
        if let Some(response) = op.response_ms.filter(|_| op.is_completed()) {
            completed += 1;
            latency_sum += response;
            latency_max = latency_max.max(response);
        }
        let slot = per_policy
            .entry(op.policy.clone())
            .or_insert(PolicyAvailability { total: 0, available: 0 });
        slot.total += 1;
        if ok {
            slot.available += 1;
        }
    }

    let mut max_age: BTreeMap<RegisterId, u64> = BTreeMap::new();
    for read in &history.reads {
        let slot = max_age.entry(read.reg.clone()).or_insert(0);
        *slot = (*slot).max(read.age_ms);
    }

    let total = history.ops.len() as u64;
    Metrics {
        ops_total: total,
        ops_available: available,
        availability: if total == 0 { 1.0 } else { available as f64 / total as f64 },
        ops_completed: completed,
        latency_mean_ms: if completed == 0 { 0.0 } else { latency_sum as f64 / completed as f64 },
        latency_max_ms: latency_max,
        per_policy,
        max_age,
        convergence_ms: convergence_time(scenario, history, mutations),
        messages_delivered,
    }
}

/// Replays the mutation log and finds the last moment the system switched
/// from divergent to all-replicas-equal, measured from the last update.
fn convergence_time(scenario: &Scenario, history: &History, mutations: &[Mutation]) -> Option<u64> {
    // replica states, all starting at bottom
    let mut states: BTreeMap<(NodeId, RegisterId), LatticeValue> = BTreeMap::new();
    let mut replicas_of: BTreeMap<RegisterId, Vec<NodeId>> = BTreeMap::new();
    for decl in &scenario.registers {
        for node in &decl.replicas {
            states.insert((*node, decl.id.clone()), LatticeValue::bottom(decl.kind));
        }
        replicas_of.insert(decl.id.clone(), decl.replicas.iter().copied().collect());
    }

    let reg_equal = |states: &BTreeMap<(NodeId, RegisterId), LatticeValue>, reg: &RegisterId| {
        let nodes = &replicas_of[reg];
        let mut iter = nodes.iter().map(|n| &states[&(*n, reg.clone())]);
        let first = iter.next();
        first.is_none_or(|f| iter.all(|s| s == f))
    };

    let mut unequal: BTreeMap<RegisterId, bool> = BTreeMap::new();
    let mut unequal_count = 0usize;
    let mut converged_at = 0u64;
    for (at, node, reg, state) in mutations {
        states.insert((*node, reg.clone()), state.clone());
        let now_unequal = !reg_equal(&states, reg);
        let was_unequal = unequal.insert(reg.clone(), now_unequal).unwrap_or(false);
        match (was_unequal, now_unequal) {
            (false, true) => unequal_count += 1,
            (true, false) => {
                unequal_count -= 1;
                if unequal_count == 0 {
                    converged_at = *at;
                }
            }
            _ => {}
        }
    }
    if unequal_count > 0 {
        return None;
    }
    let last_update = history.updates.iter().map(|u| u.at).max().unwrap_or(0);
    Some(converged_at.saturating_sub(last_update))
}

/// Fixed key order, then per-policy and per-register keys in name order.
pub fn render_metrics(m: &Metrics) -> String {
    let mut out = String::from("# caplab metrics v1\n");
    out.push_str(&format!("ops_total\t{}\n", m.ops_total));
    out.push_str(&format!("ops_available\t{}\n", m.ops_available));
    out.push_str(&format!("availability\t{:.6}\n", m.availability));
    out.push_str(&format!("ops_completed\t{}\n", m.ops_completed));
    out.push_str(&format!("latency_mean_ms\t{:.6}\n", m.latency_mean_ms));
    out.push_str(&format!("latency_max_ms\t{}\n", m.latency_max_ms));
    out.push_str(&format!("messages_delivered\t{}\n", m.messages_delivered));
    match m.convergence_ms {
        Some(ms) => out.push_str(&format!("convergence_ms\t{ms}\n")),
        None => out.push_str("convergence_ms\t-\n"),
    }
    for (label, pa) in &m.per_policy {
        out.push_str(&format!(
            "availability.{label}\t{:.6}\t{}/{}\n",
            pa.fraction(),
            pa.available,
            pa.total
        ));
    }
    for (reg, age) in &m.max_age {
        out.push_str(&format!("max_age.{reg}\t{age}\n"));
    }
    out
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_metrics(self))
    }
}
