//! The three run auditors: convergence against a fold-merge oracle,
//! serializability of committed transactions by brute-force permutation
//! search, and the staleness/latency bound audit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::lattice::{ActorId, LatticeValue};
use crate::replica::RegisterId;
use crate::simnet::NodeId;
use crate::txn::TxnId;

use super::history::{History, TxnOpRecord};

// ---- convergence -------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceDiff {
    pub reg: RegisterId,
    pub node: NodeId,
    pub got: LatticeValue,
    pub want: LatticeValue,
}

impl fmt::Display for ConvergenceDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "register {} at node {}: got {}, oracle says {}",
            self.reg, self.node, self.got, self.want
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub pass: bool,
    pub diffs: Vec<ConvergenceDiff>,
}

/// Every replica state must equal the fold-merge of all update deltas for
/// its register (an update's delta is the issuing replica's post-update
/// state, which the history records).
pub fn check_convergence(history: &History) -> ConvergenceReport {
    let mut oracle: BTreeMap<RegisterId, LatticeValue> = BTreeMap::new();
    for (_, reg, state) in &history.states {
        oracle
            .entry(reg.clone())
            .or_insert_with(|| LatticeValue::bottom(state.kind()));
    }
    for update in &history.updates {
        if let Some(acc) = oracle.get_mut(&update.reg) {
            if let Ok(merged) = acc.merge(&update.state_after) {
                *acc = merged;
            }
        }
    }
    let mut diffs = Vec::new();
    for (node, reg, state) in &history.states {
        let want = &oracle[reg];
        if state != want {
            diffs.push(ConvergenceDiff {
                reg: reg.clone(),
                node: *node,
                got: state.clone(),
                want: want.clone(),
            });
        }
    }
    ConvergenceReport { pass: diffs.is_empty(), diffs }
}

// ---- serializability ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("too many committed transactions for brute force: {count} > {max}")]
    TooLarge { count: usize, max: usize },
    #[error("cannot check: {0}")]
    BadHistory(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SerializabilityReport {
    pub pass: bool,
    /// A commit order that sequentially explains the history, when found.
    pub witness: Option<Vec<TxnId>>,
}

pub const SERIALIZABILITY_MAX_TXNS: usize = 8;

/// Searches for a permutation of the committed transactions whose
/// sequential execution (from bottom states) reproduces every recorded
/// read and lands on the recorded final states of every touched register.
pub fn check_serializable(history: &History) -> Result<SerializabilityReport, CheckError> {
    let txns = &history.txns;
    if txns.len() > SERIALIZABILITY_MAX_TXNS {
        return Err(CheckError::TooLarge { count: txns.len(), max: SERIALIZABILITY_MAX_TXNS });
    }

    let mut touched: BTreeSet<RegisterId> = BTreeSet::new();
    for txn in txns {
        for op in &txn.ops {
            match op {
                TxnOpRecord::Read { reg, .. } | TxnOpRecord::Write { reg, .. } => {
                    touched.insert(reg.clone());
                }
            }
        }
    }

    // Kind and expected final state per touched register come from the
    // recorded replica states.
    let mut finals: BTreeMap<RegisterId, Vec<LatticeValue>> = BTreeMap::new();
    for (_, reg, state) in &history.states {
        if touched.contains(reg) {
            finals.entry(reg.clone()).or_default().push(state.clone());
        }
    }
    let mut initial: BTreeMap<RegisterId, LatticeValue> = BTreeMap::new();
    for reg in &touched {
        match finals.get(reg) {
            Some(states) => {
                initial.insert(reg.clone(), LatticeValue::bottom(states[0].kind()));
            }
            None => {
                return Err(CheckError::BadHistory(format!(
                    "no recorded final state for register {reg}"
                )));
            }
        }
    }

    fn replay_txn(
        state: &BTreeMap<RegisterId, LatticeValue>,
        txn: &super::history::TxnRecord,
    ) -> Option<BTreeMap<RegisterId, LatticeValue>> {
        let mut state = state.clone();
        for op in &txn.ops {
            match op {
                TxnOpRecord::Read { reg, observed } => {
                    if &state[reg].query() != observed {
                        return None;
                    }
                }
                TxnOpRecord::Write { reg, op } => {
                    let next = state[reg].update(op, ActorId(txn.coordinator.0)).ok()?;
                    state.insert(reg.clone(), next);
                }
            }
        }
        Some(state)
    }

    fn search(
        txns: &[super::history::TxnRecord],
        remaining: &mut Vec<usize>,
        order: &mut Vec<usize>,
        state: &BTreeMap<RegisterId, LatticeValue>,
        finals: &BTreeMap<RegisterId, Vec<LatticeValue>>,
    ) -> bool {
        if remaining.is_empty() {
            return finals
                .iter()
                .all(|(reg, states)| states.iter().all(|s| s == &state[reg]));
        }
        for ix in 0..remaining.len() {
            let candidate = remaining[ix];
            if let Some(next_state) = replay_txn(state, &txns[candidate]) {
                remaining.remove(ix);
                order.push(candidate);
                if search(txns, remaining, order, &next_state, finals) {
                    return true;
                }
                order.pop();
                remaining.insert(ix, candidate);
            }
        }
        false
    }

    let mut remaining: Vec<usize> = (0..txns.len()).collect();
    let mut order = Vec::new();
    let pass = search(txns, &mut remaining, &mut order, &initial, &finals);
    Ok(SerializabilityReport {
        pass,
        witness: pass.then(|| order.iter().map(|&ix| txns[ix].txn).collect()),
    })
}

// ---- staleness / latency audit ----------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum BoundKind {
    Staleness,
    Latency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundViolation {
    pub op_index: usize,
    pub reg: RegisterId,
    pub kind: BoundKind,
    pub observed_ms: u64,
    pub bound_ms: u64,
}

impl fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            BoundKind::Staleness => "served age",
            BoundKind::Latency => "wait",
        };
        write!(
            f,
            "op {} on {}: {what} {}ms exceeds bound {}ms",
            self.op_index, self.reg, self.observed_ms, self.bound_ms
        )
    }
}

/// Audits every served read against the bounds recorded with it. An empty
/// list means every bound held.
pub fn check_staleness(history: &History) -> Vec<BoundViolation> {
    let mut violations = Vec::new();
    for read in &history.reads {
        if let Some(bound) = read.staleness_bound {
            if read.age_ms > bound {
                violations.push(BoundViolation {
                    op_index: read.op_index,
                    reg: read.reg.clone(),
                    kind: BoundKind::Staleness,
                    observed_ms: read.age_ms,
                    bound_ms: bound,
                });
            }
        }
        if let Some(bound) = read.latency_bound {
            if read.waited_ms > bound {
                violations.push(BoundViolation {
                    op_index: read.op_index,
                    reg: read.reg.clone(),
                    kind: BoundKind::Latency,
                    observed_ms: read.waited_ms,
                    bound_ms: bound,
                });
            }
        }
    }
    violations
}
