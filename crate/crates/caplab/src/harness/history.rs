//! Recorded run history: per-operation records, served-read samples,
//! committed transactions, final replica states and the update log —
//! everything the checkers need, in one sectioned tab-separated file.
//!
//! Sections and column orders (tab-separated, `-` for absent):
//!
//! ```text
//! [ops]     index  at_ms  node  policy  outcome  value  response_ms  net_wait_ms  max_age_ms  program
//! [reads]   op  reg  node  age_ms  waited_ms  served_at  staleness_bound  latency_bound
//! [txns]    txn  coordinator  committed_ms  ops
//! [states]  node  reg  state
//! [updates] at_ms  node  reg  state_after
//! ```
//!
//! `[txns]` ops are `;`-joined `R(reg)=<observable>` and `W(reg)<-<op>`
//! entries in transaction order. Lattice states render canonically, so the
//! file round-trips exactly.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::lattice::{
    parse_lattice_value, parse_update_op, LatticeValue, ObservableValue, UpdateOp,
};
use crate::replica::RegisterId;
use crate::simnet::NodeId;
use crate::txn::TxnId;

#[derive(Clone, Debug, PartialEq)]
pub enum OutcomeRecord {
    Completed { value: String },
    Blocked { reason: String },
    Failed { label: String },
}

impl OutcomeRecord {
    fn render(&self) -> String {
        match self {
            OutcomeRecord::Completed { .. } => "completed".to_string(),
            OutcomeRecord::Blocked { reason } => format!("blocked:{reason}"),
            OutcomeRecord::Failed { label } => format!("failed:{label}"),
        }
    }
}

/// One workload operation's fate.
#[derive(Clone, Debug, PartialEq)]
pub struct OpRecord {
    pub index: usize,
    pub at: u64,
    pub node: NodeId,
    /// Policy label in force at invocation ("-" for register-free ops).
    pub policy: String,
    pub outcome: OutcomeRecord,
    pub response_ms: Option<u64>,
    pub net_wait_ms: Option<u64>,
    pub max_age_ms: Option<u64>,
    pub program: String,
}

impl OpRecord {
    pub fn is_completed(&self) -> bool {
        matches!(self.outcome, OutcomeRecord::Completed { .. })
    }

    /// Available = completed within the per-op deadline (or at all, when
    /// no deadline was set).
    pub fn is_available(&self, deadline_ms: Option<u64>) -> bool {
        match (&self.outcome, self.response_ms) {
            (OutcomeRecord::Completed { .. }, Some(response)) => {
                deadline_ms.is_none_or(|d| response <= d)
            }
            _ => false,
        }
    }
}

/// One served read of one register (audit unit for staleness/latency).
#[derive(Clone, Debug, PartialEq)]
pub struct ReadSample {
    pub op_index: usize,
    pub reg: RegisterId,
    pub node: NodeId,
    pub age_ms: u64,
    pub waited_ms: u64,
    pub served_at: u64,
    pub staleness_bound: Option<u64>,
    pub latency_bound: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TxnOpRecord {
    Read { reg: RegisterId, observed: ObservableValue },
    Write { reg: RegisterId, op: UpdateOp },
}

/// One committed transaction.
#[derive(Clone, Debug, PartialEq)]
pub struct TxnRecord {
    pub txn: TxnId,
    pub coordinator: NodeId,
    pub committed_ms: u64,
    pub ops: Vec<TxnOpRecord>,
}

/// One local update's resulting state (its delta, in state-based terms).
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    pub at: u64,
    pub node: NodeId,
    pub reg: RegisterId,
    pub state_after: LatticeValue,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub ops: Vec<OpRecord>,
    pub reads: Vec<ReadSample>,
    pub txns: Vec<TxnRecord>,
    pub states: Vec<(NodeId, RegisterId, LatticeValue)>,
    pub updates: Vec<UpdateRecord>,
}

fn opt(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |n| n.to_string())
}

pub fn render_history(h: &History) -> String {
    let mut out = String::from("# caplab history v1\n");
    out.push_str("[ops]\n");
    for op in &h.ops {
        let value = match &op.outcome {
            OutcomeRecord::Completed { value } => value.clone(),
            _ => "-".to_string(),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            op.index,
            op.at,
            op.node,
            op.policy,
            op.outcome.render(),
            value,
            opt(op.response_ms),
            opt(op.net_wait_ms),
            opt(op.max_age_ms),
            op.program,
        ));
    }
    out.push_str("[reads]\n");
    for r in &h.reads {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.op_index,
            r.reg,
            r.node,
            r.age_ms,
            r.waited_ms,
            r.served_at,
            opt(r.staleness_bound),
            opt(r.latency_bound),
        ));
    }
    out.push_str("[txns]\n");
    for t in &h.txns {
        let ops: Vec<String> = t
            .ops
            .iter()
            .map(|op| match op {
                TxnOpRecord::Read { reg, observed } => format!("R({reg})={}", observed.render()),
                TxnOpRecord::Write { reg, op } => format!("W({reg})<-{op}"),
            })
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            t.txn, t.coordinator, t.committed_ms,
            if ops.is_empty() { "-".to_string() } else { ops.join(";") },
        ));
    }
    out.push_str("[states]\n");
    for (node, reg, state) in &h.states {
        out.push_str(&format!("{node}\t{reg}\t{state}\n"));
    }
    out.push_str("[updates]\n");
    for u in &h.updates {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", u.at, u.node, u.reg, u.state_after));
    }
    out
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_history(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("history line {line}: {msg}")]
pub struct HistoryParseError {
    pub line: usize,
    pub msg: String,
}

fn herr<T>(line: usize, msg: impl Into<String>) -> Result<T, HistoryParseError> {
    Err(HistoryParseError { line, msg: msg.into() })
}

fn parse_opt(line: usize, what: &str, s: &str) -> Result<Option<u64>, HistoryParseError> {
    if s == "-" {
        return Ok(None);
    }
    match s.parse() {
        Ok(n) => Ok(Some(n)),
        Err(_) => herr(line, format!("bad {what}: {s:?}")),
    }
}

fn parse_req(line: usize, what: &str, s: &str) -> Result<u64, HistoryParseError> {
    s.parse().map_err(|_| HistoryParseError { line, msg: format!("bad {what}: {s:?}") })
}

pub fn load_history(path: impl AsRef<Path>) -> Result<History, HistoryParseError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| HistoryParseError { line: 0, msg: format!("{}: {e}", path.as_ref().display()) })?;
    parse_history(&text)
}

pub fn parse_history(text: &str) -> Result<History, HistoryParseError> {
    let mut h = History::default();
    let mut section = String::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = ix + 1;
        let content = raw.trim_end();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.to_string();
            continue;
        }
        let fields: Vec<&str> = content.split('\t').collect();
        match section.as_str() {
            "ops" => {
                if fields.len() != 10 {
                    return herr(line, format!("[ops] expects 10 columns, got {}", fields.len()));
                }
                let outcome = match fields[4] {
                    "completed" => OutcomeRecord::Completed { value: fields[5].to_string() },
                    s if s.starts_with("blocked:") => {
                        OutcomeRecord::Blocked { reason: s["blocked:".len()..].to_string() }
                    }
                    s if s.starts_with("failed:") => {
                        OutcomeRecord::Failed { label: s["failed:".len()..].to_string() }
                    }
                    other => return herr(line, format!("bad outcome {other:?}")),
                };
                h.ops.push(OpRecord {
                    index: parse_req(line, "index", fields[0])? as usize,
                    at: parse_req(line, "at", fields[1])?,
                    node: NodeId(parse_req(line, "node", fields[2])? as u32),
                    policy: fields[3].to_string(),
                    outcome,
                    response_ms: parse_opt(line, "response", fields[6])?,
                    net_wait_ms: parse_opt(line, "net_wait", fields[7])?,
                    max_age_ms: parse_opt(line, "max_age", fields[8])?,
                    program: fields[9].to_string(),
                });
            }
            "reads" => {
                if fields.len() != 8 {
                    return herr(line, format!("[reads] expects 8 columns, got {}", fields.len()));
                }
                h.reads.push(ReadSample {
                    op_index: parse_req(line, "op", fields[0])? as usize,
                    reg: RegisterId::new(fields[1]),
                    node: NodeId(parse_req(line, "node", fields[2])? as u32),
                    age_ms: parse_req(line, "age", fields[3])?,
                    waited_ms: parse_req(line, "waited", fields[4])?,
                    served_at: parse_req(line, "served_at", fields[5])?,
                    staleness_bound: parse_opt(line, "staleness_bound", fields[6])?,
                    latency_bound: parse_opt(line, "latency_bound", fields[7])?,
                });
            }
            "txns" => {
                if fields.len() != 4 {
                    return herr(line, format!("[txns] expects 4 columns, got {}", fields.len()));
                }
                let mut ops = Vec::new();
                if fields[3] != "-" {
                    for part in fields[3].split(';') {
                        if let Some(rest) = part.strip_prefix("R(") {
                            let Some((reg, obs)) = rest.split_once(")=") else {
                                return herr(line, format!("bad txn read {part:?}"));
                            };
                            let observed = ObservableValue::parse(obs)
                                .map_err(|e| HistoryParseError { line, msg: e.to_string() })?;
                            ops.push(TxnOpRecord::Read { reg: RegisterId::new(reg), observed });
                        } else if let Some(rest) = part.strip_prefix("W(") {
                            let Some((reg, op)) = rest.split_once(")<-") else {
                                return herr(line, format!("bad txn write {part:?}"));
                            };
                            let op = parse_update_op(op)
                                .map_err(|e| HistoryParseError { line, msg: e.to_string() })?;
                            ops.push(TxnOpRecord::Write { reg: RegisterId::new(reg), op });
                        } else {
                            return herr(line, format!("bad txn op {part:?}"));
                        }
                    }
                }
                h.txns.push(TxnRecord {
                    txn: TxnId(parse_req(line, "txn", fields[0])?),
                    coordinator: NodeId(parse_req(line, "coordinator", fields[1])? as u32),
                    committed_ms: parse_req(line, "committed", fields[2])?,
                    ops,
                });
            }
            "states" => {
                if fields.len() != 3 {
                    return herr(line, format!("[states] expects 3 columns, got {}", fields.len()));
                }
                let state = parse_lattice_value(fields[2])
                    .map_err(|e| HistoryParseError { line, msg: e.to_string() })?;
                h.states.push((
                    NodeId(parse_req(line, "node", fields[0])? as u32),
                    RegisterId::new(fields[1]),
                    state,
                ));
            }
            "updates" => {
                if fields.len() != 4 {
                    return herr(line, format!("[updates] expects 4 columns, got {}", fields.len()));
                }
                let state = parse_lattice_value(fields[3])
                    .map_err(|e| HistoryParseError { line, msg: e.to_string() })?;
                h.updates.push(UpdateRecord {
                    at: parse_req(line, "at", fields[0])?,
                    node: NodeId(parse_req(line, "node", fields[1])? as u32),
                    reg: RegisterId::new(fields[2]),
                    state_after: state,
                });
            }
            other => return herr(line, format!("data before a known section (in {other:?})")),
        }
    }
    Ok(h)
}
