//! Scenario files: a line-oriented sectioned text format describing one
//! experiment.
//!
//! ```text
//! # comments start with '#'
//! [nodes]
//! count=3
//!
//! [links]
//! latency=fixed:5          # or uniform:MIN:MAX
//! drop=0.0
//!
//! [registers]
//! register r1 kind=gcounter primary=0 replicas=0,1,2 policy=lasp
//! register r2 kind=orset primary=1 replicas=0,1,2 policy=spry staleness=100 latency=30
//!
//! [workload]
//! at=20 node=0 deadline=50 prog=(store r1 (inc))
//! at=52 node=1 prog=(deref r1)
//!
//! [faults]
//! at=100 partition 0|1,2
//! at=300 heal
//! at=150 crash 2
//! at=250 recover 2
//!
//! [run]
//! horizon=500
//! seed=7
//! gossip=50                # optional; omit for no background sync
//! ```
//!
//! Register kinds: `gcounter pncounter gset twopset orset lww`. Policies:
//! `lasp`, `austere mode=pure|measured deadline=MS`,
//! `spry staleness=MS latency=MS` (either spry field may be omitted, not
//! both).

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::kernel::{sexpr, Expr, StoreOp};
use crate::lattice::LatticeKind;
use crate::policy::{AustereMode, Policy};
use crate::replica::{RegisterDecl, RegisterId};
use crate::simnet::{Fault, Latency, LinkModel, NodeId, PartitionConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadOp {
    pub at: u64,
    pub node: NodeId,
    pub deadline_ms: Option<u64>,
    pub program: Expr,
    pub source: String,
}

impl WorkloadOp {
    /// Builds an op from program source (programmatic scenarios).
    pub fn new(
        at: u64,
        node: NodeId,
        deadline_ms: Option<u64>,
        src: &str,
    ) -> Result<WorkloadOp, ScenarioError> {
        let program = sexpr::parse(src)
            .map_err(|e| ScenarioError::Parse { line: 0, msg: e.to_string() })?;
        Ok(WorkloadOp { at, node, deadline_ms, program, source: src.to_string() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub nodes: u32,
    pub link: LinkModel,
    pub registers: Vec<RegisterDecl>,
    pub workload: Vec<WorkloadOp>,
    pub faults: Vec<(u64, Fault)>,
    pub horizon: u64,
    pub seed: u64,
    pub gossip_period: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("cannot read scenario: {0}")]
    Io(String),
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Parse { line, msg: msg.into() })
}

fn verr<T>(line: usize, msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation { line, msg: msg.into() })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_scenario(&text)
}

/// `key=value` split helper.
fn kv<'a>(token: &'a str, key: &str) -> Option<&'a str> {
    token.strip_prefix(key)?.strip_prefix('=')
}

fn parse_u64(line: usize, what: &str, s: &str) -> Result<u64, ScenarioError> {
    s.parse().map_err(|_| ScenarioError::Parse { line, msg: format!("bad {what}: {s:?}") })
}

fn parse_node(line: usize, s: &str) -> Result<NodeId, ScenarioError> {
    Ok(NodeId(parse_u64(line, "node id", s)? as u32))
}

fn parse_node_list(line: usize, s: &str) -> Result<BTreeSet<NodeId>, ScenarioError> {
    let mut out = BTreeSet::new();
    for part in s.split(',') {
        out.insert(parse_node(line, part)?);
    }
    Ok(out)
}

pub fn parse_policy_spec(line: usize, spec: &str) -> Result<Policy, ScenarioError> {
    let tokens: Vec<&str> = spec.split_whitespace().collect();
    let policy = match tokens.first() {
        Some(&"lasp") if tokens.len() == 1 => Policy::Lasp,
        Some(&"lasp") => return perr(line, "lasp takes no parameters"),
        Some(&"austere") => {
            let mut mode = None;
            let mut deadline = None;
            for token in &tokens[1..] {
                if let Some(m) = kv(token, "mode") {
                    mode = Some(m.to_string());
                } else if let Some(d) = kv(token, "deadline") {
                    deadline = Some(parse_u64(line, "deadline", d)?);
                } else {
                    return perr(line, format!("unknown austere parameter {token:?}"));
                }
            }
            match (mode.as_deref(), deadline) {
                (Some("pure") | None, None) => Policy::Austere(AustereMode::Pure),
                (Some("measured"), Some(deadline_ms)) => {
                    Policy::Austere(AustereMode::Measured { deadline_ms })
                }
                (Some("measured"), None) => {
                    return perr(line, "austere mode=measured needs deadline=MS");
                }
                (Some("pure") | None, Some(_)) => {
                    return perr(line, "austere mode=pure takes no deadline");
                }
                (Some(other), _) => return perr(line, format!("unknown austere mode {other:?}")),
            }
        }
        Some(&"spry") => {
            let mut staleness = None;
            let mut latency = None;
            for token in &tokens[1..] {
                if let Some(s) = kv(token, "staleness") {
                    staleness = Some(parse_u64(line, "staleness", s)?);
                } else if let Some(l) = kv(token, "latency") {
                    latency = Some(parse_u64(line, "latency", l)?);
                } else {
                    return perr(line, format!("unknown spry parameter {token:?}"));
                }
            }
            Policy::Spry { max_staleness_ms: staleness, latency_bound_ms: latency }
        }
        Some(other) => return perr(line, format!("unknown policy {other:?}")),
        None => return perr(line, "empty policy"),
    };
    policy
        .validate()
        .map_err(|e| ScenarioError::Validation { line, msg: e.to_string() })?;
    Ok(policy)
}

fn parse_register_line(line: usize, rest: &str) -> Result<RegisterDecl, ScenarioError> {
    // register <id> kind=<kind> primary=<node> replicas=<list> policy=<spec>
    let (head, policy_spec) = match rest.split_once("policy=") {
        Some((head, spec)) => (head, spec.trim()),
        None => return perr(line, "register line needs policy=..."),
    };
    let tokens: Vec<&str> = head.split_whitespace().collect();
    let id = match tokens.first() {
        Some(id) if !id.contains('=') => RegisterId::new(*id),
        _ => return perr(line, "register line needs a register id"),
    };
    let mut kind = None;
    let mut primary = None;
    let mut replicas = None;
    for token in &tokens[1..] {
        if let Some(k) = kv(token, "kind") {
            kind = Some(
                LatticeKind::parse(k)
                    .ok_or(ScenarioError::Parse { line, msg: format!("unknown kind {k:?}") })?,
            );
        } else if let Some(p) = kv(token, "primary") {
            primary = Some(parse_node(line, p)?);
        } else if let Some(r) = kv(token, "replicas") {
            replicas = Some(parse_node_list(line, r)?);
        } else {
            return perr(line, format!("unknown register parameter {token:?}"));
        }
    }
    let (Some(kind), Some(primary), Some(replicas)) = (kind, primary, replicas) else {
        return perr(line, "register line needs kind=, primary= and replicas=");
    };
    Ok(RegisterDecl { id, kind, primary, replicas, policy: parse_policy_spec(line, policy_spec)? })
}

fn parse_workload_line(line: usize, text: &str) -> Result<WorkloadOp, ScenarioError> {
    let (head, prog_src) = match text.split_once("prog=") {
        Some((head, src)) => (head, src.trim()),
        None => return perr(line, "workload line needs prog=..."),
    };
    let mut at = None;
    let mut node = None;
    let mut deadline = None;
    for token in head.split_whitespace() {
        if let Some(t) = kv(token, "at") {
            at = Some(parse_u64(line, "at", t)?);
        } else if let Some(n) = kv(token, "node") {
            node = Some(parse_node(line, n)?);
        } else if let Some(d) = kv(token, "deadline") {
            deadline = Some(parse_u64(line, "deadline", d)?);
        } else {
            return perr(line, format!("unknown workload parameter {token:?}"));
        }
    }
    let (Some(at), Some(node)) = (at, node) else {
        return perr(line, "workload line needs at= and node=");
    };
    let program = sexpr::parse(prog_src)
        .map_err(|e| ScenarioError::Parse { line, msg: e.to_string() })?;
    Ok(WorkloadOp { at, node, deadline_ms: deadline, program, source: prog_src.to_string() })
}

fn parse_fault_line(line: usize, text: &str) -> Result<(u64, Fault), ScenarioError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let at = match tokens.first().and_then(|t| kv(t, "at")) {
        Some(t) => parse_u64(line, "at", t)?,
        None => return perr(line, "fault line needs at=MS first"),
    };
    let fault = match tokens.get(1) {
        Some(&"partition") => {
            let spec = match tokens.get(2) {
                Some(s) if tokens.len() == 3 => s,
                _ => return perr(line, "partition needs one group spec like 0|1,2"),
            };
            let mut groups = Vec::new();
            for group in spec.split('|') {
                groups.push(parse_node_list(line, group)?);
            }
            Fault::Partition(PartitionConfig::new(groups))
        }
        Some(&"heal") if tokens.len() == 2 => Fault::Heal,
        Some(&"crash") => match tokens.get(2) {
            Some(n) if tokens.len() == 3 => Fault::Crash(parse_node(line, n)?),
            _ => return perr(line, "crash needs a node id"),
        },
        Some(&"recover") => match tokens.get(2) {
            Some(n) if tokens.len() == 3 => Fault::Recover(parse_node(line, n)?),
            _ => return perr(line, "recover needs a node id"),
        },
        Some(other) => return perr(line, format!("unknown fault {other:?}")),
        None => return perr(line, "fault line needs a fault kind"),
    };
    Ok((at, fault))
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        Nodes,
        Links,
        Registers,
        Workload,
        Faults,
        Run,
    }

    let mut section = Section::None;
    let mut nodes = None;
    let mut latency = None;
    let mut drop_prob = 0.0f64;
    let mut registers: Vec<(usize, RegisterDecl)> = Vec::new();
    let mut workload: Vec<(usize, WorkloadOp)> = Vec::new();
    let mut faults: Vec<(usize, (u64, Fault))> = Vec::new();
    let mut horizon = None;
    let mut seed = None;
    let mut gossip = None;

    for (ix, raw) in text.lines().enumerate() {
        let line = ix + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name {
                "nodes" => Section::Nodes,
                "links" => Section::Links,
                "registers" => Section::Registers,
                "workload" => Section::Workload,
                "faults" => Section::Faults,
                "run" => Section::Run,
                other => return perr(line, format!("unknown section [{other}]")),
            };
            continue;
        }
        match section {
            Section::None => return perr(line, "declaration before any section header"),
            Section::Nodes => match kv(content, "count") {
                Some(n) => nodes = Some(parse_u64(line, "count", n)? as u32),
                None => return perr(line, "expected count=N"),
            },
            Section::Links => {
                if let Some(spec) = kv(content, "latency") {
                    let parts: Vec<&str> = spec.split(':').collect();
                    latency = Some(match parts.as_slice() {
                        ["fixed", ms] => Latency::Fixed(parse_u64(line, "latency", ms)?),
                        ["uniform", min, max] => Latency::Uniform {
                            min_ms: parse_u64(line, "latency", min)?,
                            max_ms: parse_u64(line, "latency", max)?,
                        },
                        _ => return perr(line, format!("bad latency spec {spec:?}")),
                    });
                } else if let Some(p) = kv(content, "drop") {
                    drop_prob = p
                        .parse()
                        .map_err(|_| ScenarioError::Parse { line, msg: format!("bad drop {p:?}") })?;
                } else {
                    return perr(line, "expected latency=... or drop=...");
                }
            }
            Section::Registers => match content.strip_prefix("register ") {
                Some(rest) => registers.push((line, parse_register_line(line, rest)?)),
                None => return perr(line, "expected register <id> ..."),
            },
            Section::Workload => workload.push((line, parse_workload_line(line, content)?)),
            Section::Faults => faults.push((line, parse_fault_line(line, content)?)),
            Section::Run => {
                if let Some(h) = kv(content, "horizon") {
                    horizon = Some(parse_u64(line, "horizon", h)?);
                } else if let Some(s) = kv(content, "seed") {
                    seed = Some(parse_u64(line, "seed", s)?);
                } else if let Some(g) = kv(content, "gossip") {
                    gossip = Some(parse_u64(line, "gossip", g)?);
                } else {
                    return perr(line, "expected horizon=, seed= or gossip=");
                }
            }
        }
    }

    let nodes = nodes.ok_or(ScenarioError::Validation { line: 0, msg: "missing [nodes] count".into() })?;
    let horizon = horizon.ok_or(ScenarioError::Validation { line: 0, msg: "missing [run] horizon".into() })?;
    let scenario = Scenario {
        nodes,
        link: LinkModel { latency: latency.unwrap_or(Latency::Fixed(0)), drop_prob },
        registers: registers.iter().map(|(_, r)| r.clone()).collect(),
        workload: workload.iter().map(|(_, w)| w.clone()).collect(),
        faults: faults.iter().map(|(_, f)| f.clone()).collect(),
        horizon,
        seed: seed.unwrap_or(0),
        gossip_period: gossip,
    };
    validate(
        &scenario,
        &registers.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
        &workload.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
        &faults.iter().map(|(l, _)| *l).collect::<Vec<_>>(),
    )?;
    Ok(scenario)
}

/// Validates a programmatically constructed scenario (file loads validate
/// on parse).
pub fn validate_scenario(scenario: &Scenario) -> Result<(), ScenarioError> {
    validate(
        scenario,
        &vec![0; scenario.registers.len()],
        &vec![0; scenario.workload.len()],
        &vec![0; scenario.faults.len()],
    )
}

/// Store-op/kind compatibility, checkable statically.
fn store_op_fits(kind: LatticeKind, op: &StoreOp) -> bool {
    matches!(
        (kind, op),
        (LatticeKind::GCounter, StoreOp::Inc)
            | (LatticeKind::PnCounter, StoreOp::Inc)
            | (LatticeKind::PnCounter, StoreOp::Dec)
            | (LatticeKind::GSet, StoreOp::Add(_))
            | (LatticeKind::TwoPSet, StoreOp::Add(_))
            | (LatticeKind::TwoPSet, StoreOp::Remove(_))
            | (LatticeKind::OrSet, StoreOp::Add(_))
            | (LatticeKind::OrSet, StoreOp::Remove(_))
            | (LatticeKind::LwwRegister, StoreOp::Assign(_))
    )
}

fn validate(
    scenario: &Scenario,
    register_lines: &[usize],
    workload_lines: &[usize],
    fault_lines: &[usize],
) -> Result<(), ScenarioError> {
    if scenario.nodes == 0 {
        return verr(0, "need at least one node");
    }
    scenario
        .link
        .validate()
        .map_err(|e| ScenarioError::Validation { line: 0, msg: e.to_string() })?;
    if scenario.gossip_period == Some(0) {
        return verr(0, "gossip period must be > 0");
    }

    let mut ids = BTreeSet::new();
    for (decl, &line) in scenario.registers.iter().zip(register_lines) {
        if !ids.insert(decl.id.clone()) {
            return verr(line, format!("duplicate register {}", decl.id));
        }
        for node in &decl.replicas {
            if node.0 >= scenario.nodes {
                return verr(line, format!("replica node {node} out of range"));
            }
        }
        if !decl.replicas.contains(&decl.primary) {
            return verr(line, format!("primary {} must be a replica", decl.primary));
        }
    }

    let decl_of = |id: &RegisterId| scenario.registers.iter().find(|d| &d.id == id);
    for (op, &line) in scenario.workload.iter().zip(workload_lines) {
        if op.node.0 >= scenario.nodes {
            return verr(line, format!("workload node {} out of range", op.node));
        }
        if op.at > scenario.horizon {
            return verr(line, format!("workload time {} is past the horizon", op.at));
        }
        for reg in op.program.register_refs() {
            let Some(decl) = decl_of(&reg) else {
                return verr(line, format!("workload references undeclared register {reg}"));
            };
            if !decl.replicas.contains(&op.node) {
                return verr(
                    line,
                    format!("node {} is not a replica of {reg}", op.node),
                );
            }
        }
        validate_store_ops(&op.program, &decl_of, line)?;
    }

    for ((at, fault), &line) in scenario.faults.iter().zip(fault_lines) {
        if *at > scenario.horizon {
            return verr(line, format!("fault time {at} is past the horizon"));
        }
        match fault {
            Fault::Partition(cfg) => cfg
                .validate(scenario.nodes)
                .map_err(|e| ScenarioError::Validation { line, msg: e.to_string() })?,
            Fault::Crash(n) | Fault::Recover(n) => {
                if n.0 >= scenario.nodes {
                    return verr(line, format!("fault node {n} out of range"));
                }
            }
            Fault::Heal => {}
        }
    }
    Ok(())
}

fn validate_store_ops<'a>(
    expr: &Expr,
    decl_of: &impl Fn(&RegisterId) -> Option<&'a RegisterDecl>,
    line: usize,
) -> Result<(), ScenarioError> {
    match expr {
        Expr::Store(reg, op) => {
            if let Some(decl) = decl_of(reg) {
                if !store_op_fits(decl.kind, op) {
                    return verr(line, format!("op {op} is invalid for {} register {reg}", decl.kind));
                }
            }
            Ok(())
        }
        Expr::Lam(_, body) => validate_store_ops(body, decl_of, line),
        Expr::App(f, x) => {
            validate_store_ops(f, decl_of, line)?;
            validate_store_ops(x, decl_of, line)
        }
        Expr::Prim(_, args) => {
            for arg in args {
                validate_store_ops(arg, decl_of, line)?;
            }
            Ok(())
        }
        Expr::Var(_) | Expr::Lit(_) | Expr::Deref(_) => Ok(()),
    }
}

/// Renders a scenario back to file syntax (used by the sweep driver to
/// derive variants).
pub fn render_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    out.push_str("[nodes]\n");
    out.push_str(&format!("count={}\n\n", s.nodes));
    out.push_str("[links]\n");
    match s.link.latency {
        Latency::Fixed(ms) => out.push_str(&format!("latency=fixed:{ms}\n")),
        Latency::Uniform { min_ms, max_ms } => {
            out.push_str(&format!("latency=uniform:{min_ms}:{max_ms}\n"))
        }
    }
    out.push_str(&format!("drop={}\n\n", s.link.drop_prob));
    out.push_str("[registers]\n");
    for decl in &s.registers {
        let replicas: Vec<String> = decl.replicas.iter().map(|n| n.to_string()).collect();
        out.push_str(&format!(
            "register {} kind={} primary={} replicas={} policy={}\n",
            decl.id,
            decl.kind,
            decl.primary,
            replicas.join(","),
            decl.policy
        ));
    }
    out.push_str("\n[workload]\n");
    for op in &s.workload {
        let deadline = op
            .deadline_ms
            .map_or(String::new(), |d| format!(" deadline={d}"));
        out.push_str(&format!("at={} node={}{} prog={}\n", op.at, op.node, deadline, op.source));
    }
    out.push_str("\n[faults]\n");
    for (at, fault) in &s.faults {
        let rendered = match fault {
            Fault::Partition(cfg) => {
                let groups: Vec<String> = cfg
                    .groups
                    .iter()
                    .map(|g| {
                        g.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
                    })
                    .collect();
                format!("partition {}", groups.join("|"))
            }
            Fault::Heal => "heal".to_string(),
            Fault::Crash(n) => format!("crash {n}"),
            Fault::Recover(n) => format!("recover {n}"),
        };
        out.push_str(&format!("at={at} {rendered}\n"));
    }
    out.push_str("\n[run]\n");
    out.push_str(&format!("horizon={}\n", s.horizon));
    out.push_str(&format!("seed={}\n", s.seed));
    if let Some(g) = s.gossip_period {
        out.push_str(&format!("gossip={g}\n"));
    }
    out
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_scenario(self))
    }
}
