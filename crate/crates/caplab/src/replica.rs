//! Per-node datastore of named replicated registers.
//!
//! Every node holds a local replica of each register it participates in.
//! Local updates touch only the local replica; replicas repair divergence
//! by exchanging full states and merging (anti-entropy), or by pulling the
//! primary's state (the refresh path used by staleness/latency policies).
//!
//! `last_sync` tracks, per replica and peer, the last time a completed
//! state exchange finished. A replica's *age* is the time since its last
//! completed sync with the register's primary: the primary is the origin
//! of truth for freshness, so the primary itself (and a single-replica
//! register) always reads at age 0. Exchanges between two non-primary
//! replicas converge state but do not reset age.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::lattice::{LatticeKind, LatticeValue, ObservableValue, UpdateOp};
use crate::policy::Policy;
use crate::simnet::NodeId;

/// Opaque register name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegisterId(String);

impl RegisterId {
    pub fn new(name: impl Into<String>) -> RegisterId {
        RegisterId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

/// Declaration of a register: its value kind, where it lives, and the
/// synchronization policy it starts under.
#[derive(Clone, Debug, PartialEq)]
pub struct RegisterDecl {
    pub id: RegisterId,
    pub kind: LatticeKind,
    pub primary: NodeId,
    pub replicas: BTreeSet<NodeId>,
    pub policy: Policy,
}

/// One node's copy of one register.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaState {
    pub value: LatticeValue,
    /// peer -> time of the last completed state exchange with that peer
    pub last_sync: BTreeMap<NodeId, u64>,
}

impl ReplicaState {
    fn new(kind: LatticeKind) -> ReplicaState {
        ReplicaState { value: LatticeValue::bottom(kind), last_sync: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplicaError {
    #[error("unknown register {0}")]
    UnknownRegister(RegisterId),
    #[error("node {node} is not a replica of {reg}")]
    NotAReplica { node: NodeId, reg: RegisterId },
    #[error("invalid op on {reg}: {detail}")]
    InvalidOp { reg: RegisterId, detail: String },
}

/// All register declarations plus every node's replicas.
pub struct Datastore {
    decls: BTreeMap<RegisterId, RegisterDecl>,
    // indexed by node; each maps register -> replica state
    nodes: Vec<BTreeMap<RegisterId, ReplicaState>>,
}

impl Datastore {
    pub fn new(nodes: u32, decls: impl IntoIterator<Item = RegisterDecl>) -> Datastore {
        let mut store = Datastore {
            decls: BTreeMap::new(),
            nodes: vec![BTreeMap::new(); nodes as usize],
        };
        for decl in decls {
            for node in &decl.replicas {
                store.nodes[node.0 as usize]
                    .insert(decl.id.clone(), ReplicaState::new(decl.kind));
            }
            store.decls.insert(decl.id.clone(), decl);
        }
        store
    }

    pub fn decl(&self, reg: &RegisterId) -> Result<&RegisterDecl, ReplicaError> {
        self.decls.get(reg).ok_or_else(|| ReplicaError::UnknownRegister(reg.clone()))
    }

    pub fn decls(&self) -> impl Iterator<Item = &RegisterDecl> {
        self.decls.values()
    }

    pub fn replica(&self, node: NodeId, reg: &RegisterId) -> Result<&ReplicaState, ReplicaError> {
        self.decl(reg)?;
        self.nodes[node.0 as usize]
            .get(reg)
            .ok_or_else(|| ReplicaError::NotAReplica { node, reg: reg.clone() })
    }

    fn replica_mut(&mut self, node: NodeId, reg: &RegisterId) -> Result<&mut ReplicaState, ReplicaError> {
        self.decl(reg)?;
        self.nodes[node.0 as usize]
            .get_mut(reg)
            .ok_or_else(|| ReplicaError::NotAReplica { node, reg: reg.clone() })
    }

    /// Applies an inflationary update to the local replica only; no
    /// network activity. Returns the new state.
    ///
    /// `actor` identifies the logical updater. Direct local writes pass the
    /// node itself; transaction commits pass the coordinator, so every
    /// replica of a fully-synchronized register derives identical tags
    /// from identical pre-states.
    pub fn local_update(
        &mut self,
        node: NodeId,
        reg: &RegisterId,
        op: &UpdateOp,
        actor: crate::lattice::ActorId,
    ) -> Result<LatticeValue, ReplicaError> {
        let state = self.replica_mut(node, reg)?;
        let updated = state
            .value
            .update(op, actor)
            .map_err(|e| ReplicaError::InvalidOp { reg: reg.clone(), detail: e.to_string() })?;
        state.value = updated.clone();
        Ok(updated)
    }

    /// Observable value plus age at `node`. Age is 0 at the primary and
    /// for single-replica registers.
    pub fn local_read(
        &self,
        node: NodeId,
        reg: &RegisterId,
        now: u64,
    ) -> Result<(ObservableValue, u64), ReplicaError> {
        let age = self.age(node, reg, now)?;
        let state = self.replica(node, reg)?;
        Ok((state.value.query(), age))
    }

    /// Time since the last completed sync with the register's primary.
    pub fn age(&self, node: NodeId, reg: &RegisterId, now: u64) -> Result<u64, ReplicaError> {
        let decl = self.decl(reg)?;
        let state = self.replica(node, reg)?;
        if decl.primary == node || decl.replicas.len() == 1 {
            return Ok(0);
        }
        let last = state.last_sync.get(&decl.primary).copied().unwrap_or(0);
        Ok(now.saturating_sub(last))
    }

    /// Merges an incoming state into the local replica (monotone: the
    /// result is the join, never an overwrite). Returns the new state.
    pub fn merge_in(
        &mut self,
        node: NodeId,
        reg: &RegisterId,
        incoming: &LatticeValue,
    ) -> Result<LatticeValue, ReplicaError> {
        let state = self.replica_mut(node, reg)?;
        let merged = state
            .value
            .merge(incoming)
            .map_err(|e| ReplicaError::InvalidOp { reg: reg.clone(), detail: e.to_string() })?;
        state.value = merged.clone();
        Ok(merged)
    }

    /// Records a completed state exchange with `peer` at time `t`.
    pub fn mark_sync(&mut self, node: NodeId, reg: &RegisterId, peer: NodeId, t: u64) {
        if let Ok(state) = self.replica_mut(node, reg) {
            let entry = state.last_sync.entry(peer).or_insert(0);
            *entry = (*entry).max(t);
        }
    }

    /// Current states at `node` for the given registers.
    pub fn states_at(
        &self,
        node: NodeId,
        regs: impl IntoIterator<Item = RegisterId>,
    ) -> Vec<(RegisterId, LatticeValue)> {
        regs.into_iter()
            .filter_map(|reg| {
                self.nodes[node.0 as usize]
                    .get(&reg)
                    .map(|state| (reg, state.value.clone()))
            })
            .collect()
    }

    /// Registers shared by both nodes that propagate via anti-entropy.
    /// Registers under the fully-synchronized policy are excluded: their
    /// replicas change only by transaction commits, and folding in merged
    /// states from elsewhere would re-apply effects a commit already
    /// delivered.
    pub fn gossipable_shared(
        &self,
        a: NodeId,
        b: NodeId,
        policies: &BTreeMap<RegisterId, Policy>,
    ) -> Vec<RegisterId> {
        self.decls
            .values()
            .filter(|d| d.replicas.contains(&a) && d.replicas.contains(&b))
            .filter(|d| {
                !matches!(
                    policies.get(&d.id).unwrap_or(&d.policy),
                    Policy::Austere(_)
                )
            })
            .map(|d| d.id.clone())
            .collect()
    }

    /// Every (node, register, state) triple, for final-state reporting.
    pub fn all_states(&self) -> Vec<(NodeId, RegisterId, LatticeValue)> {
        let mut out = Vec::new();
        for decl in self.decls.values() {
            for node in &decl.replicas {
                if let Some(state) = self.nodes[node.0 as usize].get(&decl.id) {
                    out.push((*node, decl.id.clone(), state.value.clone()));
                }
            }
        }
        out
    }
}

/// Anti-entropy and refresh traffic.
#[derive(Clone, Debug, PartialEq)]
pub enum SyncMsg {
    /// Initiator's states for the session's registers.
    SyncRequest { session: u64, states: Vec<(RegisterId, LatticeValue)> },
    /// Responder's (post-merge) states back to the initiator.
    SyncReply { session: u64, states: Vec<(RegisterId, LatticeValue)> },
    /// One-shot pull of the primary's state.
    PullRequest { req: u64, reg: RegisterId },
    PullReply { req: u64, reg: RegisterId, state: LatticeValue },
}

impl fmt::Display for SyncMsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let render_states = |states: &[(RegisterId, LatticeValue)]| {
            let parts: Vec<String> = states.iter().map(|(r, v)| format!("{r}={v}")).collect();
            parts.join(";")
        };
        match self {
            SyncMsg::SyncRequest { session, states } => {
                write!(f, "SYNC_REQ(session={session},{})", render_states(states))
            }
            SyncMsg::SyncReply { session, states } => {
                write!(f, "SYNC_REPLY(session={session},{})", render_states(states))
            }
            SyncMsg::PullRequest { req, reg } => write!(f, "PULL_REQ(req={req},reg={reg})"),
            SyncMsg::PullReply { req, reg, state } => {
                write!(f, "PULL_REPLY(req={req},reg={reg},state={state})")
            }
        }
    }
}
