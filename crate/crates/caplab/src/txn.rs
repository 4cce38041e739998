//! Strict two-phase locking across all replicas plus two-phase commit.
//!
//! A transaction is an ordered list of reads and writes over registers. The
//! coordinator acquires one lock per (register, replica) pair, walking the
//! pairs in ascending `(register, node)` order with a single outstanding
//! request at a time — a total order on lock acquisition, so no cycle of
//! waiting transactions can form. Locks are held until the decision
//! (strict 2PL). Once every lock is granted the coordinator runs the
//! prepare/vote round; a unanimous yes commits, anything else aborts.
//! Decision messages are retried until acknowledged, and participants
//! apply each decision at most once, keyed by transaction id.
//!
//! The module owns the protocol *state*: the per-node lock table and the
//! coordinator bookkeeping. Actually sending messages, applying writes and
//! waking waiters is the runtime's job; methods here return what became
//! possible (newly granted requests, phase transitions) and the runtime
//! acts on it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::lattice::{ObservableValue, UpdateOp};
use crate::replica::RegisterId;
use crate::simnet::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LockMode {
    Shared,
    Exclusive,
}

impl LockMode {
    fn symbol(self) -> &'static str {
        match self {
            LockMode::Shared => "S",
            LockMode::Exclusive => "X",
        }
    }
}

/// One step of a transaction. Write ops carry the already-resolved update
/// (actor = coordinator, assign stamps frozen at submission) so every
/// replica applies bit-identical effects.
#[derive(Clone, Debug, PartialEq)]
pub enum TxnOp {
    Read(RegisterId),
    Write(RegisterId, UpdateOp),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TxnSpec {
    pub coordinator: NodeId,
    pub ops: Vec<TxnOp>,
}

impl TxnSpec {
    /// Registers touched, each with the strongest mode any op needs.
    pub fn lock_modes(&self) -> BTreeMap<RegisterId, LockMode> {
        let mut modes: BTreeMap<RegisterId, LockMode> = BTreeMap::new();
        for op in &self.ops {
            let (reg, mode) = match op {
                TxnOp::Read(reg) => (reg, LockMode::Shared),
                TxnOp::Write(reg, _) => (reg, LockMode::Exclusive),
            };
            let slot = modes.entry(reg.clone()).or_insert(LockMode::Shared);
            if matches!(mode, LockMode::Exclusive) {
                *slot = LockMode::Exclusive;
            }
        }
        modes
    }

    pub fn writes(&self) -> Vec<(RegisterId, UpdateOp)> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                TxnOp::Write(reg, update) => Some((reg.clone(), update.clone())),
                TxnOp::Read(_) => None,
            })
            .collect()
    }
}

/// Protocol messages; rendered canonically in traces.
#[derive(Clone, Debug, PartialEq)]
pub enum TxnMsg {
    Lock { txn: TxnId, reg: RegisterId, mode: LockMode },
    Grant { txn: TxnId, reg: RegisterId },
    Prepare { txn: TxnId, locks: Vec<(RegisterId, LockMode)> },
    Vote { txn: TxnId, yes: bool },
    Commit { txn: TxnId, writes: Vec<(RegisterId, UpdateOp)> },
    Abort { txn: TxnId },
    Ack { txn: TxnId },
}

impl fmt::Display for TxnMsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxnMsg::Lock { txn, reg, mode } => {
                write!(f, "LOCK(txn={txn},reg={reg},mode={})", mode.symbol())
            }
            TxnMsg::Grant { txn, reg } => write!(f, "GRANT(txn={txn},reg={reg})"),
            TxnMsg::Prepare { txn, .. } => write!(f, "PREPARE(txn={txn})"),
            TxnMsg::Vote { txn, yes } => write!(f, "VOTE(txn={txn},{})", if *yes { "yes" } else { "no" }),
            TxnMsg::Commit { txn, writes } => {
                let parts: Vec<String> = writes.iter().map(|(r, op)| format!("{r}<-{op}")).collect();
                write!(f, "COMMIT(txn={txn},{})", parts.join(";"))
            }
            TxnMsg::Abort { txn } => write!(f, "ABORT(txn={txn})"),
            TxnMsg::Ack { txn } => write!(f, "ACK(txn={txn})"),
        }
    }
}

/// A lock request waiting in (or granted from) a register's FIFO queue.
#[derive(Clone, Debug, PartialEq)]
pub struct LockRequest {
    pub txn: TxnId,
    pub mode: LockMode,
    pub coordinator: NodeId,
}

#[derive(Default, Debug)]
struct LockState {
    holders: BTreeMap<TxnId, LockMode>,
    queue: VecDeque<LockRequest>,
}

impl LockState {
    fn compatible(&self, mode: LockMode) -> bool {
        match mode {
            LockMode::Exclusive => self.holders.is_empty(),
            LockMode::Shared => self.holders.values().all(|m| matches!(m, LockMode::Shared)),
        }
    }
}

/// One node's lock table. Strict 2PL: locks leave only via `release_all`
/// at decision time.
#[derive(Default, Debug)]
pub struct LockTable {
    locks: BTreeMap<RegisterId, LockState>,
}

impl LockTable {
    /// Requests a lock. Returns true when granted immediately; otherwise
    /// the request joins the FIFO queue (re-requests by a txn already
    /// holding the lock are granted idempotently).
    pub fn request(&mut self, reg: &RegisterId, request: LockRequest) -> bool {
        let state = self.locks.entry(reg.clone()).or_default();
        if state.holders.contains_key(&request.txn) {
            return true;
        }
        if state.queue.is_empty() && state.compatible(request.mode) {
            state.holders.insert(request.txn, request.mode);
            true
        } else if state.queue.iter().any(|q| q.txn == request.txn) {
            false
        } else {
            state.queue.push_back(request);
            false
        }
    }

    /// Drops every lock and queued request of `txn`, returning the
    /// requests that became grantable (already inserted as holders).
    pub fn release_all(&mut self, txn: TxnId) -> Vec<(RegisterId, LockRequest)> {
        let mut granted = Vec::new();
        for (reg, state) in self.locks.iter_mut() {
            state.holders.remove(&txn);
            state.queue.retain(|q| q.txn != txn);
            while let Some(head) = state.queue.front() {
                if state.compatible(head.mode) {
                    let head = state.queue.pop_front().unwrap();
                    state.holders.insert(head.txn, head.mode);
                    granted.push((reg.clone(), head));
                } else {
                    break;
                }
            }
        }
        granted
    }

    pub fn holds(&self, reg: &RegisterId, txn: TxnId, mode: LockMode) -> bool {
        self.locks
            .get(reg)
            .and_then(|s| s.holders.get(&txn))
            .is_some_and(|m| *m == mode)
    }

    /// Test hook: forget a holder without granting anyone (simulates lock
    /// state loss, which must draw a NO vote).
    pub fn corrupt(&mut self, reg: &RegisterId, txn: TxnId) {
        if let Some(state) = self.locks.get_mut(reg) {
            state.holders.remove(&txn);
        }
    }

    pub fn held_by(&self, txn: TxnId) -> Vec<RegisterId> {
        self.locks
            .iter()
            .filter(|(_, s)| s.holders.contains_key(&txn))
            .map(|(r, _)| r.clone())
            .collect()
    }
}

/// Participant vote: yes iff every lock the transaction expects at this
/// node is actually held. Silence (a crashed node) is the third answer,
/// and the coordinator handles it by blocking or timing out per mode.
pub fn vote_on_prepare(
    table: &LockTable,
    txn: TxnId,
    expected: impl IntoIterator<Item = (RegisterId, LockMode)>,
) -> bool {
    expected.into_iter().all(|(reg, mode)| table.holds(&reg, txn, mode))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Phase {
    Locking,
    Preparing,
    Committed { at: u64 },
    Aborted { reason: String },
}

/// What the coordinator should do after recording a grant.
#[derive(Clone, Debug, PartialEq)]
pub enum LockProgress {
    /// Issue the next lock request in plan order.
    RequestNext { reg: RegisterId, node: NodeId, mode: LockMode },
    /// Every lock is held: snapshot reads and run the vote round.
    AllLocked,
}

/// What the coordinator should do after recording a vote.
#[derive(Clone, Debug, PartialEq)]
pub enum VoteProgress {
    Waiting,
    Commit,
    Abort,
}

/// Coordinator-side bookkeeping for one transaction.
pub struct Coordinator {
    pub id: TxnId,
    pub spec: TxnSpec,
    pub phase: Phase,
    pub started_at: u64,
    /// (register, replica, mode) in acquisition order.
    plan: Vec<(RegisterId, NodeId, LockMode)>,
    next_lock: usize,
    /// Replicas of every touched register.
    pub participants: BTreeSet<NodeId>,
    yes_votes: BTreeSet<NodeId>,
    /// Remote participants that have not acknowledged the decision.
    pub pending_acks: BTreeSet<NodeId>,
    /// Read observations snapshotted once all locks are held.
    pub reads: Vec<(RegisterId, ObservableValue)>,
    /// Measured-mode deadline, if any.
    pub deadline: Option<u64>,
}

impl Coordinator {
    pub fn new(
        id: TxnId,
        spec: TxnSpec,
        started_at: u64,
        replicas_of: impl Fn(&RegisterId) -> BTreeSet<NodeId>,
        deadline: Option<u64>,
    ) -> Coordinator {
        let mut plan = Vec::new();
        let mut participants = BTreeSet::new();
        for (reg, mode) in spec.lock_modes() {
            for node in replicas_of(&reg) {
                plan.push((reg.clone(), node, mode));
                participants.insert(node);
            }
        }
        // lock_modes iterates registers in ascending order and replica
        // sets are ordered, so the plan is already canonically sorted.
        Coordinator {
            id,
            spec,
            phase: Phase::Locking,
            started_at,
            plan,
            next_lock: 0,
            participants,
            yes_votes: BTreeSet::new(),
            pending_acks: BTreeSet::new(),
            reads: Vec::new(),
            deadline,
        }
    }

    /// The first lock request to issue (None for empty transactions).
    pub fn first_lock(&self) -> Option<(RegisterId, NodeId, LockMode)> {
        self.plan.first().cloned()
    }

    /// Records the grant of the outstanding request and reports what to do
    /// next. Stale grants (duplicates, aborted txn) report nothing.
    pub fn record_grant(&mut self, reg: &RegisterId, node: NodeId) -> Option<LockProgress> {
        if !matches!(self.phase, Phase::Locking) {
            return None;
        }
        match self.plan.get(self.next_lock) {
            Some((expect_reg, expect_node, _)) if expect_reg == reg && *expect_node == node => {
                self.next_lock += 1;
            }
            _ => return None,
        }
        match self.plan.get(self.next_lock) {
            Some((reg, node, mode)) => Some(LockProgress::RequestNext {
                reg: reg.clone(),
                node: *node,
                mode: *mode,
            }),
            None => {
                self.phase = Phase::Preparing;
                Some(LockProgress::AllLocked)
            }
        }
    }

    /// The lock set participants are expected to hold, for PREPARE.
    pub fn lock_manifest(&self) -> Vec<(RegisterId, LockMode)> {
        self.spec.lock_modes().into_iter().collect()
    }

    pub fn record_vote(&mut self, node: NodeId, yes: bool) -> VoteProgress {
        if !matches!(self.phase, Phase::Preparing) {
            return VoteProgress::Waiting;
        }
        if !yes {
            return VoteProgress::Abort;
        }
        self.yes_votes.insert(node);
        if self.yes_votes == self.participants {
            VoteProgress::Commit
        } else {
            VoteProgress::Waiting
        }
    }

    pub fn is_decided(&self) -> bool {
        matches!(self.phase, Phase::Committed { .. } | Phase::Aborted { .. })
    }
}
