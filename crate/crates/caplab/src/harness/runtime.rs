//! The run loop: drives workload programs through the kernel, interposes
//! policies at register accesses, executes the synchronization they ask
//! for on the simulated network, and records everything.
//!
//! All state transitions happen inside simulator event handlers on one
//! logical thread. Protocol steps between co-located parties (a
//! coordinator locking its own replica, applying its own commit) happen
//! synchronously without network messages; everything between distinct
//! nodes travels as simulated traffic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::kernel::{
    Access, BlockReason, EvalError, Machine, MachineState, Outcome, StoreOp, Value,
};
use crate::lattice::{ActorId, LatticeValue, ObservableValue, UpdateOp};
use crate::policy::{
    decide_on_deref, decide_on_store, AustereMode, Policy, PolicyTable, ResumePlan, SyncKind,
};
use crate::replica::{Datastore, RegisterId, ReplicaError, SyncMsg};
use crate::simnet::{Event, Fault, NodeId, Processed, Simulator, TimerTag};
use crate::txn::{
    vote_on_prepare, Coordinator, LockMode, LockProgress, LockRequest, LockTable, Phase, TxnId,
    TxnMsg, TxnOp, TxnSpec, VoteProgress,
};

use super::history::{
    History, OpRecord, OutcomeRecord, ReadSample, TxnOpRecord, TxnRecord, UpdateRecord,
};
use super::metrics::{compute_metrics, Metrics, Mutation};
use super::scenario::Scenario;

/// Everything that travels between nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Sync(SyncMsg),
    Txn(TxnMsg),
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Sync(m) => m.fmt(f),
            Payload::Txn(m) => m.fmt(f),
        }
    }
}

impl From<SyncMsg> for Payload {
    fn from(m: SyncMsg) -> Payload {
        Payload::Sync(m)
    }
}

impl From<TxnMsg> for Payload {
    fn from(m: TxnMsg) -> Payload {
        Payload::Txn(m)
    }
}

pub struct RunOutput {
    pub history: History,
    pub metrics: Metrics,
    pub trace: String,
    /// Every replica state change in processing order (updates, merges and
    /// transaction applications) — the raw series behind the convergence
    /// metric.
    pub state_log: Vec<Mutation>,
}

/// Why a suspended op is waiting and how to wake it.
enum Suspension {
    Txn { txn: TxnId },
    /// Staleness-arm refresh: resumes only when the pull completes.
    Refresh { reg: RegisterId },
    /// Latency-arm refresh racing a deadline (the pull id doubles as the
    /// deadline-timer token). The bounds gate and annotate the fallback.
    Deadline {
        reg: RegisterId,
        staleness_bound: Option<u64>,
        latency_bound: Option<u64>,
    },
}

struct InFlight {
    op_index: usize,
    node: NodeId,
    invoked_at: u64,
    policy_label: String,
    source: String,
    machine: Machine,
    reads: Vec<ReadSample>,
    net_wait_ms: u64,
    suspended_since: u64,
    suspension: Option<Suspension>,
}

#[derive(Clone, Copy, PartialEq)]
enum Decision {
    Committed,
    Aborted,
}

pub struct Runtime {
    sim: Simulator<Payload>,
    data: Datastore,
    policies: PolicyTable,
    scenario: Scenario,
    // transactions
    next_txn_id: u64,
    coordinators: BTreeMap<TxnId, Coordinator>,
    lock_tables: Vec<LockTable>,
    decided: Vec<BTreeMap<TxnId, Decision>>,
    txn_waiters: BTreeMap<TxnId, u64>,
    api_txns: BTreeMap<u64, (TxnSpec, Option<u64>)>,
    next_api_token: u64,
    // suspended evaluations
    inflight: BTreeMap<u64, InFlight>,
    next_op_token: u64,
    next_session: u64,
    next_pull: u64,
    pull_waiters: BTreeMap<u64, u64>,
    reconfigs: BTreeMap<u64, (RegisterId, Policy)>,
    next_reconfig: u64,
    // recording
    op_records: Vec<Option<OpRecord>>,
    reads: Vec<ReadSample>,
    txn_log: Vec<TxnRecord>,
    update_log: Vec<UpdateRecord>,
    mutations: Vec<Mutation>,
    messages_delivered: u64,
}

impl Runtime {
    pub fn new(scenario: Scenario) -> Runtime {
        let mut sim = Simulator::new(scenario.nodes, scenario.link, scenario.seed);
        for (at, fault) in &scenario.faults {
            sim.schedule_at(*at, Event::Fault(fault.clone()));
        }
        for (index, op) in scenario.workload.iter().enumerate() {
            sim.schedule_at(op.at, Event::Workload { index });
        }
        if let Some(period) = scenario.gossip_period {
            sim.schedule_at(period, Event::Timer { owner: None, tag: TimerTag::Gossip });
        }
        let data = Datastore::new(scenario.nodes, scenario.registers.iter().cloned());
        let policies = PolicyTable::from_decls(scenario.registers.iter());
        let op_count = scenario.workload.len();
        let nodes = scenario.nodes as usize;
        Runtime {
            sim,
            data,
            policies,
            scenario,
            next_txn_id: 1,
            coordinators: BTreeMap::new(),
            lock_tables: (0..nodes).map(|_| LockTable::default()).collect(),
            decided: vec![BTreeMap::new(); nodes],
            txn_waiters: BTreeMap::new(),
            api_txns: BTreeMap::new(),
            next_api_token: 1,
            inflight: BTreeMap::new(),
            next_op_token: 1,
            next_session: 1,
            next_pull: 1,
            pull_waiters: BTreeMap::new(),
            reconfigs: BTreeMap::new(),
            next_reconfig: 1,
            op_records: vec![None; op_count],
            reads: Vec::new(),
            txn_log: Vec::new(),
            update_log: Vec::new(),
            mutations: Vec::new(),
            messages_delivered: 0,
        }
    }

    /// Schedules a multi-op transaction at `at` (runtime API; workload
    /// programs create their own single-access transactions). Write ops
    /// must carry resolved updates, and the coordinator must replicate
    /// every register it touches (its replica serves the read snapshots).
    pub fn schedule_txn(
        &mut self,
        at: u64,
        spec: TxnSpec,
        deadline_ms: Option<u64>,
    ) -> Result<(), ReplicaError> {
        for op in &spec.ops {
            let (reg, write) = match op {
                TxnOp::Read(reg) => (reg, None),
                TxnOp::Write(reg, update) => (reg, Some(update)),
            };
            let decl = self.data.decl(reg)?;
            if !decl.replicas.contains(&spec.coordinator) {
                return Err(ReplicaError::NotAReplica {
                    node: spec.coordinator,
                    reg: reg.clone(),
                });
            }
            if let Some(update) = write {
                if !LatticeValue::bottom(decl.kind).op_valid(update) {
                    return Err(ReplicaError::InvalidOp {
                        reg: reg.clone(),
                        detail: format!("{update} is invalid for {}", decl.kind),
                    });
                }
            }
        }
        let token = self.next_api_token;
        self.next_api_token += 1;
        self.api_txns.insert(token, (spec, deadline_ms));
        self.sim
            .schedule_at(at, Event::Timer { owner: None, tag: TimerTag::SubmitTxn { token } });
        Ok(())
    }

    /// Schedules a policy change for `reg` at `at`. Accesses invoked at or
    /// after `at` use the new policy.
    pub fn schedule_reconfigure(&mut self, at: u64, reg: RegisterId, policy: Policy) {
        let token = self.next_reconfig;
        self.next_reconfig += 1;
        self.reconfigs.insert(token, (reg, policy));
        self.sim
            .schedule_at(at, Event::Timer { owner: None, tag: TimerTag::Reconfigure { token } });
    }

    pub fn run(mut self) -> RunOutput {
        self.step_until(self.scenario.horizon);
        self.finish()
    }

    /// Processes every event due by `t` (capped at the horizon) and
    /// advances the clock there. Exposed so tests and examples can
    /// interleave inspection or injection with simulated time.
    pub fn step_until(&mut self, t: u64) -> usize {
        let t = t.min(self.scenario.horizon);
        let mut processed = 0;
        while let Some(event) = self.sim.pop_due(t) {
            self.handle(event);
            processed += 1;
        }
        self.sim.advance_to(t);
        processed
    }

    /// Marks still-suspended operations blocked and assembles the outputs.
    pub fn finish(mut self) -> RunOutput {
        self.step_until(self.scenario.horizon);
        self.finalize_blocked();

        let history = History {
            ops: self.op_records.into_iter().flatten().collect(),
            reads: self.reads,
            txns: self.txn_log,
            states: self.data.all_states(),
            updates: self.update_log,
        };
        let metrics = compute_metrics(&self.scenario, &history, &self.mutations, self.messages_delivered);
        let mut trace = self.sim.take_trace().join("\n");
        trace.push('\n');
        RunOutput { history, metrics, trace, state_log: self.mutations }
    }

    fn handle(&mut self, processed: Processed<Payload>) {
        match processed.event {
            Event::Fault(Fault::Crash(node)) => self.fail_ops_at(node),
            Event::Fault(_) => {}
            Event::Workload { index } => self.start_op(index),
            Event::Timer { tag, .. } => match tag {
                TimerTag::Gossip => self.gossip_tick(),
                TimerTag::OpDeadline { token } => self.op_deadline_fired(token),
                TimerTag::TxnDeadline { txn } => self.txn_deadline_fired(TxnId(txn)),
                TimerTag::TxnRetry { txn } => self.txn_retry(TxnId(txn)),
                TimerTag::Reconfigure { token } => self.apply_reconfigure(token),
                TimerTag::SubmitTxn { token } => self.submit_api_txn(token),
            },
            Event::Deliver(message) => {
                if !self.sim.is_up(message.to) {
                    return; // traced as a drop by the simulator
                }
                self.messages_delivered += 1;
                match message.payload.clone() {
                    Payload::Sync(m) => self.handle_sync(message.from, message.to, m),
                    Payload::Txn(m) => self.handle_txn_msg(message.from, message.to, m),
                }
            }
        }
    }

    // ---- workload evaluation ------------------------------------------

    fn start_op(&mut self, index: usize) {
        let op = self.scenario.workload[index].clone();
        let policy_label = op
            .program
            .register_refs()
            .first()
            .and_then(|reg| self.policies.policy(reg))
            .map_or_else(|| "-".to_string(), |p| p.label().to_string());
        if !self.sim.is_up(op.node) {
            self.op_records[index] = Some(OpRecord {
                index,
                at: op.at,
                node: op.node,
                policy: policy_label,
                outcome: OutcomeRecord::Failed { label: EvalError::NodeDown(op.node).label() },
                response_ms: None,
                net_wait_ms: None,
                max_age_ms: None,
                program: op.source.clone(),
            });
            return;
        }
        let token = self.next_op_token;
        self.next_op_token += 1;
        self.inflight.insert(
            token,
            InFlight {
                op_index: index,
                node: op.node,
                invoked_at: self.sim.now(),
                policy_label,
                source: op.source.clone(),
                machine: Machine::new(op.program.clone()),
                reads: Vec::new(),
                net_wait_ms: 0,
                suspended_since: self.sim.now(),
                suspension: None,
            },
        );
        self.drive(token);
    }

    fn drive(&mut self, token: u64) {
        loop {
            let state = match self.inflight.get_mut(&token) {
                Some(op) => op.machine.run(),
                None => return,
            };
            match state {
                MachineState::Done(value) => {
                    self.complete_op(token, value);
                    return;
                }
                MachineState::Failed(error) => {
                    self.fail_op(token, error);
                    return;
                }
                MachineState::NeedsRegister { reg, access } => {
                    match self.interpose(token, &reg, access) {
                        Ok(Some(value)) => {
                            self.inflight.get_mut(&token).unwrap().machine.resume(value);
                        }
                        Ok(None) => return, // suspended
                        Err(error) => {
                            self.fail_op(token, error);
                            return;
                        }
                    }
                }
            }
        }
    }

    /// The policy hook at a register access. Returns the value for an
    /// immediate resume, or None after arranging a later one.
    fn interpose(
        &mut self,
        token: u64,
        reg: &RegisterId,
        access: Access,
    ) -> Result<Option<Value>, EvalError> {
        let node = self.inflight[&token].node;
        let decl = match self.data.decl(reg) {
            Ok(decl) => decl.clone(),
            Err(_) => return Err(EvalError::UnboundRegister(reg.clone())),
        };
        if !decl.replicas.contains(&node) {
            return Err(EvalError::NotAReplica { node, reg: reg.clone() });
        }
        let policy = self.policies.policy(reg).expect("declared registers have policies").clone();
        let now = self.sim.now();
        match access {
            Access::Read => {
                let age = self.data.age(node, reg, now).expect("validated replica");
                match decide_on_deref(&policy, &decl, node, age, now) {
                    ResumePlan::ResumeNow => Ok(Some(self.serve_local_read(token, reg, &policy, 0))),
                    ResumePlan::ResumeAfter(SyncKind::RefreshFromPrimary) => {
                        let pull = self.start_pull(node, &decl);
                        self.pull_waiters.insert(pull, token);
                        self.suspend(token, Suspension::Refresh { reg: reg.clone() });
                        Ok(None)
                    }
                    ResumePlan::ResumeAfter(_) => {
                        let txn = self.start_access_txn(token, node, TxnOp::Read(reg.clone()), &policy);
                        self.suspend(token, Suspension::Txn { txn });
                        Ok(None)
                    }
                    ResumePlan::ResumeAtDeadline { deadline, max_staleness_ms } => {
                        let pull = self.start_pull(node, &decl);
                        self.pull_waiters.insert(pull, token);
                        let latency_bound = spry_bounds(&policy).1;
                        self.sim.schedule_at(
                            deadline,
                            Event::Timer { owner: Some(node), tag: TimerTag::OpDeadline { token: pull } },
                        );
                        self.suspend(
                            token,
                            Suspension::Deadline {
                                reg: reg.clone(),
                                staleness_bound: max_staleness_ms,
                                latency_bound,
                            },
                        );
                        Ok(None)
                    }
                }
            }
            Access::Write(store_op) => {
                let op = resolve_store_op(&store_op, node, now);
                match decide_on_store(&policy) {
                    ResumePlan::ResumeNow => {
                        let state = self
                            .data
                            .local_update(node, reg, &op, ActorId(node.0))
                            .map_err(|e| replica_error_to_eval(e, node))?;
                        self.record_update(node, reg, &state);
                        Ok(Some(value_of(&state.query())))
                    }
                    _ => {
                        let txn =
                            self.start_access_txn(token, node, TxnOp::Write(reg.clone(), op), &policy);
                        self.suspend(token, Suspension::Txn { txn });
                        Ok(None)
                    }
                }
            }
        }
    }

    fn suspend(&mut self, token: u64, suspension: Suspension) {
        let now = self.sim.now();
        let op = self.inflight.get_mut(&token).unwrap();
        op.suspended_since = now;
        op.suspension = Some(suspension);
    }

    /// Serves the local replica to a read, recording the audit sample.
    fn serve_local_read(&mut self, token: u64, reg: &RegisterId, policy: &Policy, waited: u64) -> Value {
        let now = self.sim.now();
        let node = self.inflight[&token].node;
        let (observable, age) = self.data.local_read(node, reg, now).expect("validated replica");
        let (staleness_bound, latency_bound) = spry_bounds(policy);
        let op = self.inflight.get_mut(&token).unwrap();
        op.reads.push(ReadSample {
            op_index: op.op_index,
            reg: reg.clone(),
            node,
            age_ms: age,
            waited_ms: waited,
            served_at: now,
            staleness_bound,
            latency_bound,
        });
        op.net_wait_ms += waited;
        op.suspension = None;
        value_of(&observable)
    }

    fn resume_op(&mut self, token: u64, value: Value) {
        if let Some(op) = self.inflight.get_mut(&token) {
            op.machine.resume(value);
            self.drive(token);
        }
    }

    fn complete_op(&mut self, token: u64, value: Value) {
        let outcome = Outcome::Completed { value, finished_at: self.sim.now() };
        self.settle_op(token, outcome);
    }

    fn fail_op(&mut self, token: u64, error: EvalError) {
        self.settle_op(token, Outcome::Failed(error));
    }

    /// Retires an evaluation with its final outcome and writes the record.
    fn settle_op(&mut self, token: u64, outcome: Outcome) {
        let op = self.inflight.remove(&token).unwrap();
        let max_age = op.reads.iter().map(|r| r.age_ms).max();
        self.reads.extend(op.reads);
        let (record, response, net_wait) = match outcome {
            Outcome::Completed { value, finished_at } => (
                OutcomeRecord::Completed { value: value.render() },
                Some(finished_at - op.invoked_at),
                Some(op.net_wait_ms),
            ),
            Outcome::Blocked { reason, since } => {
                (OutcomeRecord::Blocked { reason: format!("{reason}@{since}") }, None, None)
            }
            Outcome::Failed(error) => (OutcomeRecord::Failed { label: error.label() }, None, None),
        };
        self.op_records[op.op_index] = Some(OpRecord {
            index: op.op_index,
            at: op.invoked_at,
            node: op.node,
            policy: op.policy_label,
            outcome: record,
            response_ms: response,
            net_wait_ms: net_wait,
            max_age_ms: max_age,
            program: op.source,
        });
    }

    fn fail_ops_at(&mut self, node: NodeId) {
        let tokens: Vec<u64> = self
            .inflight
            .iter()
            .filter(|(_, op)| op.node == node)
            .map(|(t, _)| *t)
            .collect();
        for token in tokens {
            self.fail_op(token, EvalError::NodeDown(node));
        }
    }

    fn finalize_blocked(&mut self) {
        let tokens: Vec<u64> = self.inflight.keys().copied().collect();
        for token in tokens {
            let op = &self.inflight[&token];
            let reason = match &op.suspension {
                Some(Suspension::Txn { txn }) => BlockReason::AwaitingTxn { txn: txn.0 },
                Some(Suspension::Refresh { reg, .. }) | Some(Suspension::Deadline { reg, .. }) => {
                    BlockReason::AwaitingRefresh { reg: reg.clone() }
                }
                None => unreachable!("suspended ops always carry their suspension"),
            };
            let since = op.suspended_since;
            self.settle_op(token, Outcome::Blocked { reason, since });
        }
    }

    // ---- state recording ----------------------------------------------

    fn record_update(&mut self, node: NodeId, reg: &RegisterId, state: &LatticeValue) {
        let now = self.sim.now();
        self.update_log.push(UpdateRecord {
            at: now,
            node,
            reg: reg.clone(),
            state_after: state.clone(),
        });
        self.mutations.push((now, node, reg.clone(), state.clone()));
    }

    fn record_merge(&mut self, node: NodeId, reg: &RegisterId, state: &LatticeValue) {
        self.mutations.push((self.sim.now(), node, reg.clone(), state.clone()));
    }

    // ---- anti-entropy and refresh --------------------------------------

    fn gossip_tick(&mut self) {
        let period = self.scenario.gossip_period.expect("gossip timer implies a period");
        let policies: BTreeMap<RegisterId, Policy> =
            self.policies.iter().map(|(r, p)| (r.clone(), p.clone())).collect();
        for node_ix in 0..self.scenario.nodes {
            let node = NodeId(node_ix);
            if !self.sim.is_up(node) {
                continue;
            }
            let candidates: Vec<NodeId> = (0..self.scenario.nodes)
                .map(NodeId)
                .filter(|peer| *peer != node && self.sim.same_group(node, *peer))
                .filter(|peer| !self.data.gossipable_shared(node, *peer, &policies).is_empty())
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let peer = candidates[self.sim.choose(candidates.len())];
            let regs = self.data.gossipable_shared(node, peer, &policies);
            let states = self.data.states_at(node, regs);
            let session = self.next_session;
            self.next_session += 1;
            self.sim.send(node, peer, SyncMsg::SyncRequest { session, states }.into());
        }
        self.sim
            .schedule_in(period, Event::Timer { owner: None, tag: TimerTag::Gossip });
    }

    fn start_pull(&mut self, node: NodeId, decl: &crate::replica::RegisterDecl) -> u64 {
        let pull = self.next_pull;
        self.next_pull += 1;
        self.sim.send(
            node,
            decl.primary,
            SyncMsg::PullRequest { req: pull, reg: decl.id.clone() }.into(),
        );
        pull
    }

    fn handle_sync(&mut self, from: NodeId, to: NodeId, msg: SyncMsg) {
        let now = self.sim.now();
        match msg {
            SyncMsg::SyncRequest { session, states } => {
                let regs: Vec<RegisterId> = states.iter().map(|(r, _)| r.clone()).collect();
                for (reg, state) in &states {
                    if let Ok(merged) = self.data.merge_in(to, reg, state) {
                        self.record_merge(to, reg, &merged);
                        self.data.mark_sync(to, reg, from, now);
                    }
                }
                let reply_states = self.data.states_at(to, regs);
                self.sim
                    .send(to, from, SyncMsg::SyncReply { session, states: reply_states }.into());
            }
            SyncMsg::SyncReply { session: _, states } => {
                for (reg, state) in &states {
                    if let Ok(merged) = self.data.merge_in(to, reg, state) {
                        self.record_merge(to, reg, &merged);
                        self.data.mark_sync(to, reg, from, now);
                    }
                }
            }
            SyncMsg::PullRequest { req, reg } => {
                if let Ok(state) = self.data.replica(to, &reg) {
                    let state = state.value.clone();
                    self.sim.send(to, from, SyncMsg::PullReply { req, reg, state }.into());
                }
            }
            SyncMsg::PullReply { req, reg, state } => {
                if let Ok(merged) = self.data.merge_in(to, &reg, &state) {
                    self.record_merge(to, &reg, &merged);
                    self.data.mark_sync(to, &reg, from, now);
                }
                if let Some(token) = self.pull_waiters.remove(&req) {
                    let Some(op) = self.inflight.get(&token) else {
                        return; // the waiting op died with its node
                    };
                    let waited = now - op.suspended_since;
                    let policy = self.policies.policy(&reg).cloned().unwrap_or(Policy::Lasp);
                    let value = self.serve_local_read(token, &reg, &policy, waited);
                    self.resume_op(token, value);
                }
            }
        }
    }

    fn op_deadline_fired(&mut self, pull: u64) {
        let Some(token) = self.pull_waiters.remove(&pull) else {
            return; // the refresh won the race
        };
        let Some(waiting) = self.inflight.get(&token) else {
            return; // the waiting op died with its node
        };
        let now = self.sim.now();
        let (reg, max_staleness, policy) = match &waiting.suspension {
            Some(Suspension::Deadline { reg, staleness_bound, latency_bound }) => (
                reg.clone(),
                *staleness_bound,
                Policy::Spry { max_staleness_ms: *staleness_bound, latency_bound_ms: *latency_bound },
            ),
            _ => return,
        };
        let node = waiting.node;
        let age = self.data.age(node, &reg, now).expect("validated replica");
        if let Some(bound) = max_staleness {
            if age > bound {
                self.fail_op(
                    token,
                    EvalError::StalenessUnsatisfiable { reg, age_ms: age, bound_ms: bound },
                );
                return;
            }
        }
        let waited = now - self.inflight[&token].suspended_since;
        let value = self.serve_local_read(token, &reg, &policy, waited);
        self.resume_op(token, value);
    }

    fn apply_reconfigure(&mut self, token: u64) {
        if let Some((reg, policy)) = self.reconfigs.remove(&token) {
            self.sim.trace_note("reconfigure", None, &format!("reg={reg} policy={policy}"));
            let _ = self.policies.reconfigure(&reg, policy);
        }
    }

    // ---- transactions ---------------------------------------------------

    fn submit_api_txn(&mut self, token: u64) {
        if let Some((spec, deadline_ms)) = self.api_txns.remove(&token) {
            if !self.sim.is_up(spec.coordinator) {
                return;
            }
            self.begin_txn(spec, deadline_ms, None);
        }
    }

    fn start_access_txn(&mut self, token: u64, node: NodeId, op: TxnOp, policy: &Policy) -> TxnId {
        let deadline_ms = match policy {
            Policy::Austere(AustereMode::Measured { deadline_ms }) => Some(*deadline_ms),
            _ => None,
        };
        self.begin_txn(TxnSpec { coordinator: node, ops: vec![op] }, deadline_ms, Some(token))
    }

    fn begin_txn(&mut self, spec: TxnSpec, deadline_ms: Option<u64>, waiter: Option<u64>) -> TxnId {
        let txn = TxnId(self.next_txn_id);
        self.next_txn_id += 1;
        let now = self.sim.now();
        let deadline = deadline_ms.map(|d| now + d);
        let data = &self.data;
        let coordinator = Coordinator::new(
            txn,
            spec,
            now,
            |reg| data.decl(reg).map(|d| d.replicas.clone()).unwrap_or_default(),
            deadline,
        );
        let first = coordinator.first_lock();
        self.coordinators.insert(txn, coordinator);
        if let Some(waiter) = waiter {
            self.txn_waiters.insert(txn, waiter);
        }
        if let Some(at) = deadline {
            self.sim
                .schedule_at(at, Event::Timer { owner: None, tag: TimerTag::TxnDeadline { txn: txn.0 } });
        }
        match first {
            Some((reg, node, mode)) => self.issue_lock(txn, reg, node, mode),
            None => {
                // Empty transaction: trivially committed.
                self.decide_commit(txn);
            }
        }
        txn
    }

    fn issue_lock(&mut self, txn: TxnId, reg: RegisterId, node: NodeId, mode: LockMode) {
        let coordinator_node = self.coordinators[&txn].spec.coordinator;
        if node == coordinator_node {
            let granted = self.lock_tables[node.0 as usize].request(
                &reg,
                LockRequest { txn, mode, coordinator: coordinator_node },
            );
            if granted {
                self.coordinator_grant(txn, &reg, node);
            }
        } else {
            self.sim
                .send(coordinator_node, node, TxnMsg::Lock { txn, reg, mode }.into());
        }
    }

    fn coordinator_grant(&mut self, txn: TxnId, reg: &RegisterId, node: NodeId) {
        let progress = match self.coordinators.get_mut(&txn) {
            Some(co) => co.record_grant(reg, node),
            None => return,
        };
        match progress {
            Some(LockProgress::RequestNext { reg, node, mode }) => self.issue_lock(txn, reg, node, mode),
            Some(LockProgress::AllLocked) => self.begin_prepare(txn),
            None => {}
        }
    }

    fn begin_prepare(&mut self, txn: TxnId) {
        let (coordinator_node, ops, manifest, participants) = {
            let co = &self.coordinators[&txn];
            (
                co.spec.coordinator,
                co.spec.ops.clone(),
                co.lock_manifest(),
                co.participants.clone(),
            )
        };
        // Snapshot reads against a transaction-local view that sees the
        // transaction's own earlier writes (ops apply in order).
        let mut view: BTreeMap<RegisterId, LatticeValue> = BTreeMap::new();
        let mut reads = Vec::new();
        for op in &ops {
            let reg = match op {
                TxnOp::Read(reg) | TxnOp::Write(reg, _) => reg,
            };
            if !view.contains_key(reg) {
                let state = self.data.replica(coordinator_node, reg).expect("coordinator is a replica");
                view.insert(reg.clone(), state.value.clone());
            }
            match op {
                TxnOp::Read(reg) => reads.push((reg.clone(), view[reg].query())),
                TxnOp::Write(reg, update) => {
                    let actor = ActorId(coordinator_node.0);
                    let next = view[reg].update(update, actor).expect("validated txn write");
                    view.insert(reg.clone(), next);
                }
            }
        }
        self.coordinators.get_mut(&txn).unwrap().reads = reads;

        for peer in &participants {
            if *peer != coordinator_node {
                self.sim.send(
                    coordinator_node,
                    *peer,
                    TxnMsg::Prepare { txn, locks: manifest.clone() }.into(),
                );
            }
        }
        // The coordinator votes for itself directly.
        let own_vote = self.participant_vote(coordinator_node, txn, &manifest);
        self.coordinator_vote(txn, coordinator_node, own_vote);
    }

    fn participant_vote(&mut self, node: NodeId, txn: TxnId, manifest: &[(RegisterId, LockMode)]) -> bool {
        let expected: Vec<(RegisterId, LockMode)> = manifest
            .iter()
            .filter(|(reg, _)| {
                self.data
                    .decl(reg)
                    .map(|d| d.replicas.contains(&node))
                    .unwrap_or(false)
            })
            .cloned()
            .collect();
        let vote = vote_on_prepare(&self.lock_tables[node.0 as usize], txn, expected);
        self.sim.trace_note(
            "txn",
            Some(node),
            &format!("vote txn={txn} {}", if vote { "yes" } else { "no" }),
        );
        vote
    }

    fn coordinator_vote(&mut self, txn: TxnId, from: NodeId, yes: bool) {
        let progress = match self.coordinators.get_mut(&txn) {
            Some(co) => co.record_vote(from, yes),
            None => return,
        };
        match progress {
            VoteProgress::Waiting => {}
            VoteProgress::Commit => self.decide_commit(txn),
            VoteProgress::Abort => self.decide_abort(txn, "participant voted no"),
        }
    }

    fn decide_commit(&mut self, txn: TxnId) {
        let now = self.sim.now();
        let (coordinator_node, writes, participants, reads, ops) = {
            let co = self.coordinators.get_mut(&txn).unwrap();
            co.phase = Phase::Committed { at: now };
            (
                co.spec.coordinator,
                co.spec.writes(),
                co.participants.clone(),
                co.reads.clone(),
                co.spec.ops.clone(),
            )
        };

        // Log the commit.
        let op_records: Vec<TxnOpRecord> = ops
            .iter()
            .scan(0usize, |read_ix, op| {
                Some(match op {
                    TxnOp::Read(reg) => {
                        let observed = reads[*read_ix].1.clone();
                        *read_ix += 1;
                        TxnOpRecord::Read { reg: reg.clone(), observed }
                    }
                    TxnOp::Write(reg, update) => {
                        TxnOpRecord::Write { reg: reg.clone(), op: update.clone() }
                    }
                })
            })
            .collect();
        self.txn_log.push(TxnRecord {
            txn,
            coordinator: coordinator_node,
            committed_ms: now,
            ops: op_records,
        });

        // Apply locally, release local locks, broadcast the decision.
        self.apply_decision(coordinator_node, txn, Decision::Committed, &writes, coordinator_node);
        let remote: BTreeSet<NodeId> =
            participants.iter().copied().filter(|n| *n != coordinator_node).collect();
        for peer in &remote {
            self.sim
                .send(coordinator_node, *peer, TxnMsg::Commit { txn, writes: writes.clone() }.into());
        }
        {
            let co = self.coordinators.get_mut(&txn).unwrap();
            co.pending_acks = remote.clone();
        }
        if !remote.is_empty() {
            self.schedule_txn_retry(txn);
        }

        // Wake the evaluation that created this transaction.
        if let Some(token) = self.txn_waiters.remove(&txn) {
            if self.inflight.contains_key(&token) {
                let value = match &ops[0] {
                    TxnOp::Read(_) => value_of(&reads[0].1),
                    TxnOp::Write(reg, _) => {
                        let state =
                            self.data.replica(coordinator_node, reg).expect("coordinator is a replica");
                        value_of(&state.value.query())
                    }
                };
                let read_reg = match &ops[0] {
                    TxnOp::Read(reg) => Some(reg.clone()),
                    TxnOp::Write(..) => None,
                };
                let op = self.inflight.get_mut(&token).unwrap();
                let waited = now - op.suspended_since;
                op.net_wait_ms += waited;
                op.suspension = None;
                if let Some(reg) = read_reg {
                    op.reads.push(ReadSample {
                        op_index: op.op_index,
                        reg,
                        node: op.node,
                        // A committed read reflects every previously
                        // committed write: origin-fresh by construction.
                        age_ms: 0,
                        waited_ms: waited,
                        served_at: now,
                        staleness_bound: None,
                        latency_bound: None,
                    });
                }
                self.resume_op(token, value);
            }
        }
    }

    fn decide_abort(&mut self, txn: TxnId, reason: &str) {
        let (coordinator_node, participants) = {
            let co = self.coordinators.get_mut(&txn).unwrap();
            co.phase = Phase::Aborted { reason: reason.to_string() };
            (co.spec.coordinator, co.participants.clone())
        };
        self.apply_decision(coordinator_node, txn, Decision::Aborted, &[], coordinator_node);
        let remote: BTreeSet<NodeId> =
            participants.iter().copied().filter(|n| *n != coordinator_node).collect();
        for peer in &remote {
            self.sim.send(coordinator_node, *peer, TxnMsg::Abort { txn }.into());
        }
        {
            let co = self.coordinators.get_mut(&txn).unwrap();
            co.pending_acks = remote.clone();
        }
        if !remote.is_empty() {
            self.schedule_txn_retry(txn);
        }
        if let Some(token) = self.txn_waiters.remove(&txn) {
            self.fail_op(token, EvalError::TxnAborted { reason: reason.to_string() });
        }
    }

    /// Applies a decision at `node` exactly once, releases the
    /// transaction's locks there, and advances any transactions whose
    /// queued requests became grants.
    fn apply_decision(
        &mut self,
        node: NodeId,
        txn: TxnId,
        decision: Decision,
        writes: &[(RegisterId, UpdateOp)],
        coordinator: NodeId,
    ) {
        let already = self.decided[node.0 as usize].contains_key(&txn);
        if !already {
            self.decided[node.0 as usize].insert(txn, decision);
            if decision == Decision::Committed {
                for (reg, op) in writes {
                    if let Ok(state) = self.data.local_update(node, reg, op, ActorId(coordinator.0)) {
                        if node == coordinator {
                            self.record_update(node, reg, &state);
                        } else {
                            self.record_merge(node, reg, &state);
                        }
                    }
                }
            }
            let granted = self.lock_tables[node.0 as usize].release_all(txn);
            for (reg, request) in granted {
                if request.coordinator == node {
                    self.coordinator_grant(request.txn, &reg, node);
                } else {
                    self.sim
                        .send(node, request.coordinator, TxnMsg::Grant { txn: request.txn, reg }.into());
                }
            }
        }
    }

    fn schedule_txn_retry(&mut self, txn: TxnId) {
        let rtt = (self.scenario.link.mean_latency() * 2).max(1);
        self.sim
            .schedule_in(rtt, Event::Timer { owner: None, tag: TimerTag::TxnRetry { txn: txn.0 } });
    }

    fn txn_retry(&mut self, txn: TxnId) {
        let Some(co) = self.coordinators.get(&txn) else { return };
        if !co.is_decided() || co.pending_acks.is_empty() {
            return;
        }
        let coordinator_node = co.spec.coordinator;
        if !self.sim.is_up(coordinator_node) {
            return; // crashed coordinators initiate nothing
        }
        let pending: Vec<NodeId> = co.pending_acks.iter().copied().collect();
        let message = match &co.phase {
            Phase::Committed { .. } => TxnMsg::Commit { txn, writes: co.spec.writes() },
            Phase::Aborted { .. } => TxnMsg::Abort { txn },
            _ => unreachable!(),
        };
        for peer in pending {
            self.sim.send(coordinator_node, peer, message.clone().into());
        }
        self.schedule_txn_retry(txn);
    }

    fn txn_deadline_fired(&mut self, txn: TxnId) {
        let Some(co) = self.coordinators.get(&txn) else { return };
        if co.is_decided() {
            return;
        }
        self.decide_abort(txn, "deadline");
    }

    fn handle_txn_msg(&mut self, from: NodeId, to: NodeId, msg: TxnMsg) {
        match msg {
            TxnMsg::Lock { txn, reg, mode } => {
                let granted = self.lock_tables[to.0 as usize].request(
                    &reg,
                    LockRequest { txn, mode, coordinator: from },
                );
                if granted {
                    self.sim.send(to, from, TxnMsg::Grant { txn, reg }.into());
                }
            }
            TxnMsg::Grant { txn, reg } => self.coordinator_grant(txn, &reg, from),
            TxnMsg::Prepare { txn, locks } => {
                let vote = self.participant_vote(to, txn, &locks);
                self.sim.send(to, from, TxnMsg::Vote { txn, yes: vote }.into());
            }
            TxnMsg::Vote { txn, yes } => self.coordinator_vote(txn, from, yes),
            TxnMsg::Commit { txn, writes } => {
                self.apply_decision(to, txn, Decision::Committed, &writes, from);
                self.sim.send(to, from, TxnMsg::Ack { txn }.into());
            }
            TxnMsg::Abort { txn } => {
                self.apply_decision(to, txn, Decision::Aborted, &[], from);
                self.sim.send(to, from, TxnMsg::Ack { txn }.into());
            }
            TxnMsg::Ack { txn } => {
                if let Some(co) = self.coordinators.get_mut(&txn) {
                    co.pending_acks.remove(&from);
                }
            }
        }
    }

    // ---- test and example hooks ----------------------------------------

    /// Corrupts a participant's lock state for `txn` (it will vote NO).
    pub fn corrupt_lock(&mut self, node: NodeId, reg: &RegisterId, txn: TxnId) {
        self.lock_tables[node.0 as usize].corrupt(reg, txn);
    }

    pub fn simulator(&self) -> &Simulator<Payload> {
        &self.sim
    }
}

fn spry_bounds(policy: &Policy) -> (Option<u64>, Option<u64>) {
    match policy {
        Policy::Spry { max_staleness_ms, latency_bound_ms } => (*max_staleness_ms, *latency_bound_ms),
        _ => (None, None),
    }
}

/// Binds the issuing replica and the current time into a surface store op.
pub fn resolve_store_op(op: &StoreOp, node: NodeId, now: u64) -> UpdateOp {
    let actor = ActorId(node.0);
    match op {
        StoreOp::Inc => UpdateOp::Increment(actor),
        StoreOp::Dec => UpdateOp::Decrement(actor),
        StoreOp::Add(e) => UpdateOp::Add(*e),
        StoreOp::Remove(e) => UpdateOp::Remove(*e),
        StoreOp::Assign(e) => UpdateOp::Assign { elem: *e, stamp_ms: now, actor },
    }
}

/// Observable values as the kernel sees them. An unwritten LWW register
/// reads as 0.
pub fn value_of(observable: &ObservableValue) -> Value {
    match observable {
        ObservableValue::Count(n) => Value::Int(*n),
        ObservableValue::Elems(es) => Value::Set(es.clone()),
        ObservableValue::Register(Some(e)) => Value::Int(*e),
        ObservableValue::Register(None) => Value::Int(0),
    }
}

fn replica_error_to_eval(error: ReplicaError, node: NodeId) -> EvalError {
    match error {
        ReplicaError::UnknownRegister(reg) => EvalError::UnboundRegister(reg),
        ReplicaError::NotAReplica { node, reg } => EvalError::NotAReplica { node, reg },
        ReplicaError::InvalidOp { reg, detail } => {
            let _ = node;
            EvalError::InvalidUpdate { reg, detail }
        }
    }
}

/// Loads, runs, returns. The common entry point for the CLI and tests.
pub fn run_scenario(scenario: Scenario, seed_override: Option<u64>, until: Option<u64>) -> RunOutput {
    let mut scenario = scenario;
    if let Some(seed) = seed_override {
        scenario.seed = seed;
    }
    if let Some(horizon) = until {
        scenario.horizon = horizon;
    }
    Runtime::new(scenario).run()
}
