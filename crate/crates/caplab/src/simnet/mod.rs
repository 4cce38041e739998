//! Seeded, single-threaded discrete-event network simulator.
//!
//! The simulator is the sole source of time and randomness for a run.
//! Events are processed in `(time, seq)` order where `seq` is assigned at
//! scheduling time, so identical scenarios with identical seeds replay to
//! byte-identical traces.
//!
//! Network semantics:
//! - `send` samples the link model and schedules a delivery, unless the
//!   endpoints are in different partition groups, the destination is
//!   crashed, or the drop roll hits. Loss is silent.
//! - Partitions take effect at send time: messages already in flight when a
//!   partition starts still deliver.
//! - A delivery to a node that crashed after the send is dropped at
//!   delivery time (traced as `kind=drop`).
//!
//! The simulator applies fault events to its own connectivity state when
//! they are popped; the caller sees every popped event and layers its own
//! reactions on top.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Node identifier; nodes are the dense range `0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Message latency distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Latency {
    Fixed(u64),
    Uniform { min_ms: u64, max_ms: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub latency: Latency,
    pub drop_prob: f64,
}

impl LinkModel {
    pub fn fixed(ms: u64) -> LinkModel {
        LinkModel { latency: Latency::Fixed(ms), drop_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self.latency {
            Latency::Uniform { min_ms, max_ms } if min_ms > max_ms => {
                return Err(SimError::BadLinkModel("uniform latency needs min <= max".into()));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(SimError::BadLinkModel("drop probability must be in [0,1]".into()));
        }
        Ok(())
    }

    /// Mean one-way latency, used for retry pacing.
    pub fn mean_latency(&self) -> u64 {
        match self.latency {
            Latency::Fixed(ms) => ms,
            Latency::Uniform { min_ms, max_ms } => (min_ms + max_ms) / 2,
        }
    }
}

/// Disjoint, exhaustive grouping of nodes; messages never cross groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionConfig {
    pub groups: Vec<BTreeSet<NodeId>>,
}

impl PartitionConfig {
    pub fn new(groups: Vec<BTreeSet<NodeId>>) -> PartitionConfig {
        PartitionConfig { groups }
    }

    pub fn validate(&self, nodes: u32) -> Result<(), SimError> {
        let mut seen = BTreeSet::new();
        for group in &self.groups {
            for node in group {
                if node.0 >= nodes {
                    return Err(SimError::UnknownNode(*node));
                }
                if !seen.insert(*node) {
                    return Err(SimError::OverlappingGroups(*node));
                }
            }
        }
        if seen.len() as u32 != nodes {
            return Err(SimError::IncompleteGroups);
        }
        Ok(())
    }

    fn render(&self) -> String {
        let groups: Vec<String> = self
            .groups
            .iter()
            .map(|g| {
                let ids: Vec<String> = g.iter().map(|n| n.to_string()).collect();
                ids.join(",")
            })
            .collect();
        groups.join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("partition groups overlap at node {0}")]
    OverlappingGroups(NodeId),
    #[error("partition groups do not cover all nodes")]
    IncompleteGroups,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("bad link model: {0}")]
    BadLinkModel(String),
}

/// Connectivity/liveness faults, applied when their event is processed.
#[derive(Clone, Debug, PartialEq)]
pub enum Fault {
    Partition(PartitionConfig),
    Heal,
    Crash(NodeId),
    Recover(NodeId),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Partition(cfg) => write!(f, "partition groups={}", cfg.render()),
            Fault::Heal => write!(f, "heal"),
            Fault::Crash(n) => write!(f, "crash node={n}"),
            Fault::Recover(n) => write!(f, "recover node={n}"),
        }
    }
}

/// Timers carry plain tokens so every subsystem can schedule wakeups
/// through the one event queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerTag {
    /// Periodic anti-entropy tick (global).
    Gossip,
    /// Latency-bound deadline for a suspended operation.
    OpDeadline { token: u64 },
    /// Coordinator deadline for a measured-mode transaction.
    TxnDeadline { txn: u64 },
    /// Coordinator decision-retry pacing.
    TxnRetry { txn: u64 },
    /// Scheduled policy change.
    Reconfigure { token: u64 },
    /// Transaction submitted through the runtime API.
    SubmitTxn { token: u64 },
}

impl fmt::Display for TimerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimerTag::Gossip => write!(f, "gossip"),
            TimerTag::OpDeadline { token } => write!(f, "op_deadline({token})"),
            TimerTag::TxnDeadline { txn } => write!(f, "txn_deadline({txn})"),
            TimerTag::TxnRetry { txn } => write!(f, "txn_retry({txn})"),
            TimerTag::Reconfigure { token } => write!(f, "reconfigure({token})"),
            TimerTag::SubmitTxn { token } => write!(f, "submit_txn({token})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message<P> {
    pub from: NodeId,
    pub to: NodeId,
    pub sent_at: u64,
    pub payload: P,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event<P> {
    Deliver(Message<P>),
    Timer { owner: Option<NodeId>, tag: TimerTag },
    Fault(Fault),
    /// Index into the scenario workload.
    Workload { index: usize },
}

/// An event popped from the queue, with its processing coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Processed<P> {
    pub time: u64,
    pub seq: u64,
    pub event: Event<P>,
}

struct Scheduled<P> {
    time: u64,
    seq: u64,
    event: Event<P>,
}

impl<P> PartialEq for Scheduled<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl<P> Eq for Scheduled<P> {}
impl<P> PartialOrd for Scheduled<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Scheduled<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

pub struct Simulator<P> {
    nodes: u32,
    link: LinkModel,
    now: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<P>>>,
    rng: ChaCha8Rng,
    group_of: Vec<u32>,
    node_up: Vec<bool>,
    trace: Vec<String>,
}

impl<P: fmt::Display> Simulator<P> {
    pub fn new(nodes: u32, link: LinkModel, seed: u64) -> Simulator<P> {
        link.validate().expect("link model must be valid");
        Simulator {
            nodes,
            link,
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            group_of: vec![0; nodes as usize],
            node_up: vec![true; nodes as usize],
            trace: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn nodes(&self) -> u32 {
        self.nodes
    }

    pub fn link(&self) -> LinkModel {
        self.link
    }

    pub fn is_up(&self, node: NodeId) -> bool {
        self.node_up[node.0 as usize]
    }

    pub fn same_group(&self, a: NodeId, b: NodeId) -> bool {
        self.group_of[a.0 as usize] == self.group_of[b.0 as usize]
    }

    /// Applies a partition immediately (fault events do this on pop).
    pub fn set_partition(&mut self, cfg: &PartitionConfig) -> Result<(), SimError> {
        cfg.validate(self.nodes)?;
        for (ix, group) in cfg.groups.iter().enumerate() {
            for node in group {
                self.group_of[node.0 as usize] = ix as u32;
            }
        }
        Ok(())
    }

    /// Restores full connectivity.
    pub fn heal(&mut self) {
        self.group_of.fill(0);
    }

    pub fn set_node_status(&mut self, node: NodeId, up: bool) {
        self.node_up[node.0 as usize] = up;
    }

    /// Schedules `event` at absolute time `at` (>= now).
    pub fn schedule_at(&mut self, at: u64, event: Event<P>) {
        assert!(at >= self.now, "cannot schedule into the past");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { time: at, seq, event }));
    }

    pub fn schedule_in(&mut self, delay: u64, event: Event<P>) {
        self.schedule_at(self.now + delay, event);
    }

    /// Attempts to send `payload` from `from` to `to` now. Returns true if
    /// a delivery was scheduled. Loss (partition, crashed destination, drop
    /// roll) is silent. Randomness is consumed only for messages that pass
    /// the partition and liveness checks: first the drop roll, then the
    /// latency sample.
    pub fn send(&mut self, from: NodeId, to: NodeId, payload: P) -> bool {
        if !self.same_group(from, to) || !self.is_up(to) {
            return false;
        }
        if self.link.drop_prob > 0.0 && self.rng.gen_bool(self.link.drop_prob) {
            return false;
        }
        let latency = match self.link.latency {
            Latency::Fixed(ms) => ms,
            Latency::Uniform { min_ms, max_ms } => self.rng.gen_range(min_ms..=max_ms),
        };
        let message = Message { from, to, sent_at: self.now, payload };
        self.schedule_in(latency, Event::Deliver(message));
        true
    }

    /// Uniform index draw from the simulator's PRNG.
    pub fn choose(&mut self, len: usize) -> usize {
        assert!(len > 0);
        self.rng.gen_range(0..len)
    }

    /// Pops the next event with `time <= until`, advancing the clock and
    /// recording a trace line. Fault events update connectivity state
    /// before being returned. A delivery to a crashed node is traced as a
    /// drop; callers must skip it too (`is_up`).
    pub fn pop_due(&mut self, until: u64) -> Option<Processed<P>> {
        let next_time = self.queue.peek().map(|Reverse(s)| s.time)?;
        if next_time > until {
            return None;
        }
        let Reverse(scheduled) = self.queue.pop().unwrap();
        self.now = scheduled.time;
        if let Event::Fault(fault) = &scheduled.event {
            match fault {
                Fault::Partition(cfg) => {
                    self.set_partition(cfg).expect("scenario partitions are validated");
                }
                Fault::Heal => self.heal(),
                Fault::Crash(n) => self.set_node_status(*n, false),
                Fault::Recover(n) => self.set_node_status(*n, true),
            }
        }
        self.trace_event(&scheduled);
        Some(Processed { time: scheduled.time, seq: scheduled.seq, event: scheduled.event })
    }

    /// Advances the clock to `t` without processing anything (used after
    /// draining all events <= t).
    pub fn advance_to(&mut self, t: u64) {
        assert!(t >= self.now);
        self.now = t;
    }

    /// Processes every event with time <= `t` in order, handing each to
    /// `handler`; returns the processed count. The clock ends at `t`.
    pub fn run_until(&mut self, t: u64, mut handler: impl FnMut(&mut Self, Processed<P>)) -> usize {
        let mut processed = 0;
        while let Some(event) = self.pop_due(t) {
            handler(self, event);
            processed += 1;
        }
        self.advance_to(t);
        processed
    }

    fn trace_event(&mut self, scheduled: &Scheduled<P>) {
        let (kind, node, detail) = match &scheduled.event {
            Event::Deliver(m) if !self.is_up(m.to) => (
                "drop",
                m.to.to_string(),
                format!("from={} sent={} payload={}", m.from, m.sent_at, m.payload),
            ),
            Event::Deliver(m) => (
                "deliver",
                m.to.to_string(),
                format!("from={} sent={} payload={}", m.from, m.sent_at, m.payload),
            ),
            Event::Timer { owner, tag } => (
                "timer",
                owner.map_or_else(|| "-".to_string(), |n| n.to_string()),
                format!("tag={tag}"),
            ),
            Event::Fault(fault) => ("fault", "-".to_string(), fault.to_string()),
            Event::Workload { index } => ("workload", "-".to_string(), format!("op={index}")),
        };
        self.trace.push(format!(
            "t={} seq={} kind={} node={} detail={}",
            scheduled.time, scheduled.seq, kind, node, detail
        ));
    }

    /// Appends a caller-supplied trace line tied to the current moment.
    pub fn trace_note(&mut self, kind: &str, node: Option<NodeId>, detail: &str) {
        let node = node.map_or_else(|| "-".to_string(), |n| n.to_string());
        self.trace.push(format!(
            "t={} seq=- kind={} node={} detail={}",
            self.now, kind, node, detail
        ));
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        std::mem::take(&mut self.trace)
    }
}
