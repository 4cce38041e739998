//! State-based replicated values forming bounded join-semilattices.
//!
//! Six value kinds are provided: grow-only counter, PN-counter, grow-only
//! set, two-phase set (remove-wins), observed-remove set (add-wins) and a
//! last-writer-wins register. Every kind supports the same four primitives:
//!
//! - [`LatticeValue::merge`] — least upper bound of two states of the same
//!   kind; associative, commutative, idempotent.
//! - [`LatticeValue::leq`] — the partial order underlying the join.
//! - [`LatticeValue::update`] — a local, inflationary mutation.
//! - [`LatticeValue::query`] — the observable (sequential-looking) value.
//!
//! Values are immutable: every operation returns a fresh value, so states
//! can be shipped between replicas and merged in any order without
//! coordination. Set elements are `i64` throughout, which is all the
//! evaluation kernel needs.
//!
//! The sets make opposite concurrency choices on purpose: the two-phase set
//! is remove-wins (a removed element can never come back), the
//! observed-remove set is add-wins (a concurrent re-add survives a remove
//! that did not observe it).

pub mod generate;
mod text;

pub use text::{parse_lattice_value, parse_update_op, ParseLatticeError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Identifies the replica/node issuing an update. Totally ordered so that
/// canonical renderings and LWW tie-breaks are deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActorId(pub u32);

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Set elements and LWW payloads are plain integers.
pub type Elem = i64;

/// Unique tag attached to each observed-remove-set insertion.
///
/// Tags are `(actor, per-actor sequence number)` and are never reused: the
/// sequence number for an actor is derived from the largest tag that actor
/// has ever issued in the state, and only the actor itself issues tags in
/// its own name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    pub actor: ActorId,
    pub seq: u64,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.actor, self.seq)
    }
}

/// The six supported value kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatticeKind {
    GCounter,
    PnCounter,
    GSet,
    TwoPSet,
    OrSet,
    LwwRegister,
}

impl LatticeKind {
    pub fn name(self) -> &'static str {
        match self {
            LatticeKind::GCounter => "gcounter",
            LatticeKind::PnCounter => "pncounter",
            LatticeKind::GSet => "gset",
            LatticeKind::TwoPSet => "twopset",
            LatticeKind::OrSet => "orset",
            LatticeKind::LwwRegister => "lww",
        }
    }

    pub fn parse(s: &str) -> Option<LatticeKind> {
        match s {
            "gcounter" => Some(LatticeKind::GCounter),
            "pncounter" => Some(LatticeKind::PnCounter),
            "gset" => Some(LatticeKind::GSet),
            "twopset" => Some(LatticeKind::TwoPSet),
            "orset" => Some(LatticeKind::OrSet),
            "lww" => Some(LatticeKind::LwwRegister),
            _ => None,
        }
    }

    pub const ALL: [LatticeKind; 6] = [
        LatticeKind::GCounter,
        LatticeKind::PnCounter,
        LatticeKind::GSet,
        LatticeKind::TwoPSet,
        LatticeKind::OrSet,
        LatticeKind::LwwRegister,
    ];
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// LWW register payload: the winning write. `(stamp, actor, elem)` is
/// compared lexicographically; the element participates last so the order
/// stays total even if one actor assigns twice at the same millisecond.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LwwEntry {
    pub stamp_ms: u64,
    pub actor: ActorId,
    pub elem: Elem,
}

/// A state-based replicated value. The bottom element of each kind is the
/// empty mapping/set (LWW: no write yet).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LatticeValue {
    GCounter(BTreeMap<ActorId, u64>),
    PnCounter {
        inc: BTreeMap<ActorId, u64>,
        dec: BTreeMap<ActorId, u64>,
    },
    GSet(BTreeSet<Elem>),
    TwoPSet {
        added: BTreeSet<Elem>,
        removed: BTreeSet<Elem>,
    },
    OrSet {
        /// element -> every tag ever issued for it (live and tombstoned)
        entries: BTreeMap<Elem, BTreeSet<Tag>>,
        /// tombstoned tags; always a subset of the tags in `entries`
        removed: BTreeSet<Tag>,
    },
    Lww(Option<LwwEntry>),
}

/// Local mutation applied at one replica.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UpdateOp {
    Increment(ActorId),
    Decrement(ActorId),
    Add(Elem),
    Remove(Elem),
    Assign {
        elem: Elem,
        stamp_ms: u64,
        actor: ActorId,
    },
}

/// What a reader sees: counters collapse to an integer, sets to their
/// visible elements, the LWW register to its current element (`None` until
/// the first assign).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObservableValue {
    Count(i64),
    Elems(BTreeSet<Elem>),
    Register(Option<Elem>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("kind mismatch: {left} vs {right}")]
    KindMismatch {
        left: LatticeKind,
        right: LatticeKind,
    },
    #[error("invalid op {op} for {kind}")]
    InvalidOp { kind: LatticeKind, op: String },
    #[error("{kind} does not support set transformations")]
    InvalidKind { kind: LatticeKind },
}

fn pointwise_max(a: &BTreeMap<ActorId, u64>, b: &BTreeMap<ActorId, u64>) -> BTreeMap<ActorId, u64> {
    let mut out = a.clone();
    for (actor, &n) in b {
        let entry = out.entry(*actor).or_insert(0);
        *entry = (*entry).max(n);
    }
    out
}

fn pointwise_leq(a: &BTreeMap<ActorId, u64>, b: &BTreeMap<ActorId, u64>) -> bool {
    a.iter().all(|(actor, &n)| b.get(actor).copied().unwrap_or(0) >= n)
}

impl LatticeValue {
    /// The bottom element of `kind`: empty mappings/sets, no LWW write.
    pub fn bottom(kind: LatticeKind) -> LatticeValue {
        match kind {
            LatticeKind::GCounter => LatticeValue::GCounter(BTreeMap::new()),
            LatticeKind::PnCounter => LatticeValue::PnCounter {
                inc: BTreeMap::new(),
                dec: BTreeMap::new(),
            },
            LatticeKind::GSet => LatticeValue::GSet(BTreeSet::new()),
            LatticeKind::TwoPSet => LatticeValue::TwoPSet {
                added: BTreeSet::new(),
                removed: BTreeSet::new(),
            },
            LatticeKind::OrSet => LatticeValue::OrSet {
                entries: BTreeMap::new(),
                removed: BTreeSet::new(),
            },
            LatticeKind::LwwRegister => LatticeValue::Lww(None),
        }
    }

    pub fn kind(&self) -> LatticeKind {
        match self {
            LatticeValue::GCounter(_) => LatticeKind::GCounter,
            LatticeValue::PnCounter { .. } => LatticeKind::PnCounter,
            LatticeValue::GSet(_) => LatticeKind::GSet,
            LatticeValue::TwoPSet { .. } => LatticeKind::TwoPSet,
            LatticeValue::OrSet { .. } => LatticeKind::OrSet,
            LatticeValue::Lww(_) => LatticeKind::LwwRegister,
        }
    }

    /// Least upper bound of `self` and `other`.
    pub fn merge(&self, other: &LatticeValue) -> Result<LatticeValue, LatticeError> {
        match (self, other) {
            (LatticeValue::GCounter(a), LatticeValue::GCounter(b)) => {
                Ok(LatticeValue::GCounter(pointwise_max(a, b)))
            }
            (
                LatticeValue::PnCounter { inc: ai, dec: ad },
                LatticeValue::PnCounter { inc: bi, dec: bd },
            ) => Ok(LatticeValue::PnCounter {
                inc: pointwise_max(ai, bi),
                dec: pointwise_max(ad, bd),
            }),
            (LatticeValue::GSet(a), LatticeValue::GSet(b)) => {
                Ok(LatticeValue::GSet(a.union(b).copied().collect()))
            }
            (
                LatticeValue::TwoPSet { added: aa, removed: ar },
                LatticeValue::TwoPSet { added: ba, removed: br },
            ) => Ok(LatticeValue::TwoPSet {
                added: aa.union(ba).copied().collect(),
                removed: ar.union(br).copied().collect(),
            }),
            (
                LatticeValue::OrSet { entries: ae, removed: ar },
                LatticeValue::OrSet { entries: be, removed: br },
            ) => {
                let mut entries = ae.clone();
                for (elem, tags) in be {
                    entries.entry(*elem).or_default().extend(tags.iter().copied());
                }
                Ok(LatticeValue::OrSet {
                    entries,
                    removed: ar.union(br).copied().collect(),
                })
            }
            (LatticeValue::Lww(a), LatticeValue::Lww(b)) => Ok(LatticeValue::Lww((*a).max(*b))),
            _ => Err(LatticeError::KindMismatch {
                left: self.kind(),
                right: other.kind(),
            }),
        }
    }

    /// True iff `self` precedes-or-equals `other` in the lattice order.
    pub fn leq(&self, other: &LatticeValue) -> Result<bool, LatticeError> {
        match (self, other) {
            (LatticeValue::GCounter(a), LatticeValue::GCounter(b)) => Ok(pointwise_leq(a, b)),
            (
                LatticeValue::PnCounter { inc: ai, dec: ad },
                LatticeValue::PnCounter { inc: bi, dec: bd },
            ) => Ok(pointwise_leq(ai, bi) && pointwise_leq(ad, bd)),
            (LatticeValue::GSet(a), LatticeValue::GSet(b)) => Ok(a.is_subset(b)),
            (
                LatticeValue::TwoPSet { added: aa, removed: ar },
                LatticeValue::TwoPSet { added: ba, removed: br },
            ) => Ok(aa.is_subset(ba) && ar.is_subset(br)),
            (
                LatticeValue::OrSet { entries: ae, removed: ar },
                LatticeValue::OrSet { entries: be, removed: br },
            ) => {
                let entries_leq = ae.iter().all(|(elem, tags)| {
                    be.get(elem).is_some_and(|btags| tags.is_subset(btags))
                });
                Ok(entries_leq && ar.is_subset(br))
            }
            (LatticeValue::Lww(a), LatticeValue::Lww(b)) => Ok(a <= b),
            _ => Err(LatticeError::KindMismatch {
                left: self.kind(),
                right: other.kind(),
            }),
        }
    }

    /// Applies `op` at the replica identified by `actor`, returning the
    /// inflated state. `actor` is the updating replica; it supplies the tag
    /// identity for observed-remove insertions. Counter ops name their
    /// component explicitly in the op payload.
    pub fn update(&self, op: &UpdateOp, actor: ActorId) -> Result<LatticeValue, LatticeError> {
        let invalid = || LatticeError::InvalidOp {
            kind: self.kind(),
            op: text::render_update_op(op),
        };
        match (self, op) {
            (LatticeValue::GCounter(counts), UpdateOp::Increment(who)) => {
                let mut counts = counts.clone();
                *counts.entry(*who).or_insert(0) += 1;
                Ok(LatticeValue::GCounter(counts))
            }
            (LatticeValue::PnCounter { inc, dec }, UpdateOp::Increment(who)) => {
                let mut inc = inc.clone();
                *inc.entry(*who).or_insert(0) += 1;
                Ok(LatticeValue::PnCounter { inc, dec: dec.clone() })
            }
            (LatticeValue::PnCounter { inc, dec }, UpdateOp::Decrement(who)) => {
                let mut dec = dec.clone();
                *dec.entry(*who).or_insert(0) += 1;
                Ok(LatticeValue::PnCounter { inc: inc.clone(), dec })
            }
            (LatticeValue::GSet(elems), UpdateOp::Add(e)) => {
                let mut elems = elems.clone();
                elems.insert(*e);
                Ok(LatticeValue::GSet(elems))
            }
            (LatticeValue::TwoPSet { added, removed }, UpdateOp::Add(e)) => {
                let mut added = added.clone();
                added.insert(*e);
                Ok(LatticeValue::TwoPSet { added, removed: removed.clone() })
            }
            (LatticeValue::TwoPSet { added, removed }, UpdateOp::Remove(e)) => {
                let mut removed = removed.clone();
                removed.insert(*e);
                Ok(LatticeValue::TwoPSet { added: added.clone(), removed })
            }
            (LatticeValue::OrSet { entries, removed }, UpdateOp::Add(e)) => {
                let seq = entries
                    .values()
                    .flatten()
                    .filter(|t| t.actor == actor)
                    .map(|t| t.seq)
                    .max()
                    .unwrap_or(0)
                    + 1;
                let mut entries = entries.clone();
                entries.entry(*e).or_default().insert(Tag { actor, seq });
                Ok(LatticeValue::OrSet { entries, removed: removed.clone() })
            }
            (LatticeValue::OrSet { entries, removed }, UpdateOp::Remove(e)) => {
                // Tombstone exactly the tags observed live for `e` here.
                let mut removed = removed.clone();
                if let Some(tags) = entries.get(e) {
                    removed.extend(tags.iter().copied());
                }
                Ok(LatticeValue::OrSet { entries: entries.clone(), removed })
            }
            (LatticeValue::Lww(current), UpdateOp::Assign { elem, stamp_ms, actor }) => {
                let entry = LwwEntry {
                    stamp_ms: *stamp_ms,
                    actor: *actor,
                    elem: *elem,
                };
                Ok(LatticeValue::Lww((*current).max(Some(entry))))
            }
            _ => Err(invalid()),
        }
    }

    /// The observable value of this state.
    pub fn query(&self) -> ObservableValue {
        match self {
            LatticeValue::GCounter(counts) => {
                ObservableValue::Count(counts.values().map(|&n| n as i64).sum())
            }
            LatticeValue::PnCounter { inc, dec } => ObservableValue::Count(
                inc.values().map(|&n| n as i64).sum::<i64>()
                    - dec.values().map(|&n| n as i64).sum::<i64>(),
            ),
            LatticeValue::GSet(elems) => ObservableValue::Elems(elems.clone()),
            LatticeValue::TwoPSet { added, removed } => {
                ObservableValue::Elems(added.difference(removed).copied().collect())
            }
            LatticeValue::OrSet { entries, removed } => ObservableValue::Elems(
                entries
                    .iter()
                    .filter(|(_, tags)| tags.iter().any(|t| !removed.contains(t)))
                    .map(|(e, _)| *e)
                    .collect(),
            ),
            LatticeValue::Lww(entry) => ObservableValue::Register(entry.map(|e| e.elem)),
        }
    }

    /// Elementwise image of the observable set under `f`, as a value of the
    /// same kind. Set kinds only.
    ///
    /// The grow-only and observed-remove sets map structurally (the OR-set
    /// keeps its tag structure, merging tag sets when images collide). The
    /// two-phase set is rebuilt from its observable view: mapping its add-
    /// and remove-sets independently would let a removed element's image
    /// shadow a live element's image.
    pub fn map_set(&self, f: impl Fn(Elem) -> Elem) -> Result<LatticeValue, LatticeError> {
        match self {
            LatticeValue::GSet(elems) => {
                Ok(LatticeValue::GSet(elems.iter().map(|&e| f(e)).collect()))
            }
            LatticeValue::TwoPSet { .. } => {
                let visible = match self.query() {
                    ObservableValue::Elems(es) => es,
                    _ => unreachable!(),
                };
                Ok(LatticeValue::TwoPSet {
                    added: visible.iter().map(|&e| f(e)).collect(),
                    removed: BTreeSet::new(),
                })
            }
            LatticeValue::OrSet { entries, removed } => {
                let mut out: BTreeMap<Elem, BTreeSet<Tag>> = BTreeMap::new();
                for (elem, tags) in entries {
                    out.entry(f(*elem)).or_default().extend(tags.iter().copied());
                }
                Ok(LatticeValue::OrSet {
                    entries: out,
                    removed: removed.clone(),
                })
            }
            _ => Err(LatticeError::InvalidKind { kind: self.kind() }),
        }
    }

    /// Restriction of the observable set to elements satisfying `p`, as a
    /// value of the same kind. Set kinds only.
    pub fn filter_set(&self, p: impl Fn(Elem) -> bool) -> Result<LatticeValue, LatticeError> {
        match self {
            LatticeValue::GSet(elems) => Ok(LatticeValue::GSet(
                elems.iter().copied().filter(|&e| p(e)).collect(),
            )),
            LatticeValue::TwoPSet { added, removed } => Ok(LatticeValue::TwoPSet {
                added: added.iter().copied().filter(|&e| p(e)).collect(),
                removed: removed.iter().copied().filter(|&e| p(e)).collect(),
            }),
            LatticeValue::OrSet { entries, removed } => Ok(LatticeValue::OrSet {
                entries: entries
                    .iter()
                    .filter(|(&e, _)| p(e))
                    .map(|(&e, tags)| (e, tags.clone()))
                    .collect(),
                removed: removed.clone(),
            }),
            _ => Err(LatticeError::InvalidKind { kind: self.kind() }),
        }
    }

    /// Valid update ops for this kind, used by generators and validation.
    pub fn op_valid(&self, op: &UpdateOp) -> bool {
        matches!(
            (self.kind(), op),
            (LatticeKind::GCounter, UpdateOp::Increment(_))
                | (LatticeKind::PnCounter, UpdateOp::Increment(_))
                | (LatticeKind::PnCounter, UpdateOp::Decrement(_))
                | (LatticeKind::GSet, UpdateOp::Add(_))
                | (LatticeKind::TwoPSet, UpdateOp::Add(_))
                | (LatticeKind::TwoPSet, UpdateOp::Remove(_))
                | (LatticeKind::OrSet, UpdateOp::Add(_))
                | (LatticeKind::OrSet, UpdateOp::Remove(_))
                | (LatticeKind::LwwRegister, UpdateOp::Assign { .. })
        )
    }
}

impl ObservableValue {
    pub fn render(&self) -> String {
        match self {
            ObservableValue::Count(n) => format!("c:{n}"),
            ObservableValue::Elems(es) => {
                let inner: Vec<String> = es.iter().map(|e| e.to_string()).collect();
                format!("s:{{{}}}", inner.join(","))
            }
            ObservableValue::Register(Some(e)) => format!("r:{e}"),
            ObservableValue::Register(None) => "r:-".to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<ObservableValue, ParseLatticeError> {
        text::parse_observable(s)
    }
}
