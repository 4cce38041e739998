//! Consistency policies and the access plans they hand the evaluator.
//!
//! Every register carries one policy:
//!
//! - `Lasp` serves and mutates the local replica immediately, always.
//! - `Austere` routes every access through a locking transaction across all
//!   replicas; unreachable replicas block it (pure mode) or abort it at a
//!   deadline (measured mode).
//! - `Spry` bounds reads declaratively. With a staleness bound, a local
//!   value older than the bound forces a refresh from the primary — and if
//!   the refresh cannot complete, the read stays blocked rather than serve
//!   stale data. With a latency bound, a refresh is raced against a
//!   deadline and the local cache answers if it loses. With both, the
//!   deadline fallback is served only if it also meets the staleness
//!   bound; otherwise the read fails. Writes under `Spry` behave like
//!   `Lasp` writes: local, propagated asynchronously.
//!
//! Policies can be swapped at runtime per register: accesses invoked at or
//! after the switch use the new policy, in-flight plans are untouched.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::replica::{RegisterDecl, RegisterId};
use crate::simnet::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AustereMode {
    /// Block for as long as any replica is unreachable.
    Pure,
    /// Abort the transaction if it has not committed within the deadline.
    Measured { deadline_ms: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Lasp,
    Austere(AustereMode),
    Spry {
        max_staleness_ms: Option<u64>,
        latency_bound_ms: Option<u64>,
    },
}

impl Policy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            Policy::Lasp => Ok(()),
            Policy::Austere(AustereMode::Pure) => Ok(()),
            Policy::Austere(AustereMode::Measured { deadline_ms }) => {
                if *deadline_ms == 0 {
                    Err(PolicyError::InvalidPolicy("measured deadline must be > 0".into()))
                } else {
                    Ok(())
                }
            }
            Policy::Spry { max_staleness_ms, latency_bound_ms } => {
                if max_staleness_ms.is_none() && latency_bound_ms.is_none() {
                    return Err(PolicyError::InvalidPolicy(
                        "spry needs a staleness bound, a latency bound, or both".into(),
                    ));
                }
                if max_staleness_ms == &Some(0) || latency_bound_ms == &Some(0) {
                    return Err(PolicyError::InvalidPolicy("spry bounds must be > 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Short label used for grouping metrics.
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Lasp => "lasp",
            Policy::Austere(_) => "austere",
            Policy::Spry { .. } => "spry",
        }
    }

    /// The scenario-file spelling of this policy.
    pub fn render(&self) -> String {
        match self {
            Policy::Lasp => "lasp".to_string(),
            Policy::Austere(AustereMode::Pure) => "austere mode=pure".to_string(),
            Policy::Austere(AustereMode::Measured { deadline_ms }) => {
                format!("austere mode=measured deadline={deadline_ms}")
            }
            Policy::Spry { max_staleness_ms, latency_bound_ms } => {
                let mut out = "spry".to_string();
                if let Some(s) = max_staleness_ms {
                    out.push_str(&format!(" staleness={s}"));
                }
                if let Some(l) = latency_bound_ms {
                    out.push_str(&format!(" latency={l}"));
                }
                out
            }
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// How a suspended register access gets its value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResumePlan {
    /// Serve the local replica immediately; no simulated time passes.
    ResumeNow,
    /// Resume when the named synchronization completes; block until then.
    ResumeAfter(SyncKind),
    /// Start a refresh from the primary and race it against `deadline`.
    /// If the fresh state has not arrived by then, serve the local cache —
    /// gated by the staleness bound when one is set.
    ResumeAtDeadline {
        deadline: u64,
        max_staleness_ms: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncKind {
    ReadTxn,
    WriteTxn,
    RefreshFromPrimary,
}

/// Plan for a read of `reg` at `node` invoked at `now`, where the local
/// replica's age is `age_ms`.
pub fn decide_on_deref(
    policy: &Policy,
    reg: &RegisterDecl,
    node: NodeId,
    age_ms: u64,
    now: u64,
) -> ResumePlan {
    match policy {
        Policy::Lasp => ResumePlan::ResumeNow,
        Policy::Austere(_) => ResumePlan::ResumeAfter(SyncKind::ReadTxn),
        Policy::Spry { max_staleness_ms, latency_bound_ms } => {
            // The primary is the origin: locally fresh by definition.
            if node == reg.primary {
                return ResumePlan::ResumeNow;
            }
            match (max_staleness_ms, latency_bound_ms) {
                (Some(bound), None) => {
                    if age_ms <= *bound {
                        ResumePlan::ResumeNow
                    } else {
                        ResumePlan::ResumeAfter(SyncKind::RefreshFromPrimary)
                    }
                }
                (staleness, Some(latency)) => ResumePlan::ResumeAtDeadline {
                    deadline: now + latency,
                    max_staleness_ms: *staleness,
                },
                (None, None) => unreachable!("validated: spry has at least one bound"),
            }
        }
    }
}

/// Plan for a store of `reg` at `node`. Writes are local under `Lasp` and
/// `Spry`; `Austere` routes them through a write transaction.
pub fn decide_on_store(policy: &Policy) -> ResumePlan {
    match policy {
        Policy::Lasp | Policy::Spry { .. } => ResumePlan::ResumeNow,
        Policy::Austere(_) => ResumePlan::ResumeAfter(SyncKind::WriteTxn),
    }
}

/// Live policy assignments; starts from the register declarations and is
/// mutated only by reconfiguration.
#[derive(Clone, Debug, Default)]
pub struct PolicyTable {
    current: BTreeMap<RegisterId, Policy>,
}

impl PolicyTable {
    pub fn from_decls<'a>(decls: impl IntoIterator<Item = &'a RegisterDecl>) -> PolicyTable {
        PolicyTable {
            current: decls
                .into_iter()
                .map(|d| (d.id.clone(), d.policy.clone()))
                .collect(),
        }
    }

    pub fn policy(&self, reg: &RegisterId) -> Option<&Policy> {
        self.current.get(reg)
    }

    /// Swaps the policy for `reg`. Accesses invoked from now on see the
    /// new policy; plans already made keep running under the old one.
    pub fn reconfigure(&mut self, reg: &RegisterId, policy: Policy) -> Result<(), PolicyError> {
        policy.validate()?;
        match self.current.get_mut(reg) {
            Some(slot) => {
                *slot = policy;
                Ok(())
            }
            None => Err(PolicyError::InvalidPolicy(format!("unknown register {reg}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RegisterId, &Policy)> {
        self.current.iter()
    }
}
