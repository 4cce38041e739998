//! caplab: a deterministic workbench for consistency/availability tradeoffs.
//!
//! The library models a small distributed runtime — named, replicated,
//! lattice-valued registers driven by a call-by-value lambda kernel — and
//! runs it on a seeded, single-threaded network simulator. Each register is
//! annotated with one of three synchronization policies:
//!
//! - **lasp**: always serve and update the local replica; replicas converge
//!   in the background via anti-entropy gossip.
//! - **austere**: every access runs two-phase locking across all replicas
//!   plus two-phase commit, giving a single system image and blocking when
//!   any replica is unreachable.
//! - **spry**: declarative bounds — serve only values fresher than a
//!   staleness bound, and/or answer within a latency bound falling back to
//!   the local cache.
//!
//! Scenarios (nodes, links, registers, workload, faults) are plain text
//! files; runs are deterministic per `(scenario, seed)` and produce a trace,
//! an operation history, and metrics. Checkers audit convergence against a
//! fold-merge oracle, serializability of committed transactions by
//! brute-force permutation, and staleness/latency bounds from the history.
//!
//! See the crate examples for runnable tours of each capability, and the
//! `caplab` binary for the `run` / `check` / `sweep` command line.

pub mod harness;
pub mod kernel;
pub mod lattice;
pub mod policy;
pub mod replica;
pub mod simnet;
pub mod txn;
