//! Fully synchronized registers: every access is a locking transaction
//! across all replicas, committed with a prepare/vote round.
//!
//! Part one runs concurrent multi-register transactions and checks the
//! committed history is serializable (with the witness order). Part two
//! shows the price: under a partition a pure-mode transaction simply
//! blocks, while measured mode aborts at its deadline.
//!
//! ```bash
//! cargo run -p caplab --example two_phase_commit
//! ```

use std::collections::BTreeSet;

use caplab::harness::scenario::WorkloadOp;
use caplab::harness::{check_serializable, run_scenario, Runtime, Scenario};
use caplab::lattice::{ActorId, LatticeKind, UpdateOp};
use caplab::policy::{AustereMode, Policy};
use caplab::replica::{RegisterDecl, RegisterId};
use caplab::simnet::{Fault, LinkModel, NodeId, PartitionConfig};
use caplab::txn::{TxnOp, TxnSpec};

fn austere_register(id: &str, mode: AustereMode) -> RegisterDecl {
    let replicas: BTreeSet<NodeId> = (0..3).map(NodeId).collect();
    RegisterDecl {
        id: RegisterId::new(id),
        kind: LatticeKind::GCounter,
        primary: NodeId(0),
        replicas,
        policy: Policy::Austere(mode),
    }
}

fn main() {
    // -- concurrent transactions, one serial story ------------------------
    let scenario = Scenario {
        nodes: 3,
        link: LinkModel::fixed(5),
        registers: vec![
            austere_register("checking", AustereMode::Pure),
            austere_register("savings", AustereMode::Pure),
        ],
        workload: Vec::new(),
        faults: Vec::new(),
        horizon: 2_000,
        seed: 5,
        gossip_period: None,
    };
    let mut rt = Runtime::new(scenario);
    for coordinator in 0..3u32 {
        rt.schedule_txn(
            100, // all at the same instant: locks serialize them
            TxnSpec {
                coordinator: NodeId(coordinator),
                ops: vec![
                    TxnOp::Read(RegisterId::new("checking")),
                    TxnOp::Write(RegisterId::new("checking"), UpdateOp::Increment(ActorId(coordinator))),
                    TxnOp::Write(RegisterId::new("savings"), UpdateOp::Increment(ActorId(coordinator))),
                ],
            },
            None,
        )
        .unwrap();
    }
    let out = rt.run();
    println!("committed transactions:");
    for txn in &out.history.txns {
        println!(
            "  txn {} (coordinator {}, committed t={})",
            txn.txn, txn.coordinator, txn.committed_ms
        );
    }
    println!("\nfinal states (identical at every replica):");
    for (node, reg, state) in &out.history.states {
        println!("  node {node} {reg}: {state}");
    }
    let report = check_serializable(&out.history).expect("small history");
    let witness: Vec<String> =
        report.witness.iter().flatten().map(|t| t.to_string()).collect();
    println!(
        "serializability: {} (witness order {})",
        if report.pass { "pass" } else { "FAIL" },
        witness.join(" -> ")
    );

    // -- what a partition costs -------------------------------------------
    let partition = (
        50u64,
        Fault::Partition(PartitionConfig::new(vec![
            [NodeId(0)].into_iter().collect(),
            [NodeId(1), NodeId(2)].into_iter().collect(),
        ])),
    );
    for (label, mode) in [
        ("pure (blocks forever)", AustereMode::Pure),
        ("measured deadline=120ms (aborts)", AustereMode::Measured { deadline_ms: 120 }),
    ] {
        let scenario = Scenario {
            nodes: 3,
            link: LinkModel::fixed(5),
            registers: vec![austere_register("checking", mode)],
            workload: vec![WorkloadOp::new(100, NodeId(1), None, "(store checking (inc))").unwrap()],
            faults: vec![partition.clone()],
            horizon: 1_000,
            seed: 5,
            gossip_period: None,
        };
        let out = run_scenario(scenario, None, None);
        println!("\nunder partition, {label}:");
        println!("  op outcome: {:?}", out.history.ops[0].outcome);
    }
}
