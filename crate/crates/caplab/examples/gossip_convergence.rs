//! Anti-entropy in action: replicas diverge under a partition, gossip
//! repairs them after it heals, and the convergence checker verifies the
//! final states against the fold-merge oracle of all update deltas.
//!
//! ```bash
//! cargo run -p caplab --example gossip_convergence
//! ```

use std::collections::BTreeSet;

use caplab::harness::scenario::{validate_scenario, WorkloadOp};
use caplab::harness::{check_convergence, run_scenario, Scenario};
use caplab::lattice::LatticeKind;
use caplab::policy::Policy;
use caplab::replica::{RegisterDecl, RegisterId};
use caplab::simnet::{Fault, LinkModel, NodeId, PartitionConfig};

fn main() {
    let replicas: BTreeSet<NodeId> = (0..3).map(NodeId).collect();
    let scenario = Scenario {
        nodes: 3,
        link: LinkModel::fixed(5),
        registers: vec![RegisterDecl {
            id: RegisterId::new("basket"),
            kind: LatticeKind::OrSet,
            primary: NodeId(0),
            replicas,
            policy: Policy::Lasp,
        }],
        workload: vec![
            WorkloadOp::new(10, NodeId(0), None, "(store basket (add 1))").unwrap(),
            // Both sides of the partition keep writing.
            WorkloadOp::new(150, NodeId(0), None, "(store basket (add 2))").unwrap(),
            WorkloadOp::new(160, NodeId(1), None, "(store basket (add 3))").unwrap(),
            WorkloadOp::new(170, NodeId(2), None, "(store basket (remove 1))").unwrap(),
            // Reads observe whatever the local replica has.
            WorkloadOp::new(250, NodeId(0), None, "(deref basket)").unwrap(),
            WorkloadOp::new(250, NodeId(1), None, "(deref basket)").unwrap(),
            WorkloadOp::new(600, NodeId(0), None, "(deref basket)").unwrap(),
            WorkloadOp::new(600, NodeId(1), None, "(deref basket)").unwrap(),
        ],
        faults: vec![
            (
                100,
                Fault::Partition(PartitionConfig::new(vec![
                    [NodeId(0)].into_iter().collect(),
                    [NodeId(1), NodeId(2)].into_iter().collect(),
                ])),
            ),
            (300, Fault::Heal),
        ],
        horizon: 800,
        seed: 21,
        gossip_period: Some(50),
    };
    validate_scenario(&scenario).expect("scenario is valid");
    let out = run_scenario(scenario, None, None);

    println!("reads (node, time -> value):");
    for record in out.history.ops.iter().filter(|o| o.program.starts_with("(deref")) {
        if let caplab::harness::history::OutcomeRecord::Completed { value } = &record.outcome {
            println!("  node {} at t={:<4} -> {value}", record.node, record.at);
        }
    }

    println!("\nfinal replica states:");
    for (node, reg, state) in &out.history.states {
        println!("  node {node} {reg}: {state}");
    }

    let report = check_convergence(&out.history);
    println!(
        "\nconvergence check: {} (converged {}ms after the last update, {} messages)",
        if report.pass { "pass" } else { "FAIL" },
        out.metrics.convergence_ms.map_or("-".into(), |ms| ms.to_string()),
        out.metrics.messages_delivered,
    );
}
