//! The latency arm: a register annotated `spry latency=30` races a
//! refresh from the primary against a 30ms deadline. If the fresh value
//! loses the race (slow link, partition), the local cache answers at
//! exactly the deadline.
//!
//! ```bash
//! cargo run -p caplab --example latency_bound
//! ```

use std::collections::BTreeSet;

use caplab::harness::scenario::WorkloadOp;
use caplab::harness::{run_scenario, Scenario};
use caplab::lattice::LatticeKind;
use caplab::policy::Policy;
use caplab::replica::{RegisterDecl, RegisterId};
use caplab::simnet::{Fault, Latency, LinkModel, NodeId, PartitionConfig};

fn main() {
    let replicas: BTreeSet<NodeId> = (0..2).map(NodeId).collect();
    let scenario = Scenario {
        nodes: 2,
        // 4..22ms one-way: a refresh round trip sometimes beats 30ms and
        // sometimes does not.
        link: LinkModel { latency: Latency::Uniform { min_ms: 4, max_ms: 22 }, drop_prob: 0.0 },
        registers: vec![RegisterDecl {
            id: RegisterId::new("index"),
            kind: LatticeKind::GSet,
            primary: NodeId(0),
            replicas,
            policy: Policy::Spry { max_staleness_ms: None, latency_bound_ms: Some(30) },
        }],
        workload: vec![
            WorkloadOp::new(10, NodeId(0), None, "(store index (add 1))").unwrap(),
            WorkloadOp::new(20, NodeId(0), None, "(store index (add 2))").unwrap(),
            WorkloadOp::new(60, NodeId(1), None, "(deref index)").unwrap(),
            WorkloadOp::new(120, NodeId(1), None, "(deref index)").unwrap(),
            WorkloadOp::new(180, NodeId(1), None, "(deref index)").unwrap(),
            // Partitioned: the refresh can never answer.
            WorkloadOp::new(400, NodeId(1), None, "(deref index)").unwrap(),
            WorkloadOp::new(460, NodeId(1), None, "(deref index)").unwrap(),
        ],
        faults: vec![(
            300,
            Fault::Partition(PartitionConfig::new(vec![
                [NodeId(0)].into_iter().collect(),
                [NodeId(1)].into_iter().collect(),
            ])),
        )],
        horizon: 600,
        seed: 17,
        gossip_period: None,
    };
    let out = run_scenario(scenario, None, None);

    println!("reads at node 1 (latency bound 30ms):");
    println!("t_invoke  value    response_ms  served_age  source");
    for record in out.history.ops.iter().filter(|o| o.program.starts_with("(deref")) {
        if let caplab::harness::history::OutcomeRecord::Completed { value } = &record.outcome {
            let response = record.response_ms.unwrap();
            let source = if response < 30 { "fresh from primary" } else { "local cache at the deadline" };
            println!(
                "{:<9} {value:<8} {response:<12} {:<11} {source}",
                record.at,
                record.max_age_ms.unwrap(),
            );
        }
    }
    println!("\nmax response ever: {}ms (the bound holds under partition too)", out.metrics.latency_max_ms);
}
