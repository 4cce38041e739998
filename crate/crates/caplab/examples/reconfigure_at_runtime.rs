//! Policies are per-register annotations that can be swapped while the
//! system runs: accesses invoked after the switch follow the new policy,
//! in-flight plans are untouched.
//!
//! Here a register starts with a generous 1000ms staleness bound, gets
//! tightened to 10ms mid-run, and later becomes fully synchronized —
//! at which point an active partition starts blocking its readers.
//!
//! ```bash
//! cargo run -p caplab --example reconfigure_at_runtime
//! ```

use std::collections::BTreeSet;

use caplab::harness::scenario::WorkloadOp;
use caplab::harness::{Runtime, Scenario};
use caplab::lattice::LatticeKind;
use caplab::policy::{AustereMode, Policy};
use caplab::replica::{RegisterDecl, RegisterId};
use caplab::simnet::{Fault, LinkModel, NodeId, PartitionConfig};

fn main() {
    let replicas: BTreeSet<NodeId> = (0..2).map(NodeId).collect();
    let spry = |staleness| Policy::Spry { max_staleness_ms: Some(staleness), latency_bound_ms: None };
    let reads: Vec<WorkloadOp> = [100u64, 460, 501, 540, 700]
        .into_iter()
        .map(|at| WorkloadOp::new(at, NodeId(1), None, "(deref doc)").unwrap())
        .collect();
    let scenario = Scenario {
        nodes: 2,
        link: LinkModel::fixed(5),
        registers: vec![RegisterDecl {
            id: RegisterId::new("doc"),
            kind: LatticeKind::LwwRegister,
            primary: NodeId(0),
            replicas,
            policy: spry(1_000),
        }],
        workload: {
            let mut w = vec![WorkloadOp::new(10, NodeId(0), None, "(store doc (assign 7))").unwrap()];
            w.extend(reads);
            w
        },
        faults: vec![(
            650,
            Fault::Partition(PartitionConfig::new(vec![
                [NodeId(0)].into_iter().collect(),
                [NodeId(1)].into_iter().collect(),
            ])),
        )],
        horizon: 900,
        seed: 2,
        gossip_period: None,
    };

    let mut rt = Runtime::new(scenario);
    rt.schedule_reconfigure(500, RegisterId::new("doc"), spry(10));
    rt.schedule_reconfigure(620, RegisterId::new("doc"), Policy::Austere(AustereMode::Pure));
    let out = rt.run();

    println!("policy schedule: staleness=1000 at t=0, staleness=10 at t=500, austere at t=620");
    println!("partition [0 | 1] from t=650\n");
    println!("reads at node 1:");
    for record in out.history.ops.iter().filter(|o| o.index > 0) {
        let fate = match &record.outcome {
            caplab::harness::history::OutcomeRecord::Completed { value } => format!(
                "value={value} response={}ms age={}ms",
                record.response_ms.unwrap(),
                record.max_age_ms.unwrap()
            ),
            caplab::harness::history::OutcomeRecord::Blocked { reason } => format!("blocked ({reason})"),
            caplab::harness::history::OutcomeRecord::Failed { label } => format!("failed ({label})"),
        };
        println!("  t={:<4} policy={:<8} {fate}", record.at, record.policy);
    }
    println!();
    println!("t=100 and t=460 read the 1000ms-bound cache without waiting;");
    println!("after tightening, t=501 and t=540 must refresh first (10ms each);");
    println!("once austere, the t=700 read blocks behind the partition.");
}
