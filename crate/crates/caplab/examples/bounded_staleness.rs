//! The staleness arm: a register annotated `spry staleness=60` never
//! serves a value older than 60ms. Fresh-enough reads are local; stale
//! reads refresh from the primary first; and when the primary is
//! unreachable the read blocks rather than lie.
//!
//! ```bash
//! cargo run -p caplab --example bounded_staleness
//! ```

use std::path::Path;

use caplab::harness::{check_staleness, load_scenario, run_scenario};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/spry_staleness.scn");
    let out = run_scenario(load_scenario(path).expect("fixture parses"), None, None);

    println!("op  t_invoke  node  outcome                                                   wait_ms  served_age");
    for record in &out.history.ops {
        let outcome = match &record.outcome {
            caplab::harness::history::OutcomeRecord::Completed { value } => {
                format!("completed value={value}")
            }
            caplab::harness::history::OutcomeRecord::Blocked { reason } => {
                format!("blocked ({reason})")
            }
            caplab::harness::history::OutcomeRecord::Failed { label } => format!("failed ({label})"),
        };
        println!(
            "{:<3} {:<9} {:<5} {outcome:<57} {:<8} {}",
            record.index,
            record.at,
            record.node,
            record.response_ms.map_or("-".into(), |v| v.to_string()),
            record.max_age_ms.map_or("-".into(), |v| v.to_string()),
        );
    }

    let violations = check_staleness(&out.history);
    println!("\nstaleness audit over {} served reads:", out.history.reads.len());
    match violations.len() {
        0 => println!("  no violations: nothing older than its bound was ever served"),
        n => {
            println!("  {n} violations:");
            for v in violations {
                println!("    {v}");
            }
        }
    }
}
