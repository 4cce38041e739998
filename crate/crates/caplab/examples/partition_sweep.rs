//! Sweep the partition duration over a scenario that holds one register
//! per policy, and watch each policy pay its own price as the outage
//! grows.
//!
//! ```bash
//! cargo run -p caplab --example partition_sweep
//! ```

use std::path::Path;

use caplab::harness::{load_scenario, render_sweep, sweep};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/sweep_mixed.scn");
    let scenario = load_scenario(path).expect("fixture parses");
    let durations = [0, 50, 100, 150, 200, 250];
    let table = sweep(&scenario, "partition-duration", &durations).expect("sweep runs");
    print!("{}", render_sweep(&table));
    println!();
    println!("lasp never waits, so its column is flat at 1.0; spry answers from");
    println!("cache by its deadline; austere loses exactly the ops whose window");
    println!("the partition covers.");
}
