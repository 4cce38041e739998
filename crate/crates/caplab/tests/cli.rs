//! End-to-end checks of the `caplab` binary: run/check/sweep, output
//! files, exit codes, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_caplab"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn run_writes_outputs_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = bin()
            .args(["run", "--scenario"])
            .arg(fixture("cap_austere.scn"))
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        assert!(stdout(&output).contains("availability\t0.545455"));
    }
    for file in ["trace.txt", "history.tsv", "metrics.tsv"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn run_honors_seed_and_until_overrides() {
    let output = bin()
        .args(["run", "--scenario"])
        .arg(fixture("gossip_small.scn"))
        .args(["--seed", "9", "--until", "50"])
        .output()
        .unwrap();
    assert!(output.status.success());
    // Horizon cut to 50ms: the t=250 read never ran, so only one op total.
    assert!(stdout(&output).contains("ops_total\t1"), "{}", stdout(&output));
}

#[test]
fn check_subcommand_exit_codes() {
    let cases = [
        ("checks/convergence_ok.hist", "convergence", true),
        ("checks/convergence_bad.hist", "convergence", false),
        ("checks/serializable_ok.hist", "serializable", true),
        ("checks/serializable_bad.hist", "serializable", false),
        ("checks/staleness_ok.hist", "staleness", true),
        ("checks/staleness_bad.hist", "staleness", false),
    ];
    for (file, kind, pass) in cases {
        let output = bin()
            .args(["check", "--history"])
            .arg(fixture(file))
            .args(["--kind", kind])
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(if pass { 0 } else { 1 }), "{file}");
        if pass {
            assert!(stdout(&output).contains("pass"), "{file}: {}", stdout(&output));
        } else {
            assert!(stdout(&output).contains("FAIL"), "{file}: {}", stdout(&output));
        }
    }
}

#[test]
fn check_run_history_round_trip() {
    // A history written by `run` is accepted by `check`.
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", "--scenario"])
        .arg(fixture("cap_spry.scn"))
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    for kind in ["convergence", "serializable", "staleness"] {
        let output = bin()
            .args(["check", "--history"])
            .arg(dir.path().join("history.tsv"))
            .args(["--kind", kind])
            .output()
            .unwrap();
        assert!(output.status.success(), "{kind}: {}", stdout(&output));
    }
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["sweep", "--scenario"])
        .arg(fixture("sweep_mixed.scn"))
        .args(["--param", "partition-duration", "--values", "0,100,200"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let table = std::fs::read_to_string(dir.path().join("sweep.tsv")).unwrap();
    assert_eq!(table.lines().count(), 5, "header comment + columns + 3 rows:\n{table}");
    assert!(table.contains("avail_austere"));
}

#[test]
fn usage_errors_exit_2() {
    let output = bin()
        .args(["sweep", "--scenario"])
        .arg(fixture("sweep_mixed.scn"))
        .args(["--param", "nonsense", "--values", "1"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let output = bin().args(["run", "--scenario", "/nonexistent.scn"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}
