use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use caplab::harness::{
    check_convergence, check_serializable, check_staleness, load_history, load_scenario,
    render_history, render_metrics, render_sweep, run_scenario, sweep,
};

/// Deterministic workbench for consistency/availability tradeoffs.
#[derive(Parser)]
#[command(name = "caplab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and report metrics (optionally writing the
    /// trace, history and metrics files).
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop at this simulated time instead of the scenario horizon.
        #[arg(long, value_name = "MS")]
        until: Option<u64>,
        /// Directory for trace.txt, history.tsv and metrics.tsv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Audit a recorded history.
    Check {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, value_enum)]
        kind: CheckKind,
    },
    /// Run a scenario once per parameter value and tabulate the results.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0,100,200.
        #[arg(long, value_delimiter = ',')]
        values: Vec<u64>,
        /// Directory for sweep.tsv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckKind {
    Convergence,
    Serializable,
    Staleness,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { scenario, seed, until, out } => {
            let scenario = load_scenario(&scenario).map_err(|e| e.to_string())?;
            let output = run_scenario(scenario, seed, until);
            print!("{}", render_metrics(&output.metrics));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                write(&dir.join("trace.txt"), &output.trace)?;
                write(&dir.join("history.tsv"), &render_history(&output.history))?;
                write(&dir.join("metrics.tsv"), &render_metrics(&output.metrics))?;
                println!("wrote {}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { history, kind } => {
            let history = load_history(&history).map_err(|e| e.to_string())?;
            let pass = match kind {
                CheckKind::Convergence => {
                    let report = check_convergence(&history);
                    if report.pass {
                        println!("convergence: pass ({} replica states match the oracle)", history.states.len());
                    } else {
                        println!("convergence: FAIL");
                        for diff in &report.diffs {
                            println!("  {diff}");
                        }
                    }
                    report.pass
                }
                CheckKind::Serializable => {
                    let report = check_serializable(&history).map_err(|e| e.to_string())?;
                    match &report.witness {
                        Some(order) => {
                            let order: Vec<String> = order.iter().map(|t| t.to_string()).collect();
                            println!("serializable: pass (witness order: {})", order.join(" -> "));
                        }
                        None => println!("serializable: FAIL (no explaining order among {} txns)", history.txns.len()),
                    }
                    report.pass
                }
                CheckKind::Staleness => {
                    let violations = check_staleness(&history);
                    if violations.is_empty() {
                        println!("staleness: pass ({} reads audited)", history.reads.len());
                    } else {
                        println!("staleness: FAIL ({} violations)", violations.len());
                        for v in &violations {
                            println!("  {v}");
                        }
                    }
                    violations.is_empty()
                }
            };
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep { scenario, param, values, out } => {
            let scenario = load_scenario(&scenario).map_err(|e| e.to_string())?;
            let table = sweep(&scenario, &param, &values).map_err(|e| e.to_string())?;
            let rendered = render_sweep(&table);
            print!("{rendered}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                write(&dir.join("sweep.tsv"), &rendered)?;
                println!("wrote {}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write(path: &std::path::Path, content: &str) -> Result<(), String> {
    std::fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()))
}
