use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dropsim_core::{parse_scenario, run_scenario, summarize_trace_file};

#[derive(Debug, Parser)]
#[command(
    name = "dropsim",
    version,
    about = "Packet-level simulator for TCP on/off sources behind a bottleneck router"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write the trace, plot data and report.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, env = "DROPSIM_OUT", default_value = ".")]
        out_dir: PathBuf,
        /// Only print errors.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and check a scenario without running it.
    Validate { scenario: PathBuf },
    /// Recompute packet accounting from a trace file.
    Report { trace: PathBuf },
}

fn load(path: &PathBuf) -> Result<dropsim_core::Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("{}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out_dir,
            quiet,
        } => {
            let mut s = load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let (report, files) =
                run_scenario(&s, &out_dir).with_context(|| format!("running {}", scenario.display()))?;
            if !quiet {
                print!("{}", report.render());
                println!("wall_clock_ms: {:.3}", report.wall_clock.as_secs_f64() * 1e3);
                println!("trace: {}", files.trace.display());
                for p in &files.plots {
                    println!("plot: {}", p.display());
                }
                println!("report: {}", files.report.display());
                let plots: Vec<String> = files.plots.iter().map(|p| p.display().to_string()).collect();
                println!("plot-cmd: xgraph -geometry 600x400 {}", plots.join(" "));
            }
        }
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            println!(
                "ok: {} nodes, {} links, {} agents, {} apps, duration {} s",
                s.nodes.len(),
                s.links.len(),
                s.agents.len(),
                s.apps.len(),
                s.duration
            );
        }
        Command::Report { trace } => {
            let summary = summarize_trace_file(&trace).with_context(|| format!("reading {}", trace.display()))?;
            print!("{}", summary.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
