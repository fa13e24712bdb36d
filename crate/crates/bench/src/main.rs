use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use cortex_bench::{
    check_fixture, emit_report, load_fixture, render_report, run_bench, AgentConfig, BenchConfig, BenchError, EvalBatch,
    ReportFormat,
};
use cortex_core::agents::{RemoteBackend, RemoteConfig};
use cortex_core::pipeline::RateConfig;

#[derive(Parser)]
#[command(name = "cortex-bench", about = "Run and report the eight-scenario benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Scripted,
    /// Completion endpoint configured through CORTEX_BACKEND_* variables.
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trial batches.
    Run {
        /// Task ids (1-8); repeat or comma-separate. Defaults to all.
        #[arg(long = "task", value_delimiter = ',')]
        tasks: Vec<u8>,
        #[arg(long, value_enum, default_value = "full")]
        config: AgentConfig,
        /// First seed of the batch.
        #[arg(long, default_value_t = 0)]
        seeds: u64,
        /// Trials per eval.
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        evals: usize,
        #[arg(long, value_enum, default_value = "scripted")]
        backend: Backend,
        /// Loop periods in ticks as reactive:memory:deliberative.
        #[arg(long, default_value = "1:100:1000")]
        ratios: String,
        /// Output directory for batch.json, report.md and traces.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        traces: bool,
    },
    /// Recompute the averages of a fixture file of published tables.
    Aggregate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Render a saved batch.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// md, csv or json-doc.
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_ratios(text: &str) -> Result<RateConfig, BenchError> {
    let parts: Vec<u64> = text
        .split(':')
        .map(|p| p.trim().parse::<u64>().map_err(|e| BenchError::Config(format!("bad ratio {p:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [r, m, d] => Ok(RateConfig::new(*r, *m, *d)?),
        _ => Err(BenchError::Config(format!("expected three periods, got {text:?}"))),
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run { tasks, config, seeds, trials, evals, backend, ratios, out, traces } => {
            let tasks = if tasks.is_empty() { (1..=8).collect() } else { tasks };
            let mut cfg = BenchConfig::new(tasks, config);
            cfg.base_seed = seeds;
            cfg.trials_per_eval = trials;
            cfg.evals = evals;
            cfg.episode.rates = parse_ratios(&ratios)?;
            if let Backend::Remote = backend {
                cfg.episode.backend = Arc::new(RemoteBackend::http(RemoteConfig::from_env()?));
            }
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
                if traces {
                    cfg.episode.trace_dir = Some(dir.clone());
                }
            }
            cfg.out = out.clone();
            let batch = run_bench(&cfg)?;
            print!("{}", render_report(&batch, ReportFormat::Markdown));
            if let Some(dir) = &out {
                emit_report(&batch, ReportFormat::Markdown, &dir.join("report.md"))?;
                emit_report(&batch, ReportFormat::Csv, &dir.join("report.csv"))?;
            }
        }
        Command::Aggregate { input } => {
            let checks = check_fixture(&load_fixture(&input)?)?;
            let mut mismatches = 0;
            for c in &checks {
                let mark = if c.matches() { "ok" } else { "MISMATCH" };
                mismatches += usize::from(!c.matches());
                println!(
                    "{:<20} {:<14} printed {:>6} computed {:>6} std {:.2} {mark}",
                    c.model, c.category, c.printed, c.computed, c.std
                );
            }
            println!("{} cells, {mismatches} differ from the printed average", checks.len());
        }
        Command::Report { input, format, out } => {
            let batch = EvalBatch::from_json(&std::fs::read_to_string(&input)?)?;
            let format: ReportFormat = format.parse()?;
            match out {
                Some(path) => emit_report(&batch, format, &path)?,
                None => print!("{}", render_report(&batch, format)),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
