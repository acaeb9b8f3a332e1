use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use phyfed::scenario::{analyze_transcripts, run_seeds, Command, ScenarioConfig, ScenarioReport};

/// Simulator for phase-masked secure aggregation in federated learning.
#[derive(Debug, Parser)]
#[command(name = "phyfed", version)]
struct Cli {
    /// Scenario config (JSON). Required except for `analyze`.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the seed in the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory for history.csv, transcripts.jsonl and report.json.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Number of consecutive seeds to run in parallel, each in DIR/seed-N.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train along the secure and the plaintext-quantized paths.
    Run,
    /// Execute a single aggregation round.
    Round,
    /// Replay the delayed-client attack for each configured round.
    Attack,
    /// Recompute the analyses from an existing transcripts file.
    Analyze {
        /// Transcripts to read; defaults to DIR/transcripts.jsonl.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

fn print_report(seed: Option<u64>, r: &ScenarioReport) {
    let tag = seed.map_or(String::new(), |s| format!(" seed {s}"));
    if r.passed {
        println!("{}{tag}: ok", r.name);
    } else {
        println!("{}{tag}: {} violation(s)", r.name, r.violations.len());
        for v in &r.violations {
            println!("  - {v}");
        }
    }
}

fn load(cli: &Cli) -> Result<ScenarioConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    if cli.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let command = match &cli.command {
        Cmd::Run => Command::Run,
        Cmd::Round => Command::Round,
        Cmd::Attack => Command::Attack,
        Cmd::Analyze { input } => {
            let (name, transcripts, report) = match &cli.config {
                Some(_) => {
                    let cfg = load(cli)?;
                    (cfg.name, cfg.outputs.transcripts, cfg.outputs.report)
                }
                None => ("analysis".into(), "transcripts.jsonl".into(), "report.json".into()),
            };
            let input = input.clone().unwrap_or_else(|| cli.out.join(transcripts));
            std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
            let r = analyze_transcripts(&name, &input, &cli.out.join(report))?;
            print_report(None, &r);
            return Ok(r.passed);
        }
    };
    let cfg = load(cli)?;
    let mut passed = true;
    for (seed, result) in run_seeds(command, &cfg, &cli.out, cli.jobs)? {
        match result {
            Ok(r) => {
                print_report(Some(seed), &r);
                passed &= r.passed;
            }
            Err(e) => {
                eprintln!("{} seed {seed}: error: {e}", cfg.name);
                passed = false;
            }
        }
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
