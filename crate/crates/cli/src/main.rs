//! `confbal`: run confounded policy-evaluation experiments from a config file.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use confbal_core::harness::{
    aggregate, markdown_tables, policy_value, read_replications, run_experiment, worker_count,
    write_aggregate, write_outputs, ExperimentConfig,
};
use confbal_core::selftest::run_selftest;
use confbal_core::Error;

#[derive(Parser)]
#[command(
    name = "confbal",
    version,
    about = "Adversarial balancing under latent confounding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo experiment and write CSV and markdown results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of replications.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the Monte-Carlo ground-truth policy value.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-aggregate a replications CSV and print the aggregate CSV.
    Table {
        #[arg(long = "in")]
        input: PathBuf,
        /// Print markdown tables instead of CSV.
        #[arg(long)]
        markdown: bool,
    },
    /// Run the built-in property checks at small sample sizes.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, Error> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::Run {
            config,
            seed,
            reps,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.validate()?;
            eprintln!(
                "running {} replications x {} sample sizes on {} workers",
                cfg.reps,
                cfg.n_grid.len(),
                worker_count(&cfg)
            );
            let output = run_experiment(&cfg)?;
            write_outputs(&cfg.out_dir, &cfg, &output)?;
            write!(
                stdout,
                "{}",
                markdown_tables(&output.aggregate, Some(&output.truth), None)
            )?;
            eprintln!("results written to {}", cfg.out_dir.display());
        }
        Command::Oracle { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            cfg.validate()?;
            let v = policy_value(&cfg)?;
            writeln!(
                stdout,
                "tau_true = {} ± {} ({} samples)",
                v.tau, v.se, v.samples
            )?;
        }
        Command::Table { input, markdown } => {
            let rows = read_replications(BufReader::new(File::open(&input)?))?;
            let agg = aggregate(&rows);
            if markdown {
                write!(stdout, "{}", markdown_tables(&agg, None, None))?;
            } else {
                write_aggregate(&agg, &mut stdout)?;
            }
        }
        Command::Selftest => {
            let results = run_selftest();
            for c in &results {
                let status = if c.passed { "PASS" } else { "FAIL" };
                writeln!(stdout, "{status} {}: {}", c.name, c.detail)?;
            }
            if results.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
