use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmd_core::mx::ElementFormat;
use lmd_harness::{compare, inspect, train, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "lmd", version, about = "Train and compare LMD runs, inspect MX encodings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Combine finished runs into one CSV and an SVG chart.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show the MX codes chosen for a list of values.
    MxInspect {
        #[arg(long, value_parser = ["mxfp6", "mxfp4"])]
        format: String,
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let out = train(cfg)?;
            let last = out.records.last().expect("step 0 is always recorded");
            println!("{} rows -> {}", out.records.len(), out.metrics.display());
            println!("checkpoint -> {}", out.checkpoint.display());
            println!("final {}", last.csv_row());
        }
        Command::Compare { runs, out } => {
            let (csv, svg) = compare::compare(&runs, &out)?;
            println!("{}\n{}", csv.display(), svg.display());
        }
        Command::MxInspect { format, values } => {
            let fmt: ElementFormat = format.parse().map_err(|e: lmd_core::Error| HarnessError::Config(e.to_string()))?;
            print!("{}", inspect::mx_inspect(fmt, &inspect::parse_values(&values)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
