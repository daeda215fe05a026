use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedtoken::config::{load_config, ExperimentConfig};
use fedtoken::data::synth_gaussian;
use fedtoken::harness::{self, SweepAxis};
use fedtoken::ledger::{self, Chain, Verification};
use fedtoken::{Error, Purpose, RngStream};

#[derive(Parser)]
#[command(name = "fedtoken", version, about = "Federated learning with contribution-based token incentives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one experiment per value of an axis (quota_ratio, delta, budget).
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Base config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Inspect a ledger file.
    Ledger {
        #[arg(long, default_value = "out/ledger.bin")]
        file: PathBuf,
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Write a synthetic two-cluster dataset as CSV.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate a metrics stream.
    Report {
        #[arg(long, default_value = "out/metrics.jsonl")]
        metrics: PathBuf,
        /// Whitespace-separated columns for gnuplot.
        #[arg(long)]
        gnuplot: bool,
    },
}

#[derive(Subcommand)]
enum LedgerAction {
    Verify,
    Balance { client: u32 },
    Round { round: u32 },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_TAMPERED: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Domain(_) | Error::InfeasiblePartition { .. } => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_verified(file: &Path) -> Result<Result<Chain, u64>, Error> {
    match ledger::verify_file(file)? {
        Verification::Ok { .. } => Ok(Ok(Chain::load(file)?)),
        Verification::Tampered { first_bad_index } => Ok(Err(first_bad_index)),
    }
}

fn dispatch(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let output = harness::run(&cfg, Some(&out))?;
            println!("{}", serde_json::to_string_pretty(&output.summary)?);
        }
        Command::Sweep { axis, values, config } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => ExperimentConfig::default(),
            };
            let rows = harness::sweep(&cfg, axis, &values)?;
            print!("{}", harness::render_sweep(axis, &rows));
        }
        Command::Ledger { file, action } => {
            let chain = match load_verified(&file)? {
                Ok(chain) => chain,
                Err(bad) => {
                    println!("tampered: first bad block {bad}");
                    return Ok(EXIT_TAMPERED);
                }
            };
            match action {
                LedgerAction::Verify => println!("ok: {} blocks", chain.len()),
                LedgerAction::Balance { client } => println!("{}", chain.balance_of(client)),
                LedgerAction::Round { round } => {
                    let alloc = chain.query_round(round)?;
                    for (id, amount) in &alloc.contribution_awards {
                        println!("{round} {id} contribution {amount}");
                    }
                    for (id, amount) in &alloc.participation_awards {
                        println!("{round} {id} participation {amount}");
                    }
                    println!("total {}", alloc.total_issued);
                }
            }
        }
        Command::GenData { n, d, separation, seed, out } => {
            let ds = synth_gaussian(n, d, separation, &RngStream::new(seed, Purpose::Synth))?;
            let file = std::fs::File::create(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            ds.write_csv(file)?;
        }
        Command::Report { metrics, gnuplot } => {
            let m = harness::read_metrics(&metrics)?;
            print!("{}", harness::render_report(&m, gnuplot));
        }
    }
    Ok(0)
}
