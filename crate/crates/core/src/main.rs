use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use polystress::harness::flow::{run_flow, FlowOutcome};
use polystress::harness::{energy_of, verify, ConfigError, Format, HarnessError, Prepared, RunConfig};

#[derive(Parser)]
#[command(name = "polystress", version, about = "Verify conservation and variation identities for polyharmonic maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check the configuration enables.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutFormat,
    },
    /// Gradient flow for the first configured order; writes the trajectory as CSV.
    Flow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print E_k of the configured map.
    Energy {
        #[arg(long)]
        config: PathBuf,
        #[arg(short)]
        k: usize,
    },
}

fn prepare(path: &Path) -> Result<Prepared, HarnessError> {
    Ok(RunConfig::load(path)?.prepare()?)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|source| HarnessError::Output { path: path.display().to_string(), source })
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Verify { config, out, format } => {
            let p = prepare(&config)?;
            let report = verify(&p)?;
            let fmt = match format {
                OutFormat::Csv => Format::Csv,
                OutFormat::Text => Format::Text,
            };
            let bytes = report.emit(fmt);
            match out {
                Some(path) => {
                    write(&path, &bytes)?;
                    eprintln!("{} checks, {} failed", report.rows.len(), report.failures());
                }
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            Ok(report.all_passed())
        }
        Command::Flow { config, out } => {
            let p = prepare(&config)?;
            let params = p.flow.clone().ok_or_else(|| ConfigError::Invalid("configuration has no flow block".into()))?;
            let t = run_flow(&p.map, p.orders[0], &p.grid, &p.samples, &params)?;
            write(&out, &t.to_csv())?;
            let last = t.last();
            let outcome = match t.outcome {
                FlowOutcome::Converged => "converged",
                FlowOutcome::Stagnated => "stagnated (step size underflow)",
                FlowOutcome::StepBudget => "step budget exhausted",
            };
            println!(
                "k={} steps={} E={:.6e} max|tau|={:.3e}: {outcome}",
                t.spec.k,
                t.accepted(),
                last.energy,
                last.max_tension
            );
            Ok(t.outcome != FlowOutcome::StepBudget)
        }
        Command::Energy { config, k } => {
            let p = prepare(&config)?;
            println!("{:.17e}", energy_of(&p, k)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
