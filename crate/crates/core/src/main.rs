use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use detmac::harness::{experiments, parse_scenario, run_scenario, validate_schedule, write_csv, Row, Scenario};

#[derive(Parser)]
#[command(name = "detmac", version, about = "Deterministic 802.15.4 MAC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write per-flow metrics as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Also write the frame trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a preset sweep and write `<name>.csv` into the output directory.
    Experiment {
        name: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Admit every declared reservation and print the schedule.
    ValidateSchedule {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig4,
    Fig6,
    Fig7,
}

enum Failure {
    /// Bad input or a refused schedule.
    Invalid(String),
    Usage(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Invalid(m) => {
                eprintln!("{m}");
                ExitCode::from(1)
            }
            Failure::Usage(m) => {
                eprintln!("{m}");
                ExitCode::from(2)
            }
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| Failure::Invalid(format!("{}:\n{e}", path.display())))
}

fn write_rows(rows: &[Row], path: &Path) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", path.display())))?;
    write_csv(rows, file).map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, seed, trace, out } => {
            let scenario = load(&config)?;
            let sim = run_scenario(&scenario, seed).map_err(|e| Failure::Invalid(e.to_string()))?;
            write_rows(&sim.rows(), &out)?;
            if let Some(path) = trace {
                fs::write(&path, sim.trace_text())
                    .map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", path.display())))?;
            }
            Ok(())
        }
        Command::Experiment { name, out, seed } => {
            fs::create_dir_all(&out).map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", out.display())))?;
            let (file, rows) = match name {
                Preset::Fig4 => ("fig4.csv", experiments::fig4()),
                Preset::Fig6 => ("fig6.csv", experiments::fig6(seed).map_err(|e| Failure::Invalid(e.to_string()))?),
                Preset::Fig7 => ("fig7.csv", experiments::fig7(seed).map_err(|e| Failure::Invalid(e.to_string()))?),
            };
            write_rows(&rows, &out.join(file))
        }
        Command::ValidateSchedule { config } => {
            let scenario = load(&config)?;
            let report = validate_schedule(&scenario).map_err(|e| Failure::Invalid(e.to_string()))?;
            print!("{}", report.text);
            if report.is_ok() {
                Ok(())
            } else {
                Err(Failure::Invalid(format!(
                    "{} refusal(s), {} double-occupied cell(s)",
                    report.refusals(),
                    report.double_occupied
                )))
            }
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
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}
