//! Command-line front end for the `evcoop` solvers.
//!
//! [`run`] parses arguments, executes one subcommand and writes its output;
//! the binary maps the result to an exit code.

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::CliError;
pub use output::{Format, Report, Table};
pub use scenario::{QosSource, Scenario, DEFAULT_SCENARIO};

#[derive(Debug, Parser)]
#[command(
    name = "evcoop",
    version,
    about = "Equilibria of EV charging stations that may train models together"
)]
pub struct Cli {
    /// Scenario file; the built-in reference scenario when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,

    /// Root seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pricing outcome and profits under every participation profile.
    Equilibrium,
    /// Profit matrix and equilibria of the participation game.
    Participation {
        /// Search for an instance where training raises both QoS values
        /// but the stations do not both join.
        #[arg(long)]
        witness: bool,
    },
    /// Profits and equilibria across heterogeneity levels.
    SweepBeta,
    /// Compare closed-form prices with best-response dynamics.
    OracleCheck {
        /// Number of random instances; overrides `oracle.draws`.
        #[arg(long)]
        draws: Option<u64>,
        /// Audit the scenario's own game at its no-training QoS.
        #[arg(long)]
        fixed: bool,
    },
    /// Local and federated training runs with the resulting QoS.
    Flsim,
    /// Load a charging-sessions CSV.
    Ingest {
        path: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Print the effective scenario with all defaults filled in.
    Scenario,
}

pub fn load_scenario(path: Option<&PathBuf>) -> Result<Scenario, CliError> {
    match path {
        None => Ok(Scenario::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read scenario {}: {e}", p.display())))?;
            Scenario::parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::config(format!("{}: {m}", p.display())),
                other => other,
            })
        }
    }
}

/// Runs the command without touching stdout or files.
pub fn execute(cli: &Cli) -> Result<Report, CliError> {
    let scn = load_scenario(cli.scenario.as_ref())?;
    match &cli.command {
        Command::Equilibrium => commands::equilibrium(&scn),
        Command::Participation { witness } => commands::participation(&scn, *witness, cli.seed),
        Command::SweepBeta => commands::sweep_beta(&scn, cli.seed),
        Command::OracleCheck { draws, fixed } => commands::oracle_check(&scn, *draws, cli.seed, *fixed),
        Command::Flsim => commands::flsim(&scn, cli.seed),
        Command::Ingest { path, test_fraction } => commands::ingest(path, *test_fraction, &scn.params, cli.seed),
        Command::Scenario => {
            let text = scn.to_text();
            let mut table = Table::new(&["key", "value"]);
            for line in text.lines() {
                if let Some((k, v)) = line.split_once(" = ") {
                    table.push(vec![k.into(), v.into()]);
                }
            }
            Ok(Report::from_table(table, None))
        }
    }
}

/// Parses `args`, runs the command and writes its output. Summaries go to
/// `log`.
pub fn run<I, T>(args: I, log: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(log, "{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            return Err(CliError::config(msg.trim_start_matches("error: ").trim_end()));
        }
    };
    let report = execute(&cli)?;
    let bytes = report.render(cli.format)?;
    match &cli.out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    if let Some(s) = &report.summary {
        let _ = writeln!(log, "{s}");
    }
    Ok(())
}
