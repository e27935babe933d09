//! Command-line front end: scenario parsing, command dispatch and
//! deterministic CSV emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use queueflow::continuous::{load_network, write_flow_csv, FlowError};
use queueflow::convergence::{
    run_sweep, write_records_csv, write_summary_csv, BetaRule, SweepConfig, SweepError,
};
use queueflow::coupling::{couple, discretize_and_load, write_refined_csv, CouplingError};
use queueflow::discrete::{write_event_csv, LoadingConfig};
use queueflow::game::{
    builtin_no_pne, declared_profile, epsilon_check, exhaustive_pne_search, write_equilibrium_csv,
    GameError,
};
use queueflow::model::{parse_scenario, Scenario};
use queueflow::rational::{format_rational, parse_rational, Rational};

#[derive(Parser)]
#[command(
    name = "queueflow",
    about = "Discrete packet routing with deterministic queuing, flows over time, and their coupling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the packet model and write the event log CSV.
    SimulateDiscrete {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load the flow over time and write the breakpoint dump CSV.
    SimulateContinuous {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add approximate decimal columns next to the exact ones.
        #[arg(long)]
        decimal: bool,
    },
    /// Build packets from supplies, simulate, and write the refined-times CSV.
    Couple {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        decimal: bool,
    },
    /// Run an (alpha, beta) sweep and report per-level errors.
    Converge {
        scenario: PathBuf,
        #[arg(long)]
        levels: u32,
        /// First-level alpha, e.g. "1/2".
        #[arg(long)]
        alpha0: String,
        /// Level-to-level alpha ratio (default halving).
        #[arg(long, default_value = "1/2")]
        ratio: String,
        /// Use beta = c*alpha instead of the alpha^(3/2) rule.
        #[arg(long)]
        beta_over_alpha: Option<String>,
        /// Per-record CSV (level, commodity, node, packet, times, error).
        #[arg(long)]
        out_records: Option<PathBuf>,
        /// Summary CSV; stdout when omitted.
        #[arg(long)]
        out_summary: Option<PathBuf>,
        #[arg(long)]
        decimal: bool,
    },
    /// Certify the declared path profile as an epsilon-equilibrium.
    CheckEquilibrium {
        scenario: PathBuf,
        #[arg(long)]
        epsilon: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cap on enumerated paths per player.
        #[arg(long, default_value_t = 10_000)]
        cap: u64,
        #[arg(long)]
        decimal: bool,
    },
    /// Exhaustively search all path profiles for exact pure Nash equilibria.
    SearchPne {
        scenario: PathBuf,
        /// Cap on enumerated paths and on the profile product.
        #[arg(long, default_value_t = 10_000)]
        cap: u64,
    },
    /// Emit a built-in scenario ("no-pne").
    Builtin {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn coupling_error(e: CouplingError) -> CliError {
    match e {
        CouplingError::Sim(inner) => runtime(inner),
        other => runtime(other),
    }
}

fn game_error(e: GameError) -> CliError {
    match e {
        GameError::Unreachable | GameError::MissingPath(_) => validation(e),
        GameError::CapExceeded(_) => runtime(e),
        GameError::Sim(inner) => runtime(inner),
    }
}

fn flow_error(e: FlowError) -> CliError {
    match e {
        FlowError::HorizonExceeded(_) => runtime(e),
        other => validation(other),
    }
}

/// The β/α and ν̂ warnings concern the convergence preconditions; game
/// subcommands run at a fixed discretization where they do not apply.
fn load_scenario(path: &Path, warn: bool) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let (scenario, warnings) = parse_scenario(&text).map_err(validation)?;
    if warn {
        for w in warnings {
            eprintln!("warning: {w}");
        }
    }
    Ok(scenario)
}

fn open_out(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| validation(format!("cannot write {}: {e}", path.display())))
}

fn parse_number(name: &str, value: &str) -> Result<Rational, CliError> {
    parse_rational(value).map_err(|e| validation(format!("--{name}: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SimulateDiscrete { scenario, out } => {
            let s = load_scenario(&scenario, true)?;
            let log = discretize_and_load(&s, &LoadingConfig::default()).map_err(coupling_error)?;
            let file = open_out(&out)?;
            write_event_csv(&log, &s, file).map_err(runtime)?;
        }
        Command::SimulateContinuous {
            scenario,
            out,
            decimal,
        } => {
            let s = load_scenario(&scenario, false)?;
            let flow = load_network(&s.network, &s.commodities, None).map_err(flow_error)?;
            let file = open_out(&out)?;
            write_flow_csv(&flow, &s, file, decimal).map_err(runtime)?;
        }
        Command::Couple {
            scenario,
            out,
            decimal,
        } => {
            let s = load_scenario(&scenario, true)?;
            let run = couple(
                &s.network,
                &s.commodities,
                &s.discretization,
                &LoadingConfig::default(),
            )
            .map_err(coupling_error)?;
            let file = open_out(&out)?;
            write_refined_csv(&run, &s, file, decimal).map_err(coupling_error)?;
        }
        Command::Converge {
            scenario,
            levels,
            alpha0,
            ratio,
            beta_over_alpha,
            out_records,
            out_summary,
            decimal,
        } => {
            let s = load_scenario(&scenario, false)?;
            let mut cfg = SweepConfig::new(parse_number("alpha0", &alpha0)?, levels);
            cfg.ratio = parse_number("ratio", &ratio)?;
            if let Some(c) = beta_over_alpha {
                cfg.beta_rule = BetaRule::ProportionalToAlpha(parse_number("beta-over-alpha", &c)?);
            }
            let report = run_sweep(&s.network, &s.commodities, &cfg).map_err(|e| match e {
                SweepError::Level { .. } => runtime(e),
                SweepError::Flow(inner) => flow_error(inner),
            })?;
            for level in &report.levels {
                for w in &level.warnings {
                    eprintln!("warning (level {}): {w}", level.level);
                }
            }
            if let Some(path) = out_records {
                let file = open_out(&path)?;
                write_records_csv(&report, &s, file, decimal).map_err(runtime)?;
            }
            match out_summary {
                Some(path) => {
                    let file = open_out(&path)?;
                    write_summary_csv(&report, file, decimal).map_err(runtime)?;
                }
                None => {
                    let mut buf = Vec::new();
                    write_summary_csv(&report, &mut buf, decimal).map_err(runtime)?;
                    std::io::stdout().write_all(&buf).map_err(runtime)?;
                }
            }
        }
        Command::CheckEquilibrium {
            scenario,
            epsilon,
            out,
            cap,
            decimal,
        } => {
            let s = load_scenario(&scenario, false)?;
            let eps = parse_number("epsilon", &epsilon)?;
            let profile = declared_profile(&s).map_err(game_error)?;
            let report =
                epsilon_check(&s, &profile, &eps, cap, &LoadingConfig::default()).map_err(game_error)?;
            println!(
                "{} at epsilon = {}",
                if report.is_equilibrium {
                    "equilibrium"
                } else {
                    "not an equilibrium"
                },
                format_rational(&eps)
            );
            if let Some(path) = out {
                let file = open_out(&path)?;
                write_equilibrium_csv(&report, &s, file, decimal).map_err(runtime)?;
            }
        }
        Command::SearchPne { scenario, cap } => {
            let s = load_scenario(&scenario, false)?;
            let equilibria =
                exhaustive_pne_search(&s, cap, &LoadingConfig::default()).map_err(game_error)?;
            if equilibria.is_empty() {
                println!("no pure Nash equilibrium");
            } else {
                println!("{} pure Nash equilibria:", equilibria.len());
                for profile in &equilibria {
                    let lines: Vec<String> = profile
                        .paths
                        .iter()
                        .zip(&s.players)
                        .map(|(path, player)| {
                            let labels: Vec<String> = path
                                .iter()
                                .map(|a| s.network.arc(*a).label.clone())
                                .collect();
                            format!("player {}: {}", player.id, labels.join("|"))
                        })
                        .collect();
                    println!("  {}", lines.join("; "));
                }
            }
        }
        Command::Builtin { name, out } => {
            let doc = match name.as_str() {
                "no-pne" => builtin_no_pne(),
                other => {
                    return Err(validation(format!(
                        "unknown builtin `{other}`; available: no-pne"
                    )))
                }
            };
            let json = serde_json::to_string_pretty(&doc)
                .map_err(|e| runtime(format!("serialization: {e}")))?;
            match out {
                Some(path) => {
                    fs::write(&path, json + "\n")
                        .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
                }
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems go to stderr with exit code 1 (clap defaults to 2)
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            // --help / --version print to stdout and succeed
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
