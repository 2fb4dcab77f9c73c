//! `bracket-steer`: run, sweep and validate steering scenarios from the command line.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 I/O failure.
//! Failures print one line on stderr: `error class=<class> kind=<kind>: <message>`.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bracket_steer::output::{
    run_scenario, sweep_scenario, write_run, write_text, Format, RunFailure,
};
use bracket_steer::scenarios::{resolve_scenario, Overrides, Setup, BUILTIN_NAMES};
use bracket_steer::{Error, ErrorClass, FieldLibrary, ScenarioBundle};
use clap::{Args, Parser, Subcommand, ValueEnum};

const LOG_ENV: &str = "BRACKET_STEER_LOG";

#[derive(Parser)]
#[command(
    name = "bracket-steer",
    version,
    about = "Oscillatory Lie-bracket steering simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trajectory
    Run(RunArgs),
    /// Measure deviation from the averaged flow over a list of epsilon values
    Sweep(SweepArgs),
    /// Check a scenario's bracket selection on its probe box
    Validate(ScenarioArg),
    /// List built-in scenarios and library entries
    List,
}

#[derive(Args)]
struct ScenarioArg {
    /// Built-in scenario name or path to a TOML scenario file
    scenario: String,
}

#[derive(Args)]
struct Tuning {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// RK4 sub-steps per sampling interval
    #[arg(long)]
    substeps: Option<usize>,
}

impl Tuning {
    fn overrides(&self) -> Overrides {
        Overrides {
            epsilon: self.epsilon,
            gamma: self.gamma,
            t_final: self.t_final,
            substeps: self.substeps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[command(flatten)]
    tuning: Tuning,
    /// Error threshold for the decay report (defaults to the scenario's expected rho, else 0.1)
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output file; a `.report.json` sidecar is written next to it. Stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[command(flatten)]
    tuning: Tuning,
    /// Strictly decreasing epsilon values, comma separated
    #[arg(long = "eps-list", value_delimiter = ',', required = true)]
    eps_list: Vec<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::InvalidInput => 2,
        ErrorClass::Numeric => 3,
        ErrorClass::Io => 4,
    }
}

fn report_failure(f: &RunFailure) -> ExitCode {
    eprintln!(
        "error class={} kind={}: {}",
        f.class.as_str(),
        f.kind,
        f.message
    );
    ExitCode::from(exit_code(f.class))
}

fn load(source: &str, tuning: &Tuning, lib: &FieldLibrary) -> Result<ScenarioBundle, Error> {
    resolve_scenario(source, lib)?.with_overrides(&tuning.overrides(), lib)
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => write_text(path, text),
        None => match std::io::stdout().write_all(text.as_bytes()) {
            // a closed downstream pipe (e.g. `| head`) is not a failure
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            }),
        },
    }
}

fn run(args: &RunArgs, lib: &FieldLibrary) -> Result<Option<RunFailure>, Error> {
    let bundle = load(&args.scenario.scenario, &args.tuning, lib)?;
    let rho = args.rho.or(bundle.expected().map(|e| e.rho)).unwrap_or(0.1);
    let artifacts = run_scenario(&bundle, rho)?;
    match &args.out {
        Some(path) => {
            let (main, side) = write_run(&artifacts, path, args.format.into())?;
            log::info!("wrote {} and {}", main.display(), side.display());
        }
        None => emit(&artifacts.table.render(args.format.into())?, None)?,
    }
    Ok(artifacts.failure)
}

fn sweep(args: &SweepArgs, lib: &FieldLibrary) -> Result<(), Error> {
    let bundle = load(&args.scenario.scenario, &args.tuning, lib)?;
    let table = sweep_scenario(&bundle, &args.eps_list)?;
    emit(&table.render(args.format.into())?, args.out.as_ref())
}

fn validate(args: &ScenarioArg, lib: &FieldLibrary) -> Result<(), Error> {
    let bundle = resolve_scenario(&args.scenario, lib)?;
    let certificates = match &bundle.setup {
        Setup::Single(s) => vec![&s.certificate],
        Setup::Formation(f) => f.certificates.iter().collect(),
    };
    for (i, c) in certificates.iter().enumerate() {
        println!(
            "selection {}: rank_ok={} worst_condition={:e} alpha_estimate={:e} probes={}",
            i + 1,
            c.rank_ok,
            c.worst_condition,
            c.alpha_estimate,
            c.sampled_states.len()
        );
    }
    Ok(())
}

fn list(lib: &FieldLibrary) {
    println!("scenarios:");
    for name in BUILTIN_NAMES {
        println!("  {name}");
    }
    println!("fields:");
    for name in lib.field_names() {
        println!("  {name}");
    }
    println!("leaders:");
    for name in lib.leader_names() {
        println!("  {name}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let lib = FieldLibrary::builtin();
    let outcome = match &cli.command {
        Command::Run(args) => run(args, &lib),
        Command::Sweep(args) => sweep(args, &lib).map(|_| None),
        Command::Validate(args) => validate(args, &lib).map(|_| None),
        Command::List => {
            list(&lib);
            Ok(None)
        }
    };
    match outcome {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(partial)) => report_failure(&partial),
        Err(e) => report_failure(&RunFailure::from(&e)),
    }
}
