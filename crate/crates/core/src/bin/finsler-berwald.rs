use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use finsler_berwald::cli::{run_path, Command, Overrides, EXIT_INPUT};

/// Decide whether a Finsler geometry is of Berwald type.
#[derive(Parser)]
#[command(name = "finsler-berwald", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample Ξ across fibers and decide Berwald / not-Berwald.
    Classify(RunArgs),
    /// Check the Ω-based Berwald condition with extracted (and given) T.
    CheckTheorem1(RunArgs),
    /// Check the (α,β) form of the condition.
    CheckAb(RunArgs),
    /// Fit q in ∇β = q D for the generalized Kropina profile.
    CheckCorollary3(RunArgs),
    /// Check the identities of the Cartan nonlinear connection.
    Identities(RunArgs),
    /// Classification plus every check enabled in the model file.
    ReportAll(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct RunArgs {
    /// Model file (`.toml` may be omitted; shipped model names also work).
    file: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    /// Number of base points.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    fiber_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; does not affect the report.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FINSLER_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    let (cmd, args) = match cli.command {
        Cmd::Classify(a) => (Command::Classify, a),
        Cmd::CheckTheorem1(a) => (Command::CheckTheorem1, a),
        Cmd::CheckAb(a) => (Command::CheckAb, a),
        Cmd::CheckCorollary3(a) => (Command::CheckCorollary3, a),
        Cmd::Identities(a) => (Command::Identities, a),
        Cmd::ReportAll(a) => (Command::ReportAll, a),
    };
    let overrides = Overrides {
        tol: args.tol,
        samples: args.samples,
        fiber_samples: args.fiber_samples,
        seed: args.seed,
    };
    let outcome = match run_path(cmd, &args.file, &overrides, args.jobs) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT as u8);
        }
    };
    let body = match args.format {
        Format::Json => outcome.report.to_json(),
        Format::Text => outcome.report.to_text(),
    };
    match &args.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &body) {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(EXIT_INPUT as u8);
            }
        }
        None => print!("{body}"),
    }
    eprint!("{}", outcome.report.summary());
    ExitCode::from(outcome.exit_code as u8)
}
