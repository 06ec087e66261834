use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use encopt::harness::{run_study, HarnessError};

#[derive(Parser)]
#[command(name = "encopt", version, about = "A-optimal source-encoding weights for Helmholtz inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact criteria along the two-source weight family.
    Sweep1d(Common),
    /// GN traces at fixed media between the prior mean and the MAP point.
    GnRobustness(Common),
    /// Exact trace against fixed-vector estimates.
    TraceEffect(Common),
    /// Random encodings against optimized ones.
    RandomVsOptimal(Common),
    /// Spread of optimized weights over trace vectors and starts.
    Variability(Common),
    /// Finite-difference gradient and Hessian checks.
    Gradcheck(Common),
    /// Forward-solve counts against the cost model.
    CounterAudit(Common),
    /// Clean and noisy synthetic observations.
    Forward(Common),
    /// One MAP reconstruction.
    Map(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file with flat dotted keys; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Sweep1d(c) => ("sweep1d", c),
            Command::GnRobustness(c) => ("gn-robustness", c),
            Command::TraceEffect(c) => ("trace-effect", c),
            Command::RandomVsOptimal(c) => ("random-vs-optimal", c),
            Command::Variability(c) => ("variability", c),
            Command::Gradcheck(c) => ("gradcheck", c),
            Command::CounterAudit(c) => ("counter-audit", c),
            Command::Forward(c) => ("forward", c),
            Command::Map(c) => ("map", c),
        }
    }
}

fn run(study: &str, args: &Common) -> Result<usize, HarnessError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let out = run_study(study, &text, args.seed)?;
    for line in &out.report {
        println!("{line}");
    }
    for p in out.write(&args.out)? {
        println!("wrote {}", p.display());
    }
    for f in &out.failures {
        eprintln!("FAIL {f}");
    }
    Ok(out.failures.len())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (study, args) = cli.command.split();
    match run(study, args) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(4),
        Err(e) => {
            eprintln!("encopt {study}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
