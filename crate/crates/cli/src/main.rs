use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use kinlab::config::ScenarioConfig;
use kinlab::runner::{self, Command, Format, RunOptions, Theorem, Verify};
use kinlab::Error;

#[derive(Parser, Debug)]
#[command(name = "kinlab", version = env!("KINLAB_VERSION"), about = "Branching-walk and Fourier laboratory for kinetic-type equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "KINLAB_THREADS")]
    threads: Option<usize>,
    /// Output directory; overrides the config, defaults to `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit nonzero when a tolerance check fails.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Regime label and witnesses.
    Classify,
    /// Monte Carlo ensemble with martingale summaries.
    Simulate,
    /// Fourier solver on a grid.
    Solve,
    Verify {
        #[arg(value_enum)]
        what: VerifyArg,
    },
    Limit {
        #[arg(value_enum)]
        theorem: TheoremArg,
    },
    /// Solver against Monte Carlo.
    Crosscheck,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum VerifyArg {
    ManyToOne,
    Martingale,
    Fixpoint,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TheoremArg {
    Thm2,
    Thm3,
    Thm4,
    Thm5,
    Thm6,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
}

impl Cmd {
    fn core(self) -> Command {
        match self {
            Cmd::Classify => Command::Classify,
            Cmd::Simulate => Command::Simulate,
            Cmd::Solve => Command::Solve,
            Cmd::Crosscheck => Command::Crosscheck,
            Cmd::Verify { what } => Command::Verify(match what {
                VerifyArg::ManyToOne => Verify::ManyToOne,
                VerifyArg::Martingale => Verify::Martingale,
                VerifyArg::Fixpoint => Verify::Fixpoint,
            }),
            Cmd::Limit { theorem } => Command::Limit(match theorem {
                TheoremArg::Thm2 => Theorem::Thm2,
                TheoremArg::Thm3 => Theorem::Thm3,
                TheoremArg::Thm4 => Theorem::Thm4,
                TheoremArg::Thm5 => Theorem::Thm5,
                TheoremArg::Thm6 => Theorem::Thm6,
            }),
        }
    }
}

// 2: bad input, 3: solver instability, 4: other runtime failure, 1: failed check under --strict.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Unstable { .. }) => 3,
        Some(Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::InvariantViolated(_)) => 4,
        Some(_) => 2,
        None => 2,
    }
}

fn run(cli: &Cli) -> anyhow::Result<Option<bool>> {
    let path = cli.config.as_ref().context("--config is required")?;
    anyhow::ensure!(path.is_file(), "config {} does not exist", path.display());
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let opts = RunOptions {
        out,
        threads: cli.threads,
        format: match cli.format {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        },
        version: env!("KINLAB_VERSION").to_string(),
    };
    let outcome = runner::run(cli.command.core(), &cfg, &opts)?;
    print!("{}", runner::text_table(&outcome.summary));
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Some(false)) if cli.strict => {
            eprintln!("check failed (--strict)");
            ExitCode::from(1)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
