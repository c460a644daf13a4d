//! Command-line front end for the synthesis toolchain.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for failures that are not halts.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Config(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 1,
            Failure::Config(_) => 2,
            Failure::Unreachable(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "chemputer", version, about = "Parse, validate, plan, compile and run synthesis programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by most commands.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Rule database (JSON).
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Hardware graph (JSON); the built-in default graph otherwise.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Seed for every random stream; 0 when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Primary output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Print the canonical form of a program (`-` reads stdin).
    Parse {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check a program against a hardware graph.
    Validate {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Execute a program; the exit status encodes the halt kind.
    Run {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = chemputer::cstm::DEFAULT_BUDGET)]
        budget: u64,
        /// JSON-lines trace output.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Execute the compiled plan on the hardware graph instead of the
        /// abstract machine.
        #[arg(long)]
        compiled: bool,
        /// Latent rules sampled when a reaction matches nothing.
        #[arg(long)]
        explore: Option<PathBuf>,
        /// Commit occurrences and discoveries back to the rules file.
        #[arg(long)]
        persist_rules: bool,
    },
    /// Find the shortest rule pathway from stock to a target.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: String,
        /// Comma-separated stock species.
        #[arg(long, value_delimiter = ',')]
        stock: Vec<String>,
        #[arg(long, default_value_t = chemputer::rules::DEFAULT_MAX_DEPTH)]
        depth: usize,
        /// Also write the pathway as a program.
        #[arg(long)]
        program: Option<PathBuf>,
    },
    /// Lower a program onto a hardware graph and print the plan.
    Compile {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Print the lowered instruction listing instead of the plan.
        #[arg(long)]
        code: bool,
    },
    /// Step histograms and linear fits of cumulative step counts.
    Stats {
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Also fit a synthetic corpus with this many ops per reaction step.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Reaction steps in the synthetic corpus.
        #[arg(long, default_value_t = 10)]
        steps: u32,
    },
    /// Flawless-copy Monte Carlo; CSV to --out, optional SVG chart.
    Mc {
        #[command(flatten)]
        common: Common,
        /// Config JSON; defaults for anything absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<u32>,
        #[arg(long)]
        sequential: bool,
    },
    /// Run under dynamic error correction, optionally paired against no correction.
    DecRun {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        inject_eps: f64,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = chemputer::cstm::DEFAULT_BUDGET)]
        budget: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::dispatch(cli.cmd, argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Failure>().map_or(2, Failure::code))
        }
    }
}
