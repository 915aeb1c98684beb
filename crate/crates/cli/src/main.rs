use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use proxsweep_cli::config::{self, ConfigError, Overrides, StudyKind};
use proxsweep_cli::run::{self, Outcome};
use proxsweep_core::explicit::Scheme;

#[derive(Parser)]
#[command(name = "proxsweep", version, about = "Sweeping processes on prox-regular level sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Catchup,
    BoundaryOde,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Catchup => Scheme::CatchingUp,
            SchemeArg::BoundaryOde => Scheme::BoundaryOde,
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Uniform step count merged into the input grid (benchmarks: the step count).
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate and re-verify the constraint constants.
    Certify(Common),
    /// Solve a sweeping process with a given parameter path.
    Solve(Common),
    /// Solve with a state-dependent parameter by Picard iteration.
    SolveImplicit(Common),
    /// Perturbation or convergence-order study.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Option<StudyKind>,
    },
}

fn load(c: &Common) -> Result<config::RunConfig, String> {
    let text = std::fs::read_to_string(&c.config).map_err(|e| format!("reading {}: {e}", c.config.display()))?;
    let base = c.config.parent().map(PathBuf::from).unwrap_or_default();
    let ov = Overrides { seed: c.seed, grid_n: c.grid_n, scheme: c.scheme.map(Scheme::from), output_dir: c.out.clone() };
    config::parse_config(&text, &base, &ov).map_err(|e: ConfigError| format!("{}: {e}", c.config.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, kind) = match &cli.command {
        Command::Certify(c) | Command::Solve(c) | Command::SolveImplicit(c) => (c, None),
        Command::Study { common, kind } => (common, *kind),
    };
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e.trim_end());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Certify(_) => run::certify(&cfg),
        Command::Solve(_) => run::solve(&cfg),
        Command::SolveImplicit(_) => run::solve_implicit(&cfg),
        Command::Study { .. } => run::study(&cfg, kind),
    };
    match result {
        Ok(Outcome { passed, summary, files }) => {
            println!("{summary}");
            for f in files {
                println!("wrote {}", f.display());
            }
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
