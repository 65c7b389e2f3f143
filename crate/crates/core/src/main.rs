use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grape_core::cli::{self, Overrides, ProblemDefinition};
use grape_core::gradient::MethodKind;
use grape_core::optim::Algorithm;

#[derive(Parser)]
#[command(name = "grape", version, about = "GRAPE pulse design for spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a pulse and write the iteration log, waveform and profile.
    Run(RunArgs),
    /// Inversion profile of a stored waveform over the file's offset grid.
    Sweep(SweepArgs),
    /// Compare two gradient methods at the seeded initial pulse.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct Common {
    /// Problem definition (TOML).
    #[arg(long)]
    problem: PathBuf,
    /// Worker threads for step-parallel work (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// steepest, dfp, bfgs or lbfgs.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// first_order, series_exact, eigen_exact, fd_forward or fd_central.
    #[arg(long)]
    gradient_method: Option<MethodKind>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Add a wall-clock column to iterations.csv.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    /// Waveform to sweep (default: <out>/waveform.csv).
    #[arg(long)]
    waveform: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Method under test.
    #[arg(long, default_value = "first_order")]
    gradient_method: MethodKind,
    /// Method compared against.
    #[arg(long, default_value = "series_exact")]
    reference: MethodKind,
    /// Accepted for symmetry with `run`; gradcheck writes nothing.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common, overrides: Overrides) -> grape_core::Result<ProblemDefinition> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| grape_core::GrapeError::InvalidInput {
                field: "threads".into(),
                reason: e.to_string(),
            })?;
    }
    let mut def = ProblemDefinition::load(&common.problem)?;
    Overrides {
        seed: common.seed,
        ..overrides
    }
    .apply(&mut def);
    Ok(def)
}

fn execute(cli: Cli) -> grape_core::Result<u8> {
    match cli.command {
        Command::Run(args) => {
            let def = load(
                &args.common,
                Overrides {
                    algorithm: args.algorithm,
                    gradient_method: args.gradient_method,
                    max_iters: args.max_iters,
                    seed: None,
                },
            )?;
            let summary = cli::run(&def, &args.out, args.timings)?;
            print!("{summary}");
            Ok(cli::exit_code(summary.status) as u8)
        }
        Command::Sweep(args) => {
            let def = load(&args.common, Overrides::default())?;
            let waveform = args.waveform.unwrap_or_else(|| args.out.join("waveform.csv"));
            let (rows, path) = cli::sweep(&def, &waveform, &args.out)?;
            println!("{} offsets, wrote {}", rows.len(), path.display());
            Ok(0)
        }
        Command::Gradcheck(args) => {
            let def = load(&args.common, Overrides::default())?;
            let report = cli::gradient_check(&def, args.gradient_method, args.reference)?;
            print!("{report}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
