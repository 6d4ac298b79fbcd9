use blockade_lab::{run_fit, run_grape, run_simulate, run_tomo, RunOptions, TomoStep};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Photon-blockade simulation, optimal control, tomography and fits.
///
/// Exit codes: 0 success, 1 other failure, 2 parse error, 3 integration
/// failure, 4 below threshold with --strict, 5 uninvertible point set.
#[derive(Parser)]
#[command(name = "blockade-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; defaults to $BLOCKADE_LAB_OUT/<name> or out/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    Simulate(Common),
    Grape {
        #[command(flatten)]
        common: Common,
        /// Overrides the scenario step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    Tomo {
        #[command(subcommand)]
        step: Tomo,
    },
    Fit(Common),
}

#[derive(Subcommand)]
enum Tomo {
    Design(Common),
    Simulate(Common),
    Reconstruct(Common),
}

fn options(c: &Common) -> RunOptions {
    RunOptions { seed: c.seed, jobs: c.jobs, out: c.out.clone(), strict: c.strict, steps: None }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => run_simulate(&c.scenario, &options(c)),
        Command::Grape { common, steps } => run_grape(&common.scenario, &RunOptions { steps: *steps, ..options(common) }),
        Command::Tomo { step } => {
            let (s, c) = match step {
                Tomo::Design(c) => (TomoStep::Design, c),
                Tomo::Simulate(c) => (TomoStep::Simulate, c),
                Tomo::Reconstruct(c) => (TomoStep::Reconstruct, c),
            };
            run_tomo(s, &c.scenario, &options(c))
        }
        Command::Fit(c) => run_fit(&c.scenario, &options(c)),
    };
    match result {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("blockade-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
