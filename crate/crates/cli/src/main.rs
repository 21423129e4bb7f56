use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use momsynth_cli::commands::{self, SimulateArgs, SolverArgs};
use momsynth_cli::examples::{run_example, ExampleArgs, ExampleName};
use momsynth_cli::{error_code, EXIT_FAIL, EXIT_OK};

#[derive(Parser)]
#[command(
    name = "momsynth",
    version,
    about = "Moment-matrix synthesis of stochastic affine controllers"
)]
struct Cli {
    /// Log solver progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SolverFlags {
    /// Primal/dual feasibility tolerance.
    #[arg(long, env = "MOMSYNTH_FEAS_TOL")]
    feas_tol: Option<f64>,
    /// Relative duality gap accepted as optimal.
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl From<&SolverFlags> for SolverArgs {
    fn from(f: &SolverFlags) -> Self {
        SolverArgs {
            feas_tol: f.feas_tol,
            gap_tol: f.gap_tol,
            max_iters: f.max_iters,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write the solution file.
    Synthesize {
        problem: PathBuf,
        #[arg(short, long, default_value = "solution.json")]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Sample closed-loop trajectories of a solution.
    Simulate {
        solution: PathBuf,
        problem: PathBuf,
        #[arg(long, default_value_t = 10)]
        trajectories: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Steps to simulate for stationary problems.
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Check a solution against its problem; exits 1 on failure.
    Verify {
        solution: PathBuf,
        problem: PathBuf,
        #[arg(long, default_value_t = momsynth::verify::DEFAULT_VERIFY_TOL)]
        tol: f64,
    },
    /// Materialize, solve, simulate and verify a built-in scenario.
    Example {
        /// obstacle1, obstacle2, pendulum, h2check or lqrcheck.
        name: String,
        /// Defaults to a directory named after the scenario.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Shift of the obstacle off the straight path (obstacle2).
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
        /// Horizon of the obstacle scenarios.
        #[arg(long, default_value_t = 60)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        trajectories: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = momsynth::verify::DEFAULT_VERIFY_TOL)]
        tol: f64,
        #[command(flatten)]
        solver: SolverFlags,
    },
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synthesize {
            problem,
            out,
            solver,
        } => {
            let sol = commands::synthesize_file(&problem, &out, &(&solver).into())?;
            match sol.objective {
                Some(obj) => println!(
                    "{}: objective {obj:.10e} ({} iterations)",
                    sol.status, sol.iterations
                ),
                None => println!("{} ({} iterations)", sol.status, sol.iterations),
            }
            if let Some(kind) = sol.classification {
                println!("policy: {kind}");
            }
            Ok(commands::status_code(sol.status))
        }
        Command::Simulate {
            solution,
            problem,
            trajectories,
            seed,
            steps,
            csv,
            svg,
        } => {
            let args = SimulateArgs {
                trajectories,
                seed,
                steps,
                csv,
                svg,
                ..Default::default()
            };
            let batch = commands::simulate_files(&solution, &problem, &args)?;
            println!("{} trajectories of {} steps", batch.len(), batch.horizon);
            Ok(EXIT_OK)
        }
        Command::Verify {
            solution,
            problem,
            tol,
        } => match commands::verify_files(&solution, &problem, tol) {
            Ok(report) => {
                println!("{report}");
                Ok(if report.passed() { EXIT_OK } else { EXIT_FAIL })
            }
            Err(e) if error_code(&e) == EXIT_FAIL => {
                println!("FAIL: {e:#}");
                Ok(EXIT_FAIL)
            }
            Err(e) => Err(e),
        },
        Command::Example {
            name,
            out_dir,
            perturb,
            horizon,
            trajectories,
            seed,
            tol,
            solver,
        } => {
            let which: ExampleName = name.parse()?;
            let args = ExampleArgs {
                perturb,
                horizon,
                trajectories,
                seed,
                tol,
                solver: (&solver).into(),
                ..ExampleArgs::new(out_dir.unwrap_or_else(|| PathBuf::from(which.as_str())))
            };
            let outcome = run_example(which, &args)?;
            print!("{}", outcome.summary);
            println!("files written to {}", args.out_dir.display());
            Ok(outcome.exit_code)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap's own code 2 would read as "infeasible".
            return ExitCode::from(if e.use_stderr() {
                EXIT_FAIL as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            error_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
