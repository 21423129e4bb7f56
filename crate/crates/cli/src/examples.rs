//! Built-in scenarios: materialize, solve, simulate, verify, write figures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use momsynth::extract::{classify, max_excitation, DEFAULT_DET_TOL};
use momsynth::model::SynthesisProblem;
use momsynth::moments::quad_expectation;
use momsynth::scenarios::{lqrcheck, H2Instance, ObstacleScenario, PendulumScenario};
use momsynth::sdp::SolverStatus;
use momsynth::simulate::{
    export_csv, render_svg, simulate_pendulum, swing_up_outcomes, Scene, SimConfig, Stabilizer,
    TrajectoryBatch,
};
use momsynth::synthesis::Excitation;
use momsynth::verify::VerifyReport;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::commands::{self, SimulateArgs, SolverArgs};
use crate::schema::ProblemFile;
use crate::solution::SolutionFile;
use crate::{canonical, EXIT_FAIL, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleName {
    Obstacle1,
    Obstacle2,
    Pendulum,
    H2Check,
    LqrCheck,
}

impl ExampleName {
    pub const ALL: [ExampleName; 5] = [
        ExampleName::Obstacle1,
        ExampleName::Obstacle2,
        ExampleName::Pendulum,
        ExampleName::H2Check,
        ExampleName::LqrCheck,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleName::Obstacle1 => "obstacle1",
            ExampleName::Obstacle2 => "obstacle2",
            ExampleName::Pendulum => "pendulum",
            ExampleName::H2Check => "h2check",
            ExampleName::LqrCheck => "lqrcheck",
        }
    }
}

impl FromStr for ExampleName {
    type Err = momsynth::Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| momsynth::Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleArgs {
    pub out_dir: PathBuf,
    /// Shift of the single obstacle along x₂ (obstacle2 only).
    pub perturb: f64,
    /// Obstacle horizon.
    pub horizon: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub tol: f64,
    pub solver: SolverArgs,
}

impl ExampleArgs {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            perturb: 0.0,
            horizon: 60,
            trajectories: 10,
            seed: 0,
            tol: momsynth::verify::DEFAULT_VERIFY_TOL,
            solver: SolverArgs::default(),
        }
    }
}

/// What an example run produced.
#[derive(Debug, Clone)]
pub struct ExampleOutcome {
    pub solution: SolutionFile,
    pub report: Option<VerifyReport>,
    pub summary: String,
    pub exit_code: i32,
}

struct Materialized {
    problem: SynthesisProblem,
    excitation: Option<Excitation>,
    sim: SimulateArgs,
}

fn materialize(name: ExampleName, args: &ExampleArgs) -> Result<Materialized> {
    let mut sim = SimulateArgs {
        trajectories: args.trajectories,
        seed: args.seed,
        title: name.as_str().to_string(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (problem, excitation) = match name {
        ExampleName::Obstacle1 | ExampleName::Obstacle2 => {
            let mut s = if name == ExampleName::Obstacle1 {
                ObstacleScenario::two_obstacles()
            } else {
                ObstacleScenario::one_obstacle(args.perturb)
            };
            s.horizon = args.horizon;
            sim.obstacles = s.obstacles.clone();
            sim.margin = s.margin;
            (s.to_problem()?, None)
        }
        ExampleName::Pendulum => {
            let s = PendulumScenario::default();
            (s.to_problem()?, Some(s.excitation()))
        }
        ExampleName::H2Check => (H2Instance::random(&mut rng, 3, 2).to_problem()?, None),
        ExampleName::LqrCheck => (lqrcheck::random_lqr(&mut rng, 3, 2, 10)?, None),
    };
    Ok(Materialized {
        problem,
        excitation,
        sim,
    })
}

/// Runs scenario `name` into `args.out_dir`.
pub fn run_example(name: ExampleName, args: &ExampleArgs) -> Result<ExampleOutcome> {
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let Materialized {
        problem,
        excitation,
        mut sim,
    } = materialize(name, args)?;
    let file = ProblemFile::from_problem(&problem, excitation.as_ref());
    let problem_path = dir.join("problem.json");
    let solution_path = dir.join("solution.json");
    canonical::write(&problem_path, &file)?;

    let solution = commands::synthesize_file(&problem_path, &solution_path, &args.solver)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {}", name.as_str());
    let _ = writeln!(summary, "status: {}", solution.status);
    if let Some(obj) = solution.objective {
        let _ = writeln!(summary, "objective: {obj:.10e}");
    }
    if solution.status != SolverStatus::Optimal {
        std::fs::write(dir.join("summary.txt"), &summary)?;
        return Ok(ExampleOutcome {
            exit_code: commands::status_code(solution.status),
            solution,
            report: None,
            summary,
        });
    }

    sim.csv = Some(dir.join("trajectories.csv"));
    sim.svg = Some(dir.join("trajectories.svg"));
    let batch = commands::simulate_solution(&problem, &solution, &sim)?;

    let report = commands::verify_solution(&file, &problem, &solution, args.tol)?;
    std::fs::write(dir.join("verify.txt"), format!("{report}\n"))?;

    let policies = solution
        .policies()?
        .ok_or_else(|| anyhow!("optimal solution without policies"))?;
    let _ = writeln!(
        summary,
        "classification: {}",
        classify(&policies, DEFAULT_DET_TOL)
    );
    let _ = writeln!(
        summary,
        "max trace Sigma_v: {:.6e}",
        max_excitation(&policies)
    );
    match name {
        ExampleName::Obstacle1 | ExampleName::Obstacle2 => {
            obstacle_summary(&mut summary, &batch, &sim)
        }
        ExampleName::Pendulum => {
            pendulum_summary(&mut summary, dir, &problem, &solution, &policies, args)?
        }
        ExampleName::H2Check => {
            let inst = H2Instance::random(&mut ChaCha8Rng::seed_from_u64(args.seed), 3, 2);
            let h2 = inst.norm_squared(&policies[0].k2)?;
            let obj = solution.objective.unwrap_or(f64::NAN);
            let _ = writeln!(summary, "h2 norm squared at extracted gain: {h2:.10e}");
            let _ = writeln!(
                summary,
                "relative difference: {:.3e}",
                (obj - h2).abs() / h2.abs()
            );
        }
        ExampleName::LqrCheck => {
            let reference = lqrcheck::reference(&problem)?;
            let err = reference
                .gains
                .iter()
                .zip(&policies)
                .map(|(g, p)| (g - p.gain()).amax())
                .fold(0.0, f64::max);
            let _ = writeln!(summary, "max gain error vs Riccati: {err:.3e}");
        }
    }
    let _ = writeln!(
        summary,
        "verify: {}",
        if report.passed() { "pass" } else { "FAIL" }
    );
    std::fs::write(dir.join("summary.txt"), &summary)?;
    Ok(ExampleOutcome {
        exit_code: if report.passed() { EXIT_OK } else { EXIT_FAIL },
        solution,
        report: Some(report),
        summary,
    })
}

fn obstacle_summary(out: &mut String, batch: &TrajectoryBatch, sim: &SimulateArgs) {
    for (k, o) in sim.obstacles.iter().enumerate() {
        let mut closest = f64::INFINITY;
        let mut entered = 0;
        for i in 0..batch.len() {
            let d = batch
                .path(i)
                .map(|x| ((x[0] - o.center[0]).powi(2) + (x[1] - o.center[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            closest = closest.min(d);
            if d < o.radius {
                entered += 1;
            }
        }
        let _ = writeln!(
            out,
            "obstacle {} at ({}, {}): closest approach {closest:.4}, radius {}, paths entering {entered}/{}",
            k + 1,
            o.center[0],
            o.center[1],
            o.radius,
            batch.len()
        );
    }
    let end: Vec<f64> = (0..batch.len())
        .map(|i| {
            let x = batch.state(i, batch.horizon);
            (x[0] * x[0] + x[1] * x[1]).sqrt()
        })
        .collect();
    let worst = end.iter().copied().fold(0.0, f64::max);
    let _ = writeln!(out, "largest terminal distance from origin: {worst:.4}");
}

/// Simulated seconds for the swing-up runs, and the settling window.
const SWING_TIME: f64 = 80.0;
const SWITCH_DEADLINE: f64 = 60.0;
const SETTLE: f64 = 10.0;
const ANGLE_TOL: f64 = 0.05;

fn pendulum_summary(
    out: &mut String,
    dir: &Path,
    problem: &SynthesisProblem,
    solution: &SolutionFile,
    policies: &[momsynth::moments::AffinePolicy],
    args: &ExampleArgs,
) -> Result<()> {
    let scenario = PendulumScenario::default();
    let sigma = &solution.moments(4, 1)?[0];
    let energy = quad_expectation(
        sigma,
        &momsynth::model::QuadraticForm::cost(scenario.params.energy_matrix())?,
    )?;
    let _ = writeln!(
        out,
        "excitation: trace Sigma_v {:.6e}, bound {:.6e}",
        policies[0].excitation_trace(),
        scenario.excitation_level() * problem.dims.m as f64
    );
    let _ = writeln!(
        out,
        "average energy: {energy:.6e}, cap {:.6e}",
        scenario.energy_cap()
    );

    let stabilizer = Stabilizer::design(&scenario.params)?;
    let _ = writeln!(out, "switch level: {:.6e}", stabilizer.switch.level);
    let steps = (SWING_TIME / scenario.params.h).round() as usize;
    let config = SimConfig::new(args.trajectories, args.seed, steps);
    let run = simulate_pendulum(
        &scenario.params,
        &policies[0],
        &stabilizer.policy(),
        &stabilizer.switch,
        &config,
    )?;
    export_csv(&run.batch, &dir.join("swingup.csv"))?;
    render_svg(
        &run.batch,
        &Scene::time_series(1, "pendulum angle"),
        &dir.join("swingup.svg"),
    )?;
    let outcomes = swing_up_outcomes(&run, scenario.params.h, SETTLE);
    let wins = outcomes
        .iter()
        .filter(|o| o.succeeded(SWITCH_DEADLINE, ANGLE_TOL))
        .count();
    let _ = writeln!(
        out,
        "swing-up: {wins}/{} runs switched within {SWITCH_DEADLINE} s and stayed within {ANGLE_TOL} rad",
        outcomes.len()
    );
    let largest = (0..run.batch.len())
        .flat_map(|i| {
            run.batch
                .path(i)
                .map(|x| momsynth::simulate::pendulum::wrap_angle(x[1]).abs())
        })
        .fold(0.0, f64::max);
    let _ = writeln!(out, "largest angle from hanging: {largest:.4e} rad");
    Ok(())
}
