//! File-level implementations of `synthesize`, `simulate` and `verify`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use momsynth::model::{SynthesisMode, SynthesisProblem};
use momsynth::moments::AffinePolicy;
use momsynth::scenarios::Obstacle;
use momsynth::sdp::{SolverSettings, SolverStatus};
use momsynth::simulate::{
    export_csv, render_svg, simulate_linear, InitialSampler, Scene, SimConfig, TrajectoryBatch,
};
use momsynth::synthesis::{synthesize, SynthesisOptions};
use momsynth::verify::{verify, VerifyOptions, VerifyReport};

use crate::schema::{self, ProblemFile};
use crate::solution::SolutionFile;
use crate::{canonical, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_OK, EXIT_UNBOUNDED};

/// Solver overrides; `None` keeps the default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverArgs {
    pub feas_tol: Option<f64>,
    pub gap_tol: Option<f64>,
    pub max_iters: Option<usize>,
}

impl SolverArgs {
    pub fn settings(&self) -> SolverSettings {
        let mut s = SolverSettings::default();
        if let Some(t) = self.feas_tol {
            s.feas_tol = t;
        }
        if let Some(t) = self.gap_tol {
            s.gap_tol = t;
            s.target_gap = s.target_gap.min(t);
        }
        if let Some(k) = self.max_iters {
            s.max_iters = k;
        }
        s
    }
}

pub fn status_code(status: SolverStatus) -> i32 {
    match status {
        SolverStatus::Optimal => EXIT_OK,
        SolverStatus::Infeasible => EXIT_INFEASIBLE,
        SolverStatus::Unbounded => EXIT_UNBOUNDED,
        SolverStatus::NumericalTrouble => EXIT_NUMERICAL,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_problem(path: &Path) -> Result<(ProblemFile, SynthesisProblem)> {
    let text = read(path)?;
    schema::load_problem(&text)
        .map_err(anyhow::Error::new)
        .with_context(|| format!("in problem file {}", path.display()))
}

pub fn read_solution(path: &Path) -> Result<SolutionFile> {
    let text = read(path)?;
    schema::parse(&text)
        .map_err(anyhow::Error::new)
        .with_context(|| format!("in solution file {}", path.display()))
}

/// Solves the problem in `problem_path` and writes the solution file.
pub fn synthesize_file(
    problem_path: &Path,
    out: &Path,
    solver: &SolverArgs,
) -> Result<SolutionFile> {
    let (file, problem) = read_problem(problem_path)?;
    let options = SynthesisOptions {
        solver: solver.settings(),
        excitation: file.excitation(),
        ..Default::default()
    };
    let sol = synthesize(&problem, &options)?;
    let out_file = SolutionFile::from_solution(&sol);
    canonical::write(out, &out_file)?;
    Ok(out_file)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    pub trajectories: usize,
    pub seed: u64,
    /// Steps for stationary problems; finite problems use their horizon.
    pub steps: usize,
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub obstacles: Vec<Obstacle>,
    pub margin: f64,
    pub title: String,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        Self {
            trajectories: 10,
            seed: 0,
            steps: 200,
            csv: None,
            svg: None,
            obstacles: Vec::new(),
            margin: 0.0,
            title: String::new(),
        }
    }
}

/// Per-step stages and policies for a simulation of `steps` steps.
fn schedule(
    problem: &SynthesisProblem,
    policies: &[AffinePolicy],
    steps: usize,
) -> (Vec<momsynth::model::SystemStage>, Vec<AffinePolicy>, usize) {
    match problem.mode {
        SynthesisMode::Finite => {
            let h = problem.dims.horizon;
            (problem.stages.clone(), policies[..h].to_vec(), h)
        }
        _ => {
            let last = problem.last_stage();
            let stages = (0..steps)
                .map(|t| problem.stage(t.min(last)).clone())
                .collect();
            let pols = (0..steps).map(|t| policies[t.min(last)].clone()).collect();
            (stages, pols, steps)
        }
    }
}

/// Samples closed-loop trajectories of a solved problem and writes the
/// requested outputs.
pub fn simulate_files(
    solution_path: &Path,
    problem_path: &Path,
    args: &SimulateArgs,
) -> Result<TrajectoryBatch> {
    let (_, problem) = read_problem(problem_path)?;
    let solution = read_solution(solution_path)?;
    simulate_solution(&problem, &solution, args)
}

pub fn simulate_solution(
    problem: &SynthesisProblem,
    solution: &SolutionFile,
    args: &SimulateArgs,
) -> Result<TrajectoryBatch> {
    solution.check_against(problem)?;
    let Some(policies) = solution.policies()? else {
        bail!(
            "solution carries no policies (solver status {})",
            solution.status
        );
    };
    let (stages, policies, horizon) = schedule(problem, &policies, args.steps);
    // Without a single transition there is nothing to record.
    let batch = if horizon == 0 {
        TrajectoryBatch::empty(problem.dims.n, problem.dims.m, 0)
    } else {
        let config = SimConfig::new(args.trajectories, args.seed, horizon);
        let sampler = InitialSampler::from_moment(&problem.initial)?;
        simulate_linear(&stages, &policies, &sampler, &config)?
    };
    if let Some(path) = &args.csv {
        export_csv(&batch, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.svg {
        let scene = if problem.dims.n >= 2 {
            Scene::planar(args.obstacles.clone(), args.margin, &args.title)
        } else {
            Scene::time_series(0, &args.title)
        };
        render_svg(&batch, &scene, path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(batch)
}

/// Checks a solution file against its problem.
pub fn verify_files(solution_path: &Path, problem_path: &Path, tol: f64) -> Result<VerifyReport> {
    let (file, problem) = read_problem(problem_path)?;
    let solution = read_solution(solution_path)?;
    verify_solution(&file, &problem, &solution, tol)
}

pub fn verify_solution(
    file: &ProblemFile,
    problem: &SynthesisProblem,
    solution: &SolutionFile,
    tol: f64,
) -> Result<VerifyReport> {
    solution.check_against(problem)?;
    let moments = solution.moments(problem.dims.n, problem.dims.m)?;
    let policies = solution.policies()?;
    let report = verify(
        problem,
        &moments,
        &VerifyOptions {
            tol,
            excitation: file.excitation(),
            objective: solution.objective,
            policies: policies.as_deref(),
        },
    )?;
    Ok(report)
}
