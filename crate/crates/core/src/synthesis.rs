//! End-to-end synthesis: lower, solve, read back moments and extract policies.

use serde::{Deserialize, Serialize};

use crate::builder::{add_schur_excitation, build, LoweringMap};
use crate::error::Result;
use crate::extract::{extract_policies, DEFAULT_EXTRACT_TOL};
use crate::model::{StageSelector, SynthesisMode, SynthesisProblem};
use crate::moments::{ftilde_residual, AffinePolicy, MomentMatrix};
use crate::scaling::Scaling;
use crate::sdp::{solve, SdpProblem, SdpSolution, SolverSettings, SolverStatus};

/// Lower bound `Σᵛ ⪰ level·I` on the selected stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub stages: StageSelector,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub solver: SolverSettings,
    pub extract_tol: f64,
    pub excitation: Option<Excitation>,
    /// Change of variables for the first solve.
    pub scaling: Option<Scaling>,
    /// Re-solves after a numerical failure, each rescaled by the root second
    /// moments of the previous iterate.
    pub rescale_retries: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            extract_tol: DEFAULT_EXTRACT_TOL,
            excitation: None,
            scaling: None,
            rescale_retries: 2,
        }
    }
}

/// Relative floor for scale factors derived from an iterate.
const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSolution {
    pub moments: Vec<MomentMatrix>,
    /// Empty unless the solver reported an optimum.
    pub policies: Vec<AffinePolicy>,
    pub objective: f64,
    pub solver_status: SolverStatus,
    /// Frobenius norms of the propagation residuals; the stationary residual comes last
    /// for programs with a stationary moment.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Builds the SDP for `problem`, including any excitation bound.
pub fn lower(
    problem: &SynthesisProblem,
    options: &SynthesisOptions,
) -> Result<(SdpProblem, LoweringMap)> {
    let (mut sdp, mut map) = build(problem)?;
    if let Some(ex) = options.excitation {
        add_schur_excitation(&mut sdp, &mut map, ex.stages, ex.level)?;
    }
    Ok((sdp, map))
}

/// Propagation residual norms of a moment sequence for `problem`.
pub fn propagation_residuals(
    problem: &SynthesisProblem,
    moments: &[MomentMatrix],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(moments.len());
    for t in 0..moments.len().saturating_sub(1) {
        let r = ftilde_residual(
            &moments[t],
            &moments[t + 1].state_moment(),
            problem.stage(t),
        )?;
        out.push(r.norm());
    }
    if !matches!(problem.mode, SynthesisMode::Finite) {
        if let Some(last) = moments.last() {
            let t = moments.len() - 1;
            let r = ftilde_residual(last, &last.state_moment(), problem.stage(t))?;
            out.push(r.norm());
        }
    }
    Ok(out)
}

/// Lowers, solves and extracts.
pub fn synthesize(
    problem: &SynthesisProblem,
    options: &SynthesisOptions,
) -> Result<SynthesisSolution> {
    let (mut moments, mut sol) = solve_scaled(problem, options, options.scaling.as_ref())?;
    for _ in 0..options.rescale_retries {
        if sol.status != SolverStatus::NumericalTrouble {
            break;
        }
        log::info!("retrying with variables rescaled from the last iterate");
        let scaling = Scaling::from_moments(&moments, SCALE_FLOOR)?;
        (moments, sol) = solve_scaled(problem, options, Some(&scaling))?;
    }
    assemble(problem, moments, &sol, options)
}

/// Solves `problem` in the coordinates given by `scaling` and returns the
/// moments in original coordinates.
fn solve_scaled(
    problem: &SynthesisProblem,
    options: &SynthesisOptions,
    scaling: Option<&Scaling>,
) -> Result<(Vec<MomentMatrix>, SdpSolution)> {
    let (scaled, excitation) = match scaling {
        Some(s) => (
            s.apply(problem)?,
            options.excitation.map(|ex| Excitation {
                level: s.excitation_level(ex.level),
                ..ex
            }),
        ),
        None => (problem.clone(), options.excitation),
    };
    let local = SynthesisOptions {
        excitation,
        ..options.clone()
    };
    let (sdp, map) = lower(&scaled, &local)?;
    let sol = solve(&sdp, &options.solver);
    log::info!(
        "solved {} blocks, {} equalities, {} inequalities: {} after {} iterations",
        sdp.blocks().len(),
        sdp.equalities().len(),
        sdp.inequalities().len(),
        sol.status,
        sol.iterations
    );
    let mut moments = map.moments(&sol.x)?;
    if let Some(s) = scaling {
        moments = moments
            .iter()
            .map(|m| s.restore(m))
            .collect::<Result<_>>()?;
    }
    Ok((moments, sol))
}

fn assemble(
    problem: &SynthesisProblem,
    moments: Vec<MomentMatrix>,
    sol: &SdpSolution,
    options: &SynthesisOptions,
) -> Result<SynthesisSolution> {
    let residuals = propagation_residuals(problem, &moments)?;
    let policies = if sol.status == SolverStatus::Optimal {
        extract_policies(&moments, options.extract_tol)?
    } else {
        Vec::new()
    };
    Ok(SynthesisSolution {
        moments,
        policies,
        objective: sol.objective,
        solver_status: sol.status,
        residuals,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dimensions, QuadraticForm, SystemStage};
    use crate::moments::StateMoment;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn finite_scalar_pipeline() {
        let horizon = 5;
        let stage = SystemStage::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 0.9),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.1),
        )
        .unwrap();
        let cost = QuadraticForm::cost(DMatrix::from_diagonal(&DVector::from_vec(vec![
            0.0, 1.0, 1.0,
        ])))
        .unwrap();
        let problem = SynthesisProblem::new(
            Dimensions::new(1, 1, horizon).unwrap(),
            vec![stage; horizon],
            vec![cost; horizon + 1],
            vec![],
            StateMoment::from_mean_cov(
                &DVector::from_element(1, 3.0),
                &DMatrix::from_element(1, 1, 0.5),
            )
            .unwrap(),
            SynthesisMode::Finite,
        )
        .unwrap();
        let sol = synthesize(&problem, &SynthesisOptions::default()).unwrap();
        assert_eq!(sol.solver_status, SolverStatus::Optimal);
        assert_eq!(sol.moments.len(), horizon + 1);
        assert_eq!(sol.policies.len(), horizon + 1);
        assert_eq!(sol.residuals.len(), horizon);
        assert!(sol.residuals.iter().all(|r| *r < 1e-7));
        // PSD costs give a deterministic optimum.
        assert!(sol.policies.iter().all(|p| p.excitation_trace() < 1e-6));
        // Last stage has no future: the input is zero.
        assert!(sol.policies[horizon].k2.amax() < 1e-5);
    }
}
