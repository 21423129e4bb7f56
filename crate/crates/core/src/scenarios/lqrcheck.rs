//! Random unconstrained finite-horizon LQR instances with a Riccati reference.

use nalgebra::DMatrix;
use rand::Rng;

use crate::duality::random::{gaussian_matrix, gaussian_vector, spd_matrix, stable_matrix};
use crate::duality::{riccati_lqr, RiccatiSolution};
use crate::error::Result;
use crate::model::{Dimensions, QuadraticForm, SynthesisMode, SynthesisProblem, SystemStage};
use crate::moments::StateMoment;

/// Time-varying affine stages, PSD costs with a positive definite input block
/// and a nondegenerate Gaussian initial state.
pub fn random_lqr<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
    horizon: usize,
) -> Result<SynthesisProblem> {
    let d = 1 + n + m;
    let stages = (0..horizon)
        .map(|_| {
            SystemStage::new(
                gaussian_vector(rng, n) * 0.3,
                stable_matrix(rng, n),
                gaussian_matrix(rng, n, m),
                spd_matrix(rng, n, 0.5) * 0.1,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let costs = (0..=horizon)
        .map(|_| {
            let l = gaussian_matrix(rng, d, d);
            let mut r = &l * l.transpose() / d as f64;
            for i in 1 + n..d {
                r[(i, i)] += 0.2;
            }
            QuadraticForm::cost(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let initial = StateMoment::from_mean_cov(&gaussian_vector(rng, n), &spd_matrix(rng, n, 0.1))?;
    SynthesisProblem::new(
        Dimensions::new(n, m, horizon)?,
        stages,
        costs,
        Vec::new(),
        initial,
        SynthesisMode::Finite,
    )
}

/// Riccati reference for an unconstrained finite-horizon problem.
pub fn reference(problem: &SynthesisProblem) -> Result<RiccatiSolution> {
    riccati_lqr(problem.dims.n, &problem.stages, &problem.costs)
}

/// Deterministic scalar example: `x₊ = 0.9x + u + w`, unit weights.
pub fn scalar_example() -> Result<SynthesisProblem> {
    let horizon = 10;
    let stage = SystemStage::new(
        nalgebra::DVector::zeros(1),
        DMatrix::from_element(1, 1, 0.9),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.1),
    )?;
    let cost = QuadraticForm::cost(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        0.0, 1.0, 1.0,
    ])))?;
    SynthesisProblem::new(
        Dimensions::new(1, 1, horizon)?,
        vec![stage; horizon],
        vec![cost; horizon + 1],
        Vec::new(),
        StateMoment::from_mean_cov(
            &nalgebra::DVector::from_element(1, 3.0),
            &DMatrix::from_element(1, 1, 0.5),
        )?,
        SynthesisMode::Finite,
    )
}
