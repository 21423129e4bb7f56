//! Block-diagonal semidefinite programs in standard form and their solver.
//!
//! ```text
//!   minimize    Σ_b trace(C_b X_b)
//!   subject to  Σ_b trace(A_jb X_b) = b_j     (equalities)
//!               Σ_b trace(A_jb X_b) ≤ b_j     (inequalities)
//!               X_b ⪰ 0
//! ```

mod dump;
mod ipm;
mod svec;

pub use dump::write_triplets;
pub use ipm::solve;
pub use svec::{smat, svec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, shape, Error, Result};
use crate::linalg::{self, frob_dot, symmetrize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub size: usize,
}

/// Coefficient of one block in a linear constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTerm {
    pub block: usize,
    pub coeff: DMatrix<f64>,
}

/// `Σ_terms trace(coeff · X_block)` compared against `rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<BlockTerm>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn evaluate(&self, x: &[DMatrix<f64>]) -> f64 {
        self.terms
            .iter()
            .map(|t| frob_dot(&t.coeff, &x[t.block]))
            .sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    blocks: Vec<BlockSpec>,
    objective: Vec<DMatrix<f64>>,
    equalities: Vec<LinearConstraint>,
    inequalities: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a new PSD block and returns its index.
    pub fn add_block(&mut self, name: impl Into<String>, size: usize) -> Result<usize> {
        let name = name.into();
        if size == 0 {
            return Err(Error::InvalidParameter {
                name: format!("block {name}"),
                reason: "size must be positive".into(),
            });
        }
        if self.block_index(&name).is_some() {
            return Err(Error::InvalidParameter {
                name: format!("block {name}"),
                reason: "duplicate block name".into(),
            });
        }
        self.blocks.push(BlockSpec { name, size });
        self.objective.push(DMatrix::zeros(size, size));
        Ok(self.blocks.len() - 1)
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn objective(&self) -> &[DMatrix<f64>] {
        &self.objective
    }

    pub fn equalities(&self) -> &[LinearConstraint] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[LinearConstraint] {
        &self.inequalities
    }

    /// Adds `coeff` to the objective coefficient of `block`.
    pub fn add_objective(&mut self, block: usize, coeff: &DMatrix<f64>) -> Result<()> {
        let coeff = self.checked_coeff(block, coeff)?;
        self.objective[block] += coeff;
        Ok(())
    }

    pub fn add_equality(&mut self, terms: Vec<(usize, DMatrix<f64>)>, rhs: f64) -> Result<usize> {
        let c = self.checked_constraint(terms, rhs)?;
        self.equalities.push(c);
        Ok(self.equalities.len() - 1)
    }

    pub fn add_inequality(&mut self, terms: Vec<(usize, DMatrix<f64>)>, rhs: f64) -> Result<usize> {
        let c = self.checked_constraint(terms, rhs)?;
        self.inequalities.push(c);
        Ok(self.inequalities.len() - 1)
    }

    fn checked_coeff(&self, block: usize, coeff: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let spec = self.blocks.get(block).ok_or_else(|| Error::OutOfRange {
            what: "SDP block".into(),
            index: block,
            len: self.blocks.len(),
        })?;
        if coeff.nrows() != spec.size || coeff.ncols() != spec.size {
            return Err(dim_mismatch(
                format!("coefficient for block {}", spec.name),
                shape(spec.size, spec.size),
                shape(coeff.nrows(), coeff.ncols()),
            ));
        }
        Ok(symmetrize(coeff, "SDP coefficient"))
    }

    fn checked_constraint(
        &self,
        terms: Vec<(usize, DMatrix<f64>)>,
        rhs: f64,
    ) -> Result<LinearConstraint> {
        let mut merged: Vec<BlockTerm> = Vec::with_capacity(terms.len());
        for (block, coeff) in terms {
            let coeff = self.checked_coeff(block, &coeff)?;
            match merged.iter_mut().find(|t| t.block == block) {
                Some(t) => t.coeff += coeff,
                None => merged.push(BlockTerm { block, coeff }),
            }
        }
        Ok(LinearConstraint { terms: merged, rhs })
    }

    pub fn objective_value(&self, x: &[DMatrix<f64>]) -> f64 {
        self.objective
            .iter()
            .zip(x)
            .map(|(c, xb)| frob_dot(c, xb))
            .sum()
    }

    /// `max_j |Σ trace(A_j X) − b_j|` over the equalities.
    pub fn max_equality_residual(&self, x: &[DMatrix<f64>]) -> f64 {
        self.equalities
            .iter()
            .map(|c| (c.evaluate(x) - c.rhs).abs())
            .fold(0.0, f64::max)
    }

    /// `max_j max(0, Σ trace(A_j X) − b_j)` over the inequalities.
    pub fn max_inequality_violation(&self, x: &[DMatrix<f64>]) -> f64 {
        self.inequalities
            .iter()
            .map(|c| (c.evaluate(x) - c.rhs).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn min_block_eigenvalue(x: &[DMatrix<f64>]) -> f64 {
        x.iter()
            .map(linalg::min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalTrouble,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::Unbounded => "unbounded",
            SolverStatus::NumericalTrouble => "numerical_trouble",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Feasibility tolerance, relative to `1 + ‖b‖∞` for equalities.
    pub feas_tol: f64,
    /// Relative duality-gap tolerance for declaring optimality.
    pub gap_tol: f64,
    /// Gap the iterations aim for before stopping. Moment blocks converge
    /// roughly like the square root of the gap, so this sits well below `gap_tol`.
    pub target_gap: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            target_gap: 1e-11,
            max_iters: 200,
        }
    }
}

impl SolverSettings {
    pub fn with_feas_tol(mut self, tol: f64) -> Self {
        self.feas_tol = tol;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// One symmetric matrix per declared block.
    pub x: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub min_block_eigenvalue: f64,
    pub relative_gap: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_block_names_rejected() {
        let mut p = SdpProblem::new();
        p.add_block("a", 2).unwrap();
        assert!(p.add_block("a", 3).is_err());
        assert!(p.add_block("b", 0).is_err());
    }

    #[test]
    fn coefficient_shape_checked() {
        let mut p = SdpProblem::new();
        let b = p.add_block("a", 2).unwrap();
        assert!(p
            .add_equality(vec![(b, DMatrix::zeros(3, 3))], 0.0)
            .is_err());
        assert!(p
            .add_equality(vec![(7, DMatrix::zeros(2, 2))], 0.0)
            .is_err());
    }

    #[test]
    fn repeated_block_terms_merge() {
        let mut p = SdpProblem::new();
        let b = p.add_block("a", 1).unwrap();
        let one = DMatrix::identity(1, 1);
        p.add_equality(vec![(b, one.clone()), (b, one.clone())], 4.0)
            .unwrap();
        let x = vec![DMatrix::from_element(1, 1, 2.0)];
        assert_eq!(p.equalities()[0].terms.len(), 1);
        assert_eq!(p.max_equality_residual(&x), 0.0);
    }
}
