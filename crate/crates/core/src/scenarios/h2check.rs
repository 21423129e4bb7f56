//! Stationary H₂ state-feedback instances.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::duality::h2_norm_squared;
use crate::duality::random::{gaussian_matrix, stable_matrix};
use crate::error::Result;
use crate::model::{Dimensions, QuadraticForm, SynthesisMode, SynthesisProblem, SystemStage};
use crate::moments::StateMoment;

/// `x₊ = Ax + Bu + B2 w` with `w` white and unit covariance, output `Cx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Instance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl H2Instance {
    /// Full column rank `B` and `C` keep the optimal gain finite and unique.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Self {
        let mut c = gaussian_matrix(rng, n, n);
        for i in 0..n {
            c[(i, i)] += 2.0;
        }
        Self {
            a: stable_matrix(rng, n) * rng.random_range(1.0..1.5),
            b: gaussian_matrix(rng, n, m),
            b2: gaussian_matrix(rng, n, n) * 0.5 + DMatrix::identity(n, n) * 0.5,
            c,
        }
    }

    pub fn stage(&self) -> Result<SystemStage> {
        let n = self.a.nrows();
        SystemStage::new(
            nalgebra::DVector::zeros(n),
            self.a.clone(),
            self.b.clone(),
            &self.b2 * self.b2.transpose(),
        )
    }

    /// Stationary problem with cost `‖Cx‖²`.
    pub fn to_problem(&self) -> Result<SynthesisProblem> {
        let (n, m) = (self.a.nrows(), self.b.ncols());
        let mut row = DMatrix::zeros(self.c.nrows(), 1 + n + m);
        row.view_mut((0, 1), (self.c.nrows(), n)).copy_from(&self.c);
        let cost = QuadraticForm::cost(row.transpose() * row)?;
        SynthesisProblem::new(
            Dimensions::new(n, m, 0)?,
            vec![self.stage()?],
            vec![cost],
            Vec::new(),
            StateMoment::dirac(&nalgebra::DVector::zeros(n)),
            SynthesisMode::Stationary,
        )
    }

    pub fn norm_squared(&self, k2: &DMatrix<f64>) -> Result<f64> {
        h2_norm_squared(&self.stage()?, &self.c, &self.b2, k2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_loop_norm() {
        let inst = H2Instance {
            a: DMatrix::from_element(1, 1, 0.5),
            b: DMatrix::from_element(1, 1, 1.0),
            b2: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
        };
        assert!((inst.norm_squared(&DMatrix::zeros(1, 1)).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        let p = inst.to_problem().unwrap();
        assert_eq!(p.costs[0].matrix()[(1, 1)], 1.0);
        assert_eq!(p.costs[0].matrix()[(2, 2)], 0.0);
    }
}
