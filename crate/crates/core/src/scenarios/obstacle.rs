//! Planar single-integrator robot `x₊ = x + u` avoiding disks in expectation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Dimensions, QuadraticForm, StageConstraint, StageSelector, SynthesisMode, SynthesisProblem,
    SystemStage,
};
use crate::moments::StateMoment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleScenario {
    pub start: [f64; 2],
    pub obstacles: Vec<Obstacle>,
    /// Extra clearance added to every radius.
    pub margin: f64,
    /// Bound on `E‖uₜ‖²`.
    pub speed_bound: f64,
    pub horizon: usize,
    pub terminal_weight: f64,
}

impl ObstacleScenario {
    fn base(obstacles: Vec<Obstacle>) -> Self {
        Self {
            start: [-10.0, 0.0],
            obstacles,
            margin: 0.1,
            speed_bound: 0.1,
            horizon: 60,
            terminal_weight: 100.0,
        }
    }

    /// Two unit disks offset to either side of the straight path.
    pub fn two_obstacles() -> Self {
        Self::base(vec![
            Obstacle {
                center: [-7.5, 0.5],
                radius: 1.0,
            },
            Obstacle {
                center: [-2.5, -0.5],
                radius: 1.0,
            },
        ])
    }

    /// One unit disk centred on the straight path; `perturb` shifts it along x₂.
    pub fn one_obstacle(perturb: f64) -> Self {
        Self::base(vec![Obstacle {
            center: [-5.0, perturb],
            radius: 1.0,
        }])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParameter {
                name: name.into(),
                reason: reason.into(),
            })
        };
        if self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return bad("radius", "must be positive");
        }
        if !(self.margin >= 0.0) {
            return bad("margin", "must be nonnegative");
        }
        if !(self.speed_bound > 0.0) {
            return bad("speed_bound", "must be positive");
        }
        if !(self.terminal_weight >= 0.0) {
            return bad("terminal_weight", "must be nonnegative");
        }
        Ok(())
    }

    /// `E‖x − c‖² ≥ (r + ε)²` written as `trace(Σ H) ≤ 0`.
    pub fn clearance_form(&self, obstacle: &Obstacle) -> DMatrix<f64> {
        let c = DVector::from_row_slice(&obstacle.center);
        let mut h = DMatrix::zeros(5, 5);
        let reach = obstacle.radius + self.margin;
        h[(0, 0)] = reach * reach - c.norm_squared();
        for i in 0..2 {
            h[(0, 1 + i)] = c[i];
            h[(1 + i, 0)] = c[i];
            h[(1 + i, 1 + i)] = -1.0;
        }
        h
    }

    /// `E‖u‖² ≤ bound` written as `trace(Σ H) ≤ 0`.
    pub fn speed_form(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(5, 5);
        h[(0, 0)] = -self.speed_bound;
        h[(3, 3)] = 1.0;
        h[(4, 4)] = 1.0;
        h
    }

    pub fn to_problem(&self) -> Result<SynthesisProblem> {
        self.validate()?;
        let n = self.horizon;
        let stage = SystemStage::linear(DMatrix::identity(2, 2), DMatrix::identity(2, 2))?;
        let running = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0, 1.0, 1.0]));
        // The final input is never applied; its unit weight just pins it to zero.
        let w = self.terminal_weight;
        let terminal = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, w, w, 1.0, 1.0]));
        let mut costs = vec![QuadraticForm::cost(running)?; n];
        costs.push(QuadraticForm::cost(terminal)?);

        let mut constraints = vec![StageConstraint {
            stage: StageSelector::All,
            form: QuadraticForm::leq_zero(self.speed_form())?,
        }];
        for o in &self.obstacles {
            constraints.push(StageConstraint {
                stage: StageSelector::All,
                form: QuadraticForm::leq_zero(self.clearance_form(o))?,
            });
        }
        SynthesisProblem::new(
            Dimensions::new(2, 2, n)?,
            vec![stage; n],
            costs,
            constraints,
            StateMoment::dirac(&DVector::from_row_slice(&self.start)),
            SynthesisMode::Finite,
        )
    }
}
