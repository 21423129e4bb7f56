//! Stationary escape-policy synthesis for the cart-pole swing-up.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{
    Dimensions, QuadraticForm, StageConstraint, StageSelector, SynthesisMode, SynthesisProblem,
};
use crate::moments::StateMoment;
use crate::simulate::PendulumParams;
use crate::synthesis::Excitation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumScenario {
    pub params: PendulumParams,
    /// Reward per unit of average energy.
    pub energy_weight: f64,
    /// The energy bound is `e` at this angle with zero rate.
    pub cap_angle: f64,
    /// `Σᵛ ⪰ excitation_rate·h`.
    pub excitation_rate: f64,
}

impl Default for PendulumScenario {
    fn default() -> Self {
        Self {
            params: PendulumParams::default(),
            energy_weight: 1e4,
            cap_angle: 2.0,
            excitation_rate: 1e4,
        }
    }
}

impl PendulumScenario {
    pub fn energy_cap(&self) -> f64 {
        self.params.energy(self.cap_angle, 0.0)
    }

    pub fn excitation_level(&self) -> f64 {
        self.excitation_rate * self.params.h
    }

    pub fn excitation(&self) -> Excitation {
        Excitation {
            stages: StageSelector::All,
            level: self.excitation_level(),
        }
    }

    /// `E e ≤ cap` as `trace(Σ H) ≤ 0`.
    pub fn energy_form(&self) -> DMatrix<f64> {
        let mut h = self.params.energy_matrix();
        h[(0, 0)] = -self.energy_cap();
        h
    }

    /// `x₁² + x₃² + u² − weight·e`.
    pub fn cost_matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]));
        r -= self.params.energy_matrix() * self.energy_weight;
        r
    }

    pub fn to_problem(&self) -> Result<SynthesisProblem> {
        self.params.validate()?;
        SynthesisProblem::new(
            Dimensions::new(4, 1, 0)?,
            vec![self.params.synthesis_stage()],
            vec![QuadraticForm::cost(self.cost_matrix())?],
            vec![StageConstraint {
                stage: StageSelector::All,
                form: QuadraticForm::leq_zero(self.energy_form())?,
            }],
            StateMoment::dirac(&DVector::zeros(4)),
            SynthesisMode::Stationary,
        )
    }
}
