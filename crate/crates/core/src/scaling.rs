//! Diagonal change of variables `x = Dₓ x̃`, `u = dᵤ ũ`.
//!
//! The rescaled problem has the same optimal value; its moments map back by
//! `Σ = T Σ̃ T` with `T = diag(1, Dₓ, dᵤ I)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::model::{QuadraticForm, StageConstraint, SynthesisProblem, SystemStage};
use crate::moments::{MomentMatrix, StateMoment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub state: DVector<f64>,
    /// One factor for all inputs, so that `Σᵛ ⪰ cI` stays a multiple of the identity.
    pub input: f64,
}

impl Scaling {
    pub fn new(state: DVector<f64>, input: f64) -> Result<Self> {
        if !state
            .iter()
            .chain([&input])
            .all(|v| *v > 0.0 && v.is_finite())
        {
            return Err(Error::InvalidParameter {
                name: "scaling".into(),
                reason: "factors must be positive and finite".into(),
            });
        }
        Ok(Self { state, input })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            state: DVector::from_element(n, 1.0),
            input: 1.0,
        }
    }

    /// Root second moments, maximized over `moments` and floored at `floor`
    /// times the largest one.
    pub fn from_moments(moments: &[MomentMatrix], floor: f64) -> Result<Self> {
        let first = moments
            .first()
            .ok_or_else(|| dim_mismatch("moments for scaling", "at least one", 0))?;
        let (n, m) = (first.n(), first.m());
        let mut d = DVector::zeros(n + m);
        for sigma in moments {
            for i in 0..n + m {
                d[i] = f64::max(d[i], sigma.matrix()[(1 + i, 1 + i)].max(0.0).sqrt());
            }
        }
        let top = d.amax();
        if !(top > 0.0 && top.is_finite()) {
            return Ok(Self::identity(n));
        }
        let lo = floor * top;
        let state = d.rows(0, n).map(|v| v.max(lo));
        let input = if m == 0 {
            1.0
        } else {
            let mean_sq = d.rows(n, m).iter().map(|v| v * v).sum::<f64>() / m as f64;
            mean_sq.sqrt().max(lo)
        };
        Self::new(state, input)
    }

    pub fn n(&self) -> usize {
        self.state.len()
    }

    fn diag(&self, m: usize) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(1 + n + m, |i, _| match i {
            0 => 1.0,
            i if i <= n => self.state[i - 1],
            _ => self.input,
        })
    }

    fn congruence(mat: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(mat.nrows(), mat.ncols(), |i, j| d[i] * mat[(i, j)] * d[j])
    }

    fn stage(&self, s: &SystemStage) -> Result<SystemStage> {
        let dx = &self.state;
        let inv = dx.map(|v| 1.0 / v);
        let a = DMatrix::from_fn(s.a.nrows(), s.a.ncols(), |i, j| {
            inv[i] * s.a[(i, j)] * dx[j]
        });
        let b = DMatrix::from_fn(s.b.nrows(), s.b.ncols(), |i, j| {
            inv[i] * s.b[(i, j)] * self.input
        });
        SystemStage::new(
            s.f.component_mul(&inv),
            a,
            b,
            Self::congruence(&s.sigma_w, &inv),
        )
    }

    /// The same problem in scaled coordinates.
    pub fn apply(&self, problem: &SynthesisProblem) -> Result<SynthesisProblem> {
        let n = problem.dims.n;
        if self.n() != n {
            return Err(dim_mismatch("scaling", n, self.n()));
        }
        let t = self.diag(problem.dims.m);
        let form =
            |f: &QuadraticForm| QuadraticForm::new(Self::congruence(f.matrix(), &t), f.sense);
        let stages = problem
            .stages
            .iter()
            .map(|s| self.stage(s))
            .collect::<Result<Vec<_>>>()?;
        let costs = problem.costs.iter().map(form).collect::<Result<Vec<_>>>()?;
        let constraints = problem
            .constraints
            .iter()
            .map(|c| {
                Ok(StageConstraint {
                    stage: c.stage,
                    form: form(&c.form)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ts = t.rows(0, 1 + n).map(|v| 1.0 / v);
        let initial = StateMoment::new(Self::congruence(problem.initial.matrix(), &ts))?;
        SynthesisProblem::new(
            problem.dims,
            stages,
            costs,
            constraints,
            initial,
            problem.mode,
        )
    }

    /// Maps a moment of the scaled problem back to original coordinates.
    pub fn restore(&self, sigma: &MomentMatrix) -> Result<MomentMatrix> {
        let t = self.diag(sigma.m());
        MomentMatrix::new(Self::congruence(sigma.matrix(), &t), sigma.n(), sigma.m())
    }

    /// Excitation level `c` in `Σᵛ ⪰ cI` expressed for the scaled input.
    pub fn excitation_level(&self, level: f64) -> f64 {
        level / (self.input * self.input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dimensions, SynthesisMode};
    use crate::moments::{ftilde_residual, quad_expectation};

    fn problem() -> SynthesisProblem {
        let stage = SystemStage::new(
            DVector::from_vec(vec![0.5, -1.0]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
        )
        .unwrap();
        let cost = QuadraticForm::cost(DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                1.0 + i as f64
            } else {
                0.1
            }
        }))
        .unwrap();
        SynthesisProblem::new(
            Dimensions::new(2, 1, 1).unwrap(),
            vec![stage],
            vec![cost.clone(), cost],
            vec![],
            StateMoment::from_mean_cov(
                &DVector::from_vec(vec![1.0, 2.0]),
                &DMatrix::identity(2, 2),
            )
            .unwrap(),
            SynthesisMode::Finite,
        )
        .unwrap()
    }

    #[test]
    fn residual_and_cost_are_invariant() {
        let p = problem();
        let s = Scaling::new(DVector::from_vec(vec![10.0, 0.01]), 3.0).unwrap();
        let q = s.apply(&p).unwrap();
        // A scaled moment pair that propagates exactly maps to an exact original pair.
        let sigma_t = MomentMatrix::new(
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    1.0, 0.1, 20.0, 0.5, 0.1, 0.05, 1.0, 0.0, 20.0, 1.0, 500.0, 1.0, 0.5, 0.0, 1.0,
                    2.0,
                ],
            ),
            2,
            1,
        )
        .unwrap();
        let next_t = crate::moments::propagate_moment(&sigma_t, q.stage(0)).unwrap();
        let sigma = s.restore(&sigma_t).unwrap();
        let next = s
            .restore(
                &MomentMatrix::new(
                    {
                        let mut m = DMatrix::zeros(4, 4);
                        m.view_mut((0, 0), (3, 3)).copy_from(next_t.matrix());
                        m
                    },
                    2,
                    1,
                )
                .unwrap(),
            )
            .unwrap();
        let r = ftilde_residual(&sigma, &next.state_moment(), p.stage(0)).unwrap();
        assert!(r.amax() < 1e-9 * sigma.matrix().amax());
        let c0 = quad_expectation(&sigma, &p.costs[0]).unwrap();
        let c1 = quad_expectation(&sigma_t, &q.costs[0]).unwrap();
        assert!((c0 - c1).abs() < 1e-10 * c0.abs());
    }

    #[test]
    fn initial_moment_roundtrip() {
        let p = problem();
        let s = Scaling::new(DVector::from_vec(vec![4.0, 0.5]), 2.0).unwrap();
        let q = s.apply(&p).unwrap();
        assert!((q.initial.mean() - DVector::from_vec(vec![0.25, 4.0])).amax() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_factors() {
        assert!(Scaling::new(DVector::from_vec(vec![1.0, 0.0]), 1.0).is_err());
        assert!(Scaling::new(DVector::from_vec(vec![1.0]), -1.0).is_err());
    }

    #[test]
    fn from_moment_floors_small_entries() {
        let sigma = MomentMatrix::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e4, 0.0, 4.0])),
            2,
            1,
        )
        .unwrap();
        let s = Scaling::from_moments(&[sigma], 1e-6).unwrap();
        assert_eq!(s.state[0], 100.0);
        assert!((s.state[1] - 1e-4).abs() < 1e-18);
        assert_eq!(s.input, 2.0);
    }
}
