//! Problem data: plant stages, quadratic forms and assembled synthesis problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, shape, Error, Result};
use crate::linalg::{self, symmetrize};
use crate::moments::StateMoment;

/// Problem sizes: state `n`, input `m`, horizon `N` and constraints per stage `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub constraints_per_stage: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize, horizon: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n".into(),
                reason: "state dimension must be at least 1".into(),
            });
        }
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m".into(),
                reason: "input dimension must be at least 1".into(),
            });
        }
        Ok(Self {
            n,
            m,
            horizon,
            constraints_per_stage: 0,
        })
    }

    /// Side length of a moment matrix, `1 + n + m`.
    pub fn moment_dim(&self) -> usize {
        1 + self.n + self.m
    }
}

/// Affine dynamics `x₊ = f + Ax + Bu + w` with `E wwᵀ = Σʷ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStage {
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
}

impl SystemStage {
    pub fn new(
        f: DVector<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
    ) -> Result<Self> {
        let n = f.len();
        linalg::require_shape(&a, n, n, "stage A")?;
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_mismatch(
                "stage B",
                format!("{n}xm"),
                shape(b.nrows(), b.ncols()),
            ));
        }
        linalg::require_shape(&sigma_w, n, n, "stage Σw")?;
        let sigma_w = symmetrize(&sigma_w, "stage Σw");
        linalg::require_psd(&sigma_w, "stage Σw")?;
        Ok(Self { f, a, b, sigma_w })
    }

    /// Time-invariant linear stage without offset or noise.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(DVector::zeros(n), a, b, DMatrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Whether a quadratic form is minimized or constrained as `E zᵀHz ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormSense {
    Cost,
    LeqZero,
}

/// Symmetric, possibly indefinite, form on `(1, x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    matrix: DMatrix<f64>,
    pub sense: FormSense,
}

impl QuadraticForm {
    pub fn new(matrix: DMatrix<f64>, sense: FormSense) -> Result<Self> {
        linalg::require_square(&matrix, "quadratic form")?;
        Ok(Self {
            matrix: symmetrize(&matrix, "quadratic form"),
            sense,
        })
    }

    pub fn cost(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, FormSense::Cost)
    }

    pub fn leq_zero(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, FormSense::LeqZero)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: &self.matrix * factor,
            sense: self.sense,
        }
    }
}

/// Which stages a constraint applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSelector {
    At(usize),
    All,
}

impl StageSelector {
    pub fn includes(&self, t: usize) -> bool {
        match self {
            StageSelector::At(s) => *s == t,
            StageSelector::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConstraint {
    pub stage: StageSelector,
    pub form: QuadraticForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SynthesisMode {
    /// Finite horizon `t = 0..N` with time-varying data.
    Finite,
    /// Infinite-horizon average cost over a single stationary moment matrix.
    Stationary,
    /// `N` transient stages followed by a stationary tail, discounted by `gamma`.
    StationaryTail { gamma: f64 },
}

/// A complete synthesis problem.
///
/// Stage and cost counts per mode:
/// * finite: `N` stages, `N+1` costs;
/// * stationary: one stage, one cost, `N = 0`;
/// * stationary tail: `N+1` stages (or one, reused), one undiscounted cost `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisProblem {
    pub dims: Dimensions,
    pub stages: Vec<SystemStage>,
    pub costs: Vec<QuadraticForm>,
    pub constraints: Vec<StageConstraint>,
    pub initial: StateMoment,
    pub mode: SynthesisMode,
}

impl SynthesisProblem {
    pub fn new(
        dims: Dimensions,
        stages: Vec<SystemStage>,
        costs: Vec<QuadraticForm>,
        constraints: Vec<StageConstraint>,
        initial: StateMoment,
        mode: SynthesisMode,
    ) -> Result<Self> {
        let mut problem = Self {
            dims,
            stages,
            costs,
            constraints,
            initial,
            mode,
        };
        problem.validate()?;
        problem.dims.constraints_per_stage = (0..=problem.last_stage())
            .map(|t| problem.constraints_at(t).count())
            .max()
            .unwrap_or(0);
        Ok(problem)
    }

    fn validate(&self) -> Result<()> {
        let Dimensions { n, m, horizon, .. } = self.dims;
        let d = self.dims.moment_dim();
        let (stages_ok, costs_ok) = match self.mode {
            SynthesisMode::Finite => (
                self.stages.len() == horizon,
                self.costs.len() == horizon + 1,
            ),
            SynthesisMode::Stationary => {
                if horizon != 0 {
                    return Err(Error::InvalidParameter {
                        name: "horizon".into(),
                        reason: "stationary problems have horizon 0".into(),
                    });
                }
                (self.stages.len() == 1, self.costs.len() == 1)
            }
            SynthesisMode::StationaryTail { gamma } => {
                if !(0.0..1.0).contains(&gamma) {
                    return Err(Error::InvalidParameter {
                        name: "gamma".into(),
                        reason: format!("discount {gamma} outside [0, 1)"),
                    });
                }
                (
                    self.stages.len() == horizon + 1 || self.stages.len() == 1,
                    self.costs.len() == 1,
                )
            }
        };
        if !stages_ok {
            return Err(dim_mismatch(
                format!("stage count for {:?} mode", self.mode),
                self.expected_stage_count(),
                self.stages.len(),
            ));
        }
        if !costs_ok {
            return Err(dim_mismatch(
                format!("cost count for {:?} mode", self.mode),
                self.expected_cost_count(),
                self.costs.len(),
            ));
        }
        for (t, stage) in self.stages.iter().enumerate() {
            if stage.n() != n || stage.m() != m {
                return Err(dim_mismatch(
                    format!("stage {t} (n, m)"),
                    format!("({n}, {m})"),
                    format!("({}, {})", stage.n(), stage.m()),
                ));
            }
        }
        for (t, cost) in self.costs.iter().enumerate() {
            if cost.dim() != d {
                return Err(dim_mismatch(
                    format!("cost {t}"),
                    shape(d, d),
                    shape(cost.dim(), cost.dim()),
                ));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.form.dim() != d {
                return Err(dim_mismatch(
                    format!("constraint {i}"),
                    shape(d, d),
                    shape(c.form.dim(), c.form.dim()),
                ));
            }
            if let StageSelector::At(t) = c.stage {
                if t > self.last_stage() {
                    return Err(Error::OutOfRange {
                        what: format!("constraint {i} stage"),
                        index: t,
                        len: self.last_stage() + 1,
                    });
                }
            }
        }
        if self.initial.n() != n {
            return Err(dim_mismatch("initial state moment", n, self.initial.n()));
        }
        Ok(())
    }

    fn expected_stage_count(&self) -> String {
        match self.mode {
            SynthesisMode::Finite => self.dims.horizon.to_string(),
            SynthesisMode::Stationary => "1".into(),
            SynthesisMode::StationaryTail { .. } => format!("{} or 1", self.dims.horizon + 1),
        }
    }

    fn expected_cost_count(&self) -> String {
        match self.mode {
            SynthesisMode::Finite => (self.dims.horizon + 1).to_string(),
            _ => "1".into(),
        }
    }

    /// Index of the last moment matrix (`N`, or 0 for stationary problems).
    pub fn last_stage(&self) -> usize {
        match self.mode {
            SynthesisMode::Stationary => 0,
            _ => self.dims.horizon,
        }
    }

    /// Number of moment matrices in the lowered program.
    pub fn moment_count(&self) -> usize {
        self.last_stage() + 1
    }

    pub fn constraints_at(&self, t: usize) -> impl Iterator<Item = &QuadraticForm> {
        self.constraints
            .iter()
            .filter(move |c| c.stage.includes(t))
            .map(|c| &c.form)
    }

    /// Dynamics applied when leaving moment `t`.
    pub fn stage(&self, t: usize) -> &SystemStage {
        if self.stages.len() == 1 {
            &self.stages[0]
        } else {
            &self.stages[t]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage() -> SystemStage {
        SystemStage::linear(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap()
    }

    fn cost() -> QuadraticForm {
        QuadraticForm::cost(DMatrix::identity(3, 3)).unwrap()
    }

    #[test]
    fn rejects_zero_dimensions() {
        assert!(Dimensions::new(0, 1, 1).is_err());
        assert!(Dimensions::new(1, 0, 1).is_err());
    }

    #[test]
    fn rejects_asymmetric_negative_noise() {
        let w = DMatrix::from_element(1, 1, -1.0);
        let err = SystemStage::new(
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            w,
        );
        assert!(matches!(err, Err(Error::NotPsd { .. })));
    }

    #[test]
    fn finite_counts_checked() {
        let dims = Dimensions::new(1, 1, 2).unwrap();
        let init = StateMoment::dirac(&DVector::from_element(1, 1.0));
        let bad = SynthesisProblem::new(
            dims,
            vec![stage()],
            vec![cost(); 3],
            vec![],
            init.clone(),
            SynthesisMode::Finite,
        );
        assert!(bad.is_err());
        let ok = SynthesisProblem::new(
            dims,
            vec![stage(); 2],
            vec![cost(); 3],
            vec![StageConstraint {
                stage: StageSelector::All,
                form: QuadraticForm::leq_zero(DMatrix::zeros(3, 3)).unwrap(),
            }],
            init,
            SynthesisMode::Finite,
        )
        .unwrap();
        assert_eq!(ok.dims.constraints_per_stage, 1);
        assert_eq!(ok.moment_count(), 3);
    }

    #[test]
    fn gamma_range_enforced() {
        let dims = Dimensions::new(1, 1, 1).unwrap();
        let init = StateMoment::dirac(&DVector::from_element(1, 1.0));
        for gamma in [-0.1, 1.0, 1.5] {
            let r = SynthesisProblem::new(
                dims,
                vec![stage()],
                vec![cost()],
                vec![],
                init.clone(),
                SynthesisMode::StationaryTail { gamma },
            );
            assert!(
                matches!(r, Err(Error::InvalidParameter { .. })),
                "gamma {gamma}"
            );
        }
    }

    #[test]
    fn constraint_stage_out_of_range() {
        let dims = Dimensions::new(1, 1, 1).unwrap();
        let init = StateMoment::dirac(&DVector::from_element(1, 1.0));
        let r = SynthesisProblem::new(
            dims,
            vec![stage()],
            vec![cost(); 2],
            vec![StageConstraint {
                stage: StageSelector::At(5),
                form: QuadraticForm::leq_zero(DMatrix::zeros(3, 3)).unwrap(),
            }],
            init,
            SynthesisMode::Finite,
        );
        assert!(matches!(r, Err(Error::OutOfRange { .. })));
    }
}
