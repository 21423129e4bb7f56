//! Second-moment matrices of `(1, x, u)` and the exact one-step moment map.
//!
//! A [`MomentMatrix`] is `E[(1,x,u)(1,x,u)ᵀ]`, partitioned as
//!
//! ```text
//!     [ σ11  σ12  σ13 ]
//!     [ σ21  Σ22  Σ23 ]
//!     [ σ31  Σ32  Σ33 ]
//! ```
//!
//! with a scalar first row/column, an `n×n` state block and an `m×m` input
//! block. Its `(1+n)` leading principal block is a [`StateMoment`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, shape, Result};
use crate::linalg::{self, frob_dot, symmetrize};
use crate::model::{QuadraticForm, SystemStage};

/// Symmetric `(1+n+m)×(1+n+m)` moment matrix of `(1, x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrix {
    n: usize,
    m: usize,
    data: DMatrix<f64>,
}

impl MomentMatrix {
    pub fn new(data: DMatrix<f64>, n: usize, m: usize) -> Result<Self> {
        let d = 1 + n + m;
        linalg::require_shape(&data, d, d, "moment matrix")?;
        Ok(Self {
            n,
            m,
            data: symmetrize(&data, "moment matrix"),
        })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        let d = 1 + n + m;
        Self {
            n,
            m,
            data: DMatrix::zeros(d, d),
        }
    }

    /// Moment matrix of the deterministic point `(1, x, u)`.
    pub fn dirac(x: &DVector<f64>, u: &DVector<f64>) -> Self {
        let z = stack_point(x, u);
        Self {
            n: x.len(),
            m: u.len(),
            data: &z * z.transpose(),
        }
    }

    /// Moments produced at one stage by `u = k¹ + K²x + v` when `(1,x)` has moments `state`.
    pub fn realize(state: &StateMoment, policy: &AffinePolicy) -> Result<Self> {
        let n = state.n();
        let m = policy.m();
        if policy.n() != n {
            return Err(dim_mismatch("policy state dimension", n, policy.n()));
        }
        let gain = policy.gain();
        let s = state.matrix();
        let cross = &gain * s;
        let uu = &cross * gain.transpose() + &policy.sigma_v;
        let d = 1 + n + m;
        let mut data = DMatrix::zeros(d, d);
        data.view_mut((0, 0), (1 + n, 1 + n)).copy_from(s);
        data.view_mut((1 + n, 0), (m, 1 + n)).copy_from(&cross);
        data.view_mut((0, 1 + n), (1 + n, m))
            .copy_from(&cross.transpose());
        data.view_mut((1 + n, 1 + n), (m, m)).copy_from(&uu);
        Self::new(data, n, m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        1 + self.n + self.m
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn sigma11(&self) -> f64 {
        self.data[(0, 0)]
    }

    /// `E xᵀ` as a column vector.
    pub fn sigma12(&self) -> DVector<f64> {
        self.data.view((1, 0), (self.n, 1)).column(0).into_owned()
    }

    /// `E uᵀ` as a column vector.
    pub fn sigma13(&self) -> DVector<f64> {
        self.data
            .view((1 + self.n, 0), (self.m, 1))
            .column(0)
            .into_owned()
    }

    pub fn sigma22(&self) -> DMatrix<f64> {
        self.data.view((1, 1), (self.n, self.n)).into_owned()
    }

    pub fn sigma23(&self) -> DMatrix<f64> {
        self.data
            .view((1, 1 + self.n), (self.n, self.m))
            .into_owned()
    }

    pub fn sigma32(&self) -> DMatrix<f64> {
        self.sigma23().transpose()
    }

    pub fn sigma33(&self) -> DMatrix<f64> {
        self.data
            .view((1 + self.n, 1 + self.n), (self.m, self.m))
            .into_owned()
    }

    /// `[σ31 Σ32]`, the `m×(1+n)` cross block between input and `(1,x)`.
    pub fn input_cross(&self) -> DMatrix<f64> {
        self.data
            .view((1 + self.n, 0), (self.m, 1 + self.n))
            .into_owned()
    }

    /// The `(1,x)` marginal.
    pub fn state_moment(&self) -> StateMoment {
        StateMoment {
            data: self
                .data
                .view((0, 0), (1 + self.n, 1 + self.n))
                .into_owned(),
        }
    }

    pub fn frobenius_distance(&self, other: &MomentMatrix) -> f64 {
        (&self.data - &other.data).norm()
    }
}

/// Symmetric `(1+n)×(1+n)` moment matrix of `(1, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMoment {
    data: DMatrix<f64>,
}

impl StateMoment {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let d = linalg::require_square(&data, "state moment")?;
        if d == 0 {
            return Err(dim_mismatch("state moment", "at least 1x1", shape(0, 0)));
        }
        Ok(Self {
            data: symmetrize(&data, "state moment"),
        })
    }

    pub fn from_blocks(
        sigma11: f64,
        sigma12: &DVector<f64>,
        sigma22: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = sigma12.len();
        linalg::require_shape(sigma22, n, n, "state moment Σ22")?;
        let mut data = DMatrix::zeros(1 + n, 1 + n);
        data[(0, 0)] = sigma11;
        for i in 0..n {
            data[(0, 1 + i)] = sigma12[i];
            data[(1 + i, 0)] = sigma12[i];
        }
        data.view_mut((1, 1), (n, n)).copy_from(sigma22);
        Self::new(data)
    }

    /// Moments of the point mass at `x`.
    pub fn dirac(x: &DVector<f64>) -> Self {
        let z = stack_point(x, &DVector::zeros(0));
        Self {
            data: &z * z.transpose(),
        }
    }

    /// Moments of a distribution with the given mean and covariance.
    pub fn from_mean_cov(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let second = cov + mean * mean.transpose();
        Self::from_blocks(1.0, mean, &second)
    }

    pub fn n(&self) -> usize {
        self.data.nrows() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sigma11(&self) -> f64 {
        self.data[(0, 0)]
    }

    pub fn sigma12(&self) -> DVector<f64> {
        self.data.view((1, 0), (self.n(), 1)).column(0).into_owned()
    }

    pub fn sigma22(&self) -> DMatrix<f64> {
        let n = self.n();
        self.data.view((1, 1), (n, n)).into_owned()
    }

    /// Mean of `x`, i.e. `σ12 / σ11`.
    pub fn mean(&self) -> DVector<f64> {
        self.sigma12() / self.sigma11()
    }

    /// Covariance of `x`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        self.sigma22() / self.sigma11() - &mu * mu.transpose()
    }
}

/// Affine stochastic state feedback `u = k¹ + K²x + v` with `E v = 0`, `E vvᵀ = Σᵛ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePolicy {
    pub k1: DVector<f64>,
    pub k2: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
}

impl AffinePolicy {
    pub fn new(k1: DVector<f64>, k2: DMatrix<f64>, sigma_v: DMatrix<f64>) -> Result<Self> {
        let m = k1.len();
        if k2.nrows() != m {
            return Err(dim_mismatch("policy K2 rows", m, k2.nrows()));
        }
        linalg::require_shape(&sigma_v, m, m, "policy Σv")?;
        let sigma_v = symmetrize(&sigma_v, "policy Σv");
        Ok(Self { k1, k2, sigma_v })
    }

    /// Deterministic policy from a stacked gain `[k¹ K²]`.
    pub fn from_gain(gain: &DMatrix<f64>) -> Self {
        let m = gain.nrows();
        let n = gain.ncols() - 1;
        Self {
            k1: gain.column(0).into_owned(),
            k2: gain.view((0, 1), (m, n)).into_owned(),
            sigma_v: DMatrix::zeros(m, m),
        }
    }

    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            k1: DVector::zeros(m),
            k2: DMatrix::zeros(m, n),
            sigma_v: DMatrix::zeros(m, m),
        }
    }

    pub fn n(&self) -> usize {
        self.k2.ncols()
    }

    pub fn m(&self) -> usize {
        self.k1.len()
    }

    /// Stacked gain `[k¹ K²]` acting on `(1, x)`.
    pub fn gain(&self) -> DMatrix<f64> {
        let (m, n) = (self.m(), self.n());
        let mut g = DMatrix::zeros(m, 1 + n);
        g.set_column(0, &self.k1);
        g.view_mut((0, 1), (m, n)).copy_from(&self.k2);
        g
    }

    /// Mean input `k¹ + K²x`.
    pub fn mean_input(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k1 + &self.k2 * x
    }

    pub fn excitation_trace(&self) -> f64 {
        self.sigma_v.trace()
    }
}

fn stack_point(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(1 + x.len() + u.len());
    z[0] = 1.0;
    z.rows_mut(1, x.len()).copy_from(x);
    z.rows_mut(1 + x.len(), u.len()).copy_from(u);
    z
}

/// The `(1+n)×(1+n+m)` map `[1 0 0; f A B]` taking `(1,x,u)` to `(1, f+Ax+Bu)`.
pub fn transition_matrix(stage: &SystemStage) -> DMatrix<f64> {
    let (n, m) = (stage.n(), stage.m());
    let mut g = DMatrix::zeros(1 + n, 1 + n + m);
    g[(0, 0)] = 1.0;
    g.view_mut((1, 0), (n, 1)).copy_from(&stage.f);
    g.view_mut((1, 1), (n, n)).copy_from(&stage.a);
    g.view_mut((1, 1 + n), (n, m)).copy_from(&stage.b);
    g
}

/// `blockdiag(0, Σʷ)` in `(1+n)` coordinates.
pub fn padded_noise(stage: &SystemStage) -> DMatrix<f64> {
    let n = stage.n();
    let mut w = DMatrix::zeros(1 + n, 1 + n);
    w.view_mut((1, 1), (n, n)).copy_from(&stage.sigma_w);
    w
}

fn check_stage(sigma: &MomentMatrix, stage: &SystemStage) -> Result<()> {
    if stage.n() != sigma.n() {
        return Err(dim_mismatch(
            "stage state dimension vs Σ22",
            sigma.n(),
            stage.n(),
        ));
    }
    if stage.m() != sigma.m() {
        return Err(dim_mismatch(
            "stage input dimension vs Σ33",
            sigma.m(),
            stage.m(),
        ));
    }
    Ok(())
}

/// `Σ₊ − (G Σ Gᵀ + blockdiag(0, Σʷ))` with `G = [1 0 0; f A B]`.
///
/// Vanishes exactly when `Σ₊` is the `(1,x)` moment one step after `Σ`.
pub fn ftilde_residual(
    sigma: &MomentMatrix,
    sigma_plus: &StateMoment,
    stage: &SystemStage,
) -> Result<DMatrix<f64>> {
    check_stage(sigma, stage)?;
    if sigma_plus.n() != sigma.n() {
        return Err(dim_mismatch(
            "Σ₊ state dimension",
            sigma.n(),
            sigma_plus.n(),
        ));
    }
    let predicted = propagate_moment(sigma, stage)?;
    Ok(sigma_plus.matrix() - predicted.matrix())
}

/// The `(1,x)` moment after one step of `x₊ = f + Ax + Bu + w`.
pub fn propagate_moment(sigma: &MomentMatrix, stage: &SystemStage) -> Result<StateMoment> {
    check_stage(sigma, stage)?;
    let g = transition_matrix(stage);
    let next = &g * sigma.matrix() * g.transpose() + padded_noise(stage);
    StateMoment::new(next)
}

/// `E zᵀ M z = trace(Σ M)`.
pub fn quad_expectation(sigma: &MomentMatrix, form: &QuadraticForm) -> Result<f64> {
    let d = sigma.dim();
    if form.dim() != d {
        return Err(dim_mismatch(
            "quadratic form",
            shape(d, d),
            shape(form.dim(), form.dim()),
        ));
    }
    Ok(frob_dot(sigma.matrix(), form.matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FormSense;
    use approx::assert_relative_eq;

    fn scalar_stage(f: f64, a: f64, b: f64, w: f64) -> SystemStage {
        SystemStage::new(
            DVector::from_element(1, f),
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, w),
        )
        .unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn residual_zero_system() {
        let stage = scalar_stage(0.0, 0.0, 0.0, 0.0);
        let sigma = MomentMatrix::new(diag(&[1.0, 0.0, 0.0]), 1, 1).unwrap();
        let plus = StateMoment::new(diag(&[1.0, 0.0])).unwrap();
        let r = ftilde_residual(&sigma, &plus, &stage).unwrap();
        assert_eq!(r, DMatrix::zeros(2, 2));
    }

    #[test]
    fn residual_identity_copies_state() {
        let stage = scalar_stage(0.0, 1.0, 0.0, 0.0);
        let sigma = MomentMatrix::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, 0.4, 0.1, 0.4, 5.0]),
            1,
            1,
        )
        .unwrap();
        let r = ftilde_residual(&sigma, &sigma.state_moment(), &stage).unwrap();
        assert_eq!(r, DMatrix::zeros(2, 2));
    }

    #[test]
    fn residual_hand_expansion() {
        // 0.25·1 + 1·1 + 0.2 = 1.45
        let stage = scalar_stage(0.0, 0.5, 1.0, 0.2);
        let sigma = MomentMatrix::new(DMatrix::identity(3, 3), 1, 1).unwrap();
        let plus = StateMoment::new(diag(&[1.0, 1.45])).unwrap();
        let r = ftilde_residual(&sigma, &plus, &stage).unwrap();
        assert!(r.norm() < 1e-15);
        let p = propagate_moment(&sigma, &stage).unwrap();
        assert_relative_eq!(p.matrix(), &diag(&[1.0, 1.45]), epsilon = 1e-15);
    }

    #[test]
    fn constant_dynamics_give_dirac() {
        let target = 3.5;
        let stage = scalar_stage(target, 0.0, 0.0, 0.0);
        let sigma = MomentMatrix::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.5, -0.2, 0.5, 2.0, 0.1, -0.2, 0.1, 1.0]),
            1,
            1,
        )
        .unwrap();
        let p = propagate_moment(&sigma, &stage).unwrap();
        let dirac = StateMoment::dirac(&DVector::from_element(1, target));
        assert_relative_eq!(p.matrix(), dirac.matrix(), epsilon = 1e-14);
    }

    #[test]
    fn deterministic_propagation() {
        let f = DVector::from_vec(vec![1.0, -1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.1]);
        let b = DMatrix::from_row_slice(2, 1, &[0.3, 0.7]);
        let stage = SystemStage::new(f.clone(), a.clone(), b, DMatrix::zeros(2, 2)).unwrap();
        let xbar = DVector::from_vec(vec![2.0, 0.5]);
        let sigma = MomentMatrix::dirac(&xbar, &DVector::zeros(1));
        let p = propagate_moment(&sigma, &stage).unwrap();
        let expected = StateMoment::dirac(&(f + a * xbar));
        assert_relative_eq!(p.matrix(), expected.matrix(), epsilon = 1e-13);
    }

    #[test]
    fn quad_expectation_examples() {
        let sigma = MomentMatrix::new(DMatrix::identity(3, 3), 1, 1).unwrap();
        let form = QuadraticForm::new(DMatrix::identity(3, 3), FormSense::Cost).unwrap();
        assert_eq!(quad_expectation(&sigma, &form).unwrap(), 3.0);

        let sigma = MomentMatrix::new(diag(&[1.0, 4.0, 0.0]), 1, 1).unwrap();
        let form = QuadraticForm::new(diag(&[0.0, 1.0, 0.0]), FormSense::Cost).unwrap();
        assert_eq!(quad_expectation(&sigma, &form).unwrap(), 4.0);

        let xbar = DVector::from_vec(vec![10.0, 0.0]);
        let sigma = MomentMatrix::dirac(&xbar, &DVector::zeros(2));
        let form = QuadraticForm::new(diag(&[0.0, 1.0, 1.0, 0.0, 0.0]), FormSense::Cost).unwrap();
        assert_relative_eq!(quad_expectation(&sigma, &form).unwrap(), 100.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let stage = scalar_stage(0.0, 1.0, 1.0, 0.0);
        let sigma = MomentMatrix::zeros(2, 1);
        let err = propagate_moment(&sigma, &stage).unwrap_err();
        assert!(err.to_string().contains("state dimension"));
    }

    #[test]
    fn realize_matches_policy_blocks() {
        let state =
            StateMoment::from_blocks(1.0, &DVector::from_element(1, 0.0), &diag(&[2.0])).unwrap();
        let policy = AffinePolicy::new(
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let sigma = MomentMatrix::realize(&state, &policy).unwrap();
        assert_relative_eq!(sigma.sigma32()[(0, 0)], 1.0);
        assert_relative_eq!(sigma.sigma33()[(0, 0)], 1.0);
    }
}
