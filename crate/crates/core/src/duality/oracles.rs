//! Classical reference computations: finite-horizon LQR and the H₂ norm.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{discrete_lyapunov, frob_dot, pinv_sym, spectral_radius, symmetrize};
use crate::model::{QuadraticForm, SystemStage};
use crate::moments::{padded_noise, transition_matrix, StateMoment};

/// Backward Riccati recursion on `z = (1, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    /// `[k¹ₜ K²ₜ]` with `uₜ = k¹ₜ + K²ₜ xₜ`, for `t = 0..N−1`.
    pub gains: Vec<DMatrix<f64>>,
    /// Value matrices `Pₜ` on `(1, x)` for `t = 0..N`.
    pub values: Vec<DMatrix<f64>>,
    /// Expected future noise cost from stage `t` on.
    pub offsets: Vec<f64>,
}

impl RiccatiSolution {
    /// Optimal expected cost from the given initial moment.
    pub fn optimal_cost(&self, initial: &StateMoment) -> f64 {
        frob_dot(&self.values[0], initial.matrix()) + self.offsets[0]
    }
}

/// Splits a `(1+n+m)` quadratic form into its state, cross and input blocks and
/// returns the minimized form `Qzz − Qzu Quu⁻¹ Quz` with the minimizing gain.
fn minimize_input(
    q: &DMatrix<f64>,
    state_dim: usize,
    strict: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = q.nrows();
    let m = d - state_dim;
    let qzz = q.view((0, 0), (state_dim, state_dim));
    let quz = q.view((state_dim, 0), (m, state_dim)).into_owned();
    let quu = q.view((state_dim, state_dim), (m, m)).into_owned();
    let gain = if strict {
        let chol = quu
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("input block of the Riccati stage cost".into()))?;
        -chol.solve(&quz)
    } else {
        -pinv_sym(&quu, 1e-12) * &quz
    };
    let value = qzz + quz.transpose() * &gain;
    Ok((symmetrize(&value, "Riccati value"), gain))
}

/// Finite-horizon LQR for `N = stages.len()` steps and `N+1` stage costs.
///
/// Stage costs act on `(1, x, u)`. The input block must be positive definite
/// for `t < N`; at the final stage a singular input block is allowed and the
/// minimum-norm minimizer is used.
pub fn riccati_lqr(
    n: usize,
    stages: &[SystemStage],
    costs: &[QuadraticForm],
) -> Result<RiccatiSolution> {
    let horizon = stages.len();
    if costs.len() != horizon + 1 {
        return Err(dim_mismatch("LQR cost count", horizon + 1, costs.len()));
    }
    let d = costs[0].dim();
    let state_dim = 1 + n;
    if d <= state_dim {
        return Err(dim_mismatch("LQR cost size", format!("> {state_dim}"), d));
    }
    for (t, c) in costs.iter().enumerate() {
        if c.dim() != d {
            return Err(dim_mismatch(format!("LQR cost {t}"), d, c.dim()));
        }
    }
    for (t, s) in stages.iter().enumerate() {
        if s.n() != n || 1 + s.n() + s.m() != d {
            return Err(dim_mismatch(format!("LQR stage {t}"), d, 1 + s.n() + s.m()));
        }
    }

    let (terminal, _) = minimize_input(costs[horizon].matrix(), state_dim, false)?;
    let mut values = vec![terminal];
    let mut offsets = vec![0.0];
    let mut gains = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let next = values.last().expect("nonempty");
        let g = transition_matrix(&stages[t]);
        let q = symmetrize(
            &(costs[t].matrix() + g.transpose() * next * &g),
            "Riccati stage",
        );
        let (value, gain) = minimize_input(&q, state_dim, true)?;
        let offset = offsets.last().expect("nonempty") + frob_dot(next, &padded_noise(&stages[t]));
        values.push(value);
        offsets.push(offset);
        gains.push(gain);
    }
    values.reverse();
    offsets.reverse();
    gains.reverse();
    Ok(RiccatiSolution {
        gains,
        values,
        offsets,
    })
}

/// Squared H₂ norm `trace(C X Cᵀ)` from noise input `B2` to output `C` under `u = K²x`,
/// where `X = Aᴷ X Aᴷᵀ + B2 B2ᵀ`.
pub fn h2_norm_squared(
    stage: &SystemStage,
    c: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    k2: &DMatrix<f64>,
) -> Result<f64> {
    let (n, m) = (stage.n(), stage.m());
    if c.ncols() != n {
        return Err(dim_mismatch("output matrix columns", n, c.ncols()));
    }
    if b2.nrows() != n {
        return Err(dim_mismatch("noise input matrix rows", n, b2.nrows()));
    }
    if k2.shape() != (m, n) {
        return Err(dim_mismatch(
            "gain K2",
            format!("{m}x{n}"),
            format!("{}x{}", k2.nrows(), k2.ncols()),
        ));
    }
    let a_k = &stage.a + &stage.b * k2;
    let rho = spectral_radius(&a_k);
    if !(rho < 1.0) {
        return Err(Error::Unstable {
            spectral_radius: rho,
        });
    }
    let x = discrete_lyapunov(&a_k, &(b2 * b2.transpose()))?;
    Ok((c * x * c.transpose()).trace())
}
