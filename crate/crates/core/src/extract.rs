//! Recovery of affine stochastic policies from moment matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{pinv_sym, symmetrize, PSD_FLOOR};
use crate::model::SystemStage;
use crate::moments::{propagate_moment, AffinePolicy, MomentMatrix, StateMoment};

pub const DEFAULT_EXTRACT_TOL: f64 = 1e-9;
pub const DEFAULT_DET_TOL: f64 = 1e-4;

/// Policy realizing `sigma` at one stage.
///
/// `[k¹ K²]` solves `[σ³¹ Σ³²] = K·S` with `S` the `(1,x)` block, and
/// `Σᵛ = Σ³³ − K [σ³¹ Σ³²]ᵀ`. `S` is first scaled to unit diagonal so that
/// states of very different magnitude are treated alike; eigenvalues of the
/// scaled block below `tol` times its norm are treated as zero. Fails with [`Error::InconsistentMoments`]
/// when the input blocks cannot be reproduced within `10·tol·‖sigma‖`.
pub fn extract_policy(sigma: &MomentMatrix, tol: f64) -> Result<AffinePolicy> {
    let s = sigma.state_moment();
    let cross = sigma.input_cross();
    let diag = s.matrix().diagonal();
    let top = diag.amax();
    let d =
        DMatrix::from_diagonal(&diag.map(|v| if v > 1e-30 * top { 1.0 / v.sqrt() } else { 1.0 }));
    let gain = &cross * &d * pinv_sym(&(&d * s.matrix() * &d), tol) * &d;

    let scale = sigma.matrix().norm();
    let raw = symmetrize(&(sigma.sigma33() - &gain * cross.transpose()), "Σv");
    let sigma_v = clip_negative(raw, scale)?;

    let (n, m) = (sigma.n(), sigma.m());
    let policy = AffinePolicy::new(
        gain.column(0).into_owned(),
        gain.view((0, 1), (m, n)).into_owned(),
        sigma_v,
    )?;

    let rebuilt = MomentMatrix::realize(&s, &policy)?;
    let d = sigma.dim();
    let diff = (rebuilt.matrix().view((1 + n, 0), (m, d))
        - sigma.matrix().view((1 + n, 0), (m, d)))
    .norm();
    let tolerance = 10.0 * tol * scale;
    if diff > tolerance {
        return Err(Error::InconsistentMoments {
            residual: diff,
            tolerance,
        });
    }
    Ok(policy)
}

/// Clips eigenvalues in `[-PSD_FLOOR·scale, 0)` to zero, rejecting anything more negative.
fn clip_negative(m: DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m);
    let lo = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lo < -PSD_FLOOR * scale.max(1.0) {
        return Err(Error::NotPsd {
            what: "extracted Σv".into(),
            min_eigenvalue: lo,
        });
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    Ok(symmetrize(
        &(v * DMatrix::from_diagonal(&clipped) * v.transpose()),
        "Σv",
    ))
}

/// Extracts one policy per moment matrix.
pub fn extract_policies(moments: &[MomentMatrix], tol: f64) -> Result<Vec<AffinePolicy>> {
    moments.iter().map(|s| extract_policy(s, tol)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Deterministic,
    Stochastic,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyKind::Deterministic => "deterministic",
            PolicyKind::Stochastic => "stochastic",
        })
    }
}

/// Deterministic iff every `trace Σᵛₜ ≤ det_tol`.
pub fn classify(policies: &[AffinePolicy], det_tol: f64) -> PolicyKind {
    let worst = max_excitation(policies);
    if worst <= det_tol {
        PolicyKind::Deterministic
    } else {
        PolicyKind::Stochastic
    }
}

pub fn max_excitation(policies: &[AffinePolicy]) -> f64 {
    policies
        .iter()
        .map(AffinePolicy::excitation_trace)
        .fold(0.0, f64::max)
}

/// Exact closed-loop moments `Σ₀ … Σ_{K−1}` for `K` policies.
///
/// `stages` must hold at least `K−1` entries, or exactly one which is reused.
pub fn reconstruct_moments(
    initial: &StateMoment,
    policies: &[AffinePolicy],
    stages: &[SystemStage],
) -> Result<Vec<MomentMatrix>> {
    let needed = policies.len().saturating_sub(1);
    if stages.len() < needed && stages.len() != 1 {
        return Err(dim_mismatch(
            "stage count for reconstruction",
            needed,
            stages.len(),
        ));
    }
    let mut out = Vec::with_capacity(policies.len());
    let mut state = initial.clone();
    for (t, policy) in policies.iter().enumerate() {
        let sigma = MomentMatrix::realize(&state, policy)?;
        if t + 1 < policies.len() {
            let stage = if stages.len() == 1 {
                &stages[0]
            } else {
                &stages[t]
            };
            state = propagate_moment(&sigma, stage)?;
        }
        out.push(sigma);
    }
    Ok(out)
}
