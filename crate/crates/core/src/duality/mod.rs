//! Lyapunov certificates for affine closed loops and their moment-matrix form.
//!
//! The homogenized stability inequalities act on `(1, x)`. Because the
//! constant coordinate is invariant, each inequality has a structural null
//! direction: the closed-loop equilibrium `(1, x*)` for the primal form and
//! `e₀` for the dual form. Margins are measured on the complement of that
//! direction, and feasibility additionally requires the direction to be null.

pub mod oracles;
pub mod random;

pub use oracles::{h2_norm_squared, riccati_lqr, RiccatiSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{
    max_eigenvalue, min_eigenvalue, pinv_sym, require_shape, require_square, symmetrize,
};
use crate::model::SystemStage;
use crate::moments::{transition_matrix, MomentMatrix};

/// Relative eigenvalue threshold used for every feasibility decision here.
pub const LMI_TOL: f64 = 1e-9;

const INVERSE_TOL: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e12;

/// Quadratic Lyapunov certificate `V(x) = (1,x)ᵀ P (1,x)` for `u = k¹ + K²x`,
/// together with its dual variables `P̃ = P⁻¹` and `K̃ = [k¹ K²] P̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub p: DMatrix<f64>,
    pub p_tilde: DMatrix<f64>,
    /// `[k¹ K²]`, shape `m × (1+n)`.
    pub gain: DMatrix<f64>,
    /// `gain · P̃`, shape `m × (1+n)`.
    pub gain_tilde: DMatrix<f64>,
}

impl StabilityCertificate {
    pub fn from_primal(p: DMatrix<f64>, gain: DMatrix<f64>) -> Result<Self> {
        let d = require_square(&p, "P")?;
        require_shape(&gain, gain.nrows(), d, "gain [k1 K2]")?;
        let p = symmetrize(&p, "P");
        let p_tilde = invert_spd(&p, "P")?;
        let gain_tilde = &gain * &p_tilde;
        Ok(Self {
            p,
            p_tilde,
            gain,
            gain_tilde,
        })
    }

    pub fn from_dual(p_tilde: DMatrix<f64>, gain_tilde: DMatrix<f64>) -> Result<Self> {
        let d = require_square(&p_tilde, "P̃")?;
        require_shape(&gain_tilde, gain_tilde.nrows(), d, "K̃")?;
        let p_tilde = symmetrize(&p_tilde, "P̃");
        let p = invert_spd(&p_tilde, "P̃")?;
        let gain = &gain_tilde * &p;
        Ok(Self {
            p,
            p_tilde,
            gain,
            gain_tilde,
        })
    }

    /// Reads `P̃` and `K̃` off the `(1,x)` block and the input cross block of `sigma`.
    pub fn from_moments(sigma: &MomentMatrix) -> Result<Self> {
        Self::from_dual(sigma.state_moment().matrix().clone(), sigma.input_cross())
    }

    pub fn n(&self) -> usize {
        self.p.nrows() - 1
    }

    pub fn m(&self) -> usize {
        self.gain.nrows()
    }

    /// `‖P P̃ − I‖_max`.
    pub fn inverse_error(&self) -> f64 {
        let d = self.p.nrows();
        (&self.p * &self.p_tilde - DMatrix::identity(d, d)).amax()
    }

    /// Closed loop `[1 0; fᴷ Aᴷ]` on `(1, x)`.
    pub fn closed_loop(&self, stage: &SystemStage) -> Result<DMatrix<f64>> {
        if stage.n() != self.n() || stage.m() != self.m() {
            return Err(dim_mismatch(
                "stage vs certificate (n, m)",
                format!("({}, {})", self.n(), self.m()),
                format!("({}, {})", stage.n(), stage.m()),
            ));
        }
        let g = transition_matrix(stage);
        let n = self.n();
        let mut lifted = DMatrix::zeros(1 + n + self.m(), 1 + n);
        lifted.view_mut((0, 0), (1 + n, 1 + n)).fill_with_identity();
        lifted
            .view_mut((1 + n, 0), (self.m(), 1 + n))
            .copy_from(&self.gain);
        Ok(g * lifted)
    }
}

fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let lo = min_eigenvalue(m);
    if !(lo > LMI_TOL * m.norm().max(1.0)) {
        return Err(Error::NotPositiveDefinite {
            what: what.into(),
            min_eigenvalue: lo,
        });
    }
    let inv = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(what.into()))?;
    Ok(symmetrize(&inv, what))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiCheck {
    pub feasible: bool,
    /// Positive when the inequality holds strictly off the null direction.
    pub margin: f64,
}

/// Splits `lmi` into the residual along unit vector `z` and the part on `z⊥`.
fn reduce(lmi: &DMatrix<f64>, z: &DVector<f64>) -> (f64, DMatrix<f64>) {
    let d = lmi.nrows();
    let null_residual = (lmi * z).norm();
    // Orthonormal basis of z⊥ from the QR factorization of [z I].
    let mut stacked = DMatrix::zeros(d, d + 1);
    stacked.set_column(0, z);
    stacked.view_mut((0, 1), (d, d)).fill_with_identity();
    let q = stacked.qr().q();
    let basis = q.columns(1, d - 1).into_owned();
    (
        null_residual,
        symmetrize(&(basis.transpose() * lmi * &basis), "reduced LMI"),
    )
}

/// `Gᴷᵀ P Gᴷ − P`, the primal Lyapunov decrease form on `(1, x)`.
pub fn primal_lmi(cert: &StabilityCertificate, stage: &SystemStage) -> Result<DMatrix<f64>> {
    let gk = cert.closed_loop(stage)?;
    Ok(symmetrize(
        &(gk.transpose() * &cert.p * &gk - &cert.p),
        "primal LMI",
    ))
}

/// `P̃ − Gᴷ P̃ Gᴷᵀ`, the dual form on `(1, x)`.
pub fn dual_lmi(cert: &StabilityCertificate, stage: &SystemStage) -> Result<DMatrix<f64>> {
    let gk = cert.closed_loop(stage)?;
    Ok(symmetrize(
        &(&cert.p_tilde - &gk * &cert.p_tilde * gk.transpose()),
        "dual LMI",
    ))
}

/// Checks `Gᴷᵀ P Gᴷ − P ⪯ 0` and `P ≻ 0`.
pub fn check_primal_lmi(cert: &StabilityCertificate, stage: &SystemStage) -> Result<LmiCheck> {
    let lmi = primal_lmi(cert, stage)?;
    let gk = cert.closed_loop(stage)?;
    let n = cert.n();
    let tol = LMI_TOL * lmi.norm().max(cert.p.norm()).max(1.0);
    let p_min = min_eigenvalue(&cert.p);

    // Equilibrium of the closed loop; without one the full form is used.
    let a_k = gk.view((1, 1), (n, n)).into_owned();
    let f_k = gk.view((1, 0), (n, 1)).into_owned();
    let equilibrium = (DMatrix::identity(n, n) - a_k).lu().solve(&f_k);
    let lmi_margin = match equilibrium {
        Some(x) => {
            let mut z = DVector::zeros(1 + n);
            z[0] = 1.0;
            z.rows_mut(1, n).copy_from(&x.column(0));
            let z = z.normalize();
            let (null_residual, reduced) = reduce(&lmi, &z);
            if null_residual > tol {
                -null_residual
            } else {
                -max_eigenvalue(&reduced)
            }
        }
        None => -max_eigenvalue(&lmi),
    };
    Ok(LmiCheck {
        feasible: lmi_margin >= -tol && p_min > tol,
        margin: lmi_margin.min(p_min),
    })
}

/// Checks `P̃ − Gᴷ P̃ Gᴷᵀ ⪰ 0` and `P̃ ≻ 0`.
pub fn check_dual_lmi(cert: &StabilityCertificate, stage: &SystemStage) -> Result<LmiCheck> {
    let lmi = dual_lmi(cert, stage)?;
    let n = cert.n();
    let tol = LMI_TOL * lmi.norm().max(cert.p_tilde.norm()).max(1.0);
    let p_min = min_eigenvalue(&cert.p_tilde);
    let null_residual = lmi.column(0).norm();
    let lmi_margin = if null_residual > tol {
        -null_residual
    } else {
        min_eigenvalue(&lmi.view((1, 1), (n, n)).into_owned())
    };
    Ok(LmiCheck {
        feasible: lmi_margin >= -tol && p_min > tol,
        margin: lmi_margin.min(p_min),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualizationReport {
    pub primal_holds: bool,
    pub dual_holds: bool,
    pub primal_margin: f64,
    pub dual_margin: f64,
}

/// Evaluates both sides of the dualization lemma for `M` partitioned by `W` (`l × k`).
///
/// Primal: `[I; W]ᵀ M [I; W] ⪯ 0` and `[0; I]ᵀ M [0; I] ≻ 0`.
/// Dual: `[Wᵀ; −I]ᵀ M⁻¹ [Wᵀ; −I] ⪰ 0` and `[I; 0]ᵀ M⁻¹ [I; 0] ≺ 0`.
pub fn dualization_check(m: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DualizationReport> {
    let d = require_square(m, "M")?;
    let (l, k) = w.shape();
    if k + l != d {
        return Err(dim_mismatch("W rows + cols vs size of M", d, k + l));
    }
    let m = symmetrize(m, "M");
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "M has condition number {:e}",
            smax / smin
        )));
    }
    let m_inv = symmetrize(
        &m.clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("M".into()))?,
        "M⁻¹",
    );

    let mut outer = DMatrix::zeros(d, k);
    outer.view_mut((0, 0), (k, k)).fill_with_identity();
    outer.view_mut((k, 0), (l, k)).copy_from(w);
    let primal_a = outer.transpose() * &m * &outer;
    let primal_b = m.view((k, k), (l, l)).into_owned();

    let mut dual_outer = DMatrix::zeros(d, l);
    dual_outer
        .view_mut((0, 0), (k, l))
        .copy_from(&w.transpose());
    dual_outer.view_mut((k, 0), (l, l)).fill_with_identity();
    dual_outer.view_mut((k, 0), (l, l)).neg_mut();
    let dual_a = dual_outer.transpose() * &m_inv * &dual_outer;
    let dual_b = m_inv.view((0, 0), (k, k)).into_owned();

    let tol_p = LMI_TOL * m.norm().max(1.0);
    let tol_d = LMI_TOL * m_inv.norm().max(1.0);
    let pa = -max_eigenvalue(&symmetrize(&primal_a, "primal"));
    let pb = min_eigenvalue(&primal_b);
    let da = min_eigenvalue(&symmetrize(&dual_a, "dual"));
    let db = -max_eigenvalue(&dual_b);
    Ok(DualizationReport {
        primal_holds: pa >= -tol_p && pb > tol_p,
        dual_holds: da >= -tol_d && db > tol_d,
        primal_margin: pa.min(pb),
        dual_margin: da.min(db),
    })
}

/// Moment matrix `[[P̃, K̃ᵀ], [K̃, K̃ P̃⁻¹ K̃ᵀ]]` built from dual certificate variables.
pub fn transform_to_moments(cert: &StabilityCertificate) -> Result<MomentMatrix> {
    let (n, m) = (cert.n(), cert.m());
    let lo = min_eigenvalue(&cert.p_tilde);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite {
            what: "P̃".into(),
            min_eigenvalue: lo,
        });
    }
    let d = 1 + n + m;
    let mut sigma = DMatrix::zeros(d, d);
    sigma
        .view_mut((0, 0), (1 + n, 1 + n))
        .copy_from(&cert.p_tilde);
    sigma
        .view_mut((1 + n, 0), (m, 1 + n))
        .copy_from(&cert.gain_tilde);
    sigma
        .view_mut((0, 1 + n), (1 + n, m))
        .copy_from(&cert.gain_tilde.transpose());
    let input = &cert.gain_tilde * &cert.p * cert.gain_tilde.transpose();
    sigma.view_mut((1 + n, 1 + n), (m, m)).copy_from(&input);
    MomentMatrix::new(sigma, n, m)
}

/// Replaces `Σ³³` by `[σ³¹ Σ³²] S⁺ [σ³¹ Σ³²]ᵀ`, landing on the image of [`transform_to_moments`].
pub fn project_sigma33(sigma: &MomentMatrix, tol: f64) -> Result<MomentMatrix> {
    let (n, m) = (sigma.n(), sigma.m());
    let cross = sigma.input_cross();
    let s = sigma.state_moment();
    let projected = &cross * pinv_sym(s.matrix(), tol) * cross.transpose();
    let mut data = sigma.matrix().clone();
    data.view_mut((1 + n, 1 + n), (m, m)).copy_from(&projected);
    MomentMatrix::new(data, n, m)
}

/// `F̃(Σ, Σ, 0) = S − G Σ Gᵀ` ignoring the stage noise.
pub fn stationary_gap(sigma: &MomentMatrix, stage: &SystemStage) -> Result<DMatrix<f64>> {
    if stage.n() != sigma.n() || stage.m() != sigma.m() {
        return Err(dim_mismatch(
            "stage vs Σ dimension",
            sigma.dim(),
            1 + stage.n() + stage.m(),
        ));
    }
    let g = transition_matrix(stage);
    Ok(symmetrize(
        &(sigma.state_moment().matrix() - &g * sigma.matrix() * g.transpose()),
        "F̃(Σ,Σ,0)",
    ))
}

/// True when `P P̃ = I` within the certificate tolerance.
pub fn is_consistent(cert: &StabilityCertificate) -> bool {
    cert.inverse_error() <= INVERSE_TOL
}
