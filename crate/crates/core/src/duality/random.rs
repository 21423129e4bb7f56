//! Seeded random instances for property and acceptance tests.
//!
//! State matrices have Gaussian entries rescaled to a spectral radius drawn
//! uniformly from `[0.3, 0.95)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::StabilityCertificate;
use crate::linalg::{discrete_lyapunov, spectral_radius, symmetrize};
use crate::model::SystemStage;

pub const RADIUS_RANGE: (f64, f64) = (0.3, 0.95);

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Gaussian matrix rescaled to a random spectral radius in [`RADIUS_RANGE`].
pub fn stable_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let target = rng.random_range(RADIUS_RANGE.0..RADIUS_RANGE.1);
    loop {
        let a = gaussian_matrix(rng, n, n);
        let rho = spectral_radius(&a);
        if rho > 1e-6 {
            return a * (target / rho);
        }
    }
}

/// `G Gᵀ / k + floor·I` with `G` Gaussian of size `n × k`.
pub fn spd_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, floor: f64) -> DMatrix<f64> {
    let k = n.max(1);
    let g = gaussian_matrix(rng, n, k);
    symmetrize(
        &(&g * g.transpose() / k as f64 + DMatrix::identity(n, n) * floor),
        "random SPD",
    )
}

/// Stage `(f, A, B, 0)` with a stabilizing affine gain and a strict primal certificate.
///
/// The closed-loop matrix is drawn stable; `A` is then `Aᴷ − B K²`. The
/// certificate is `(x − x*)ᵀ Q (x − x*) + c` with `Q` solving
/// `Aᴷᵀ Q Aᴷ − Q = −S` for a random `S ≻ 0`.
pub fn primal_instance<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
) -> (SystemStage, StabilityCertificate) {
    let a_k = stable_matrix(rng, n);
    let b = gaussian_matrix(rng, n, m);
    let k2 = gaussian_matrix(rng, m, n) * 0.5;
    let k1 = gaussian_vector(rng, m) * 0.5;
    let f = gaussian_vector(rng, n) * 0.5;
    let a = &a_k - &b * &k2;
    let f_k = &f + &b * &k1;
    let equilibrium = (DMatrix::identity(n, n) - &a_k)
        .lu()
        .solve(&f_k)
        .expect("stable closed loop has no unit eigenvalue");

    let decrease = spd_matrix(rng, n, 0.1);
    let q = discrete_lyapunov(&a_k.transpose(), &decrease).expect("stable Lyapunov equation");
    let c = rng.random_range(0.5..2.0);
    let qx = &q * &equilibrium;
    let mut p = DMatrix::zeros(1 + n, 1 + n);
    p[(0, 0)] = c + equilibrium.dot(&qx);
    for i in 0..n {
        p[(0, 1 + i)] = -qx[i];
        p[(1 + i, 0)] = -qx[i];
    }
    p.view_mut((1, 1), (n, n)).copy_from(&q);

    let mut gain = DMatrix::zeros(m, 1 + n);
    gain.set_column(0, &k1);
    gain.view_mut((0, 1), (m, n)).copy_from(&k2);
    let stage = SystemStage::new(f, a, b, DMatrix::zeros(n, n)).expect("valid stage");
    let cert = StabilityCertificate::from_primal(p, gain).expect("positive definite certificate");
    (stage, cert)
}

/// `(M, W)` with `W` of size `l × k` satisfying the primal dualization inequalities strictly.
pub fn dualization_instance<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    l: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let w = gaussian_matrix(rng, l, k);
    let m22 = spd_matrix(rng, l, 0.1);
    let m12 = gaussian_matrix(rng, k, l);
    let slack = spd_matrix(rng, k, 0.1);
    let cross = &m12 * &w;
    let m11 = -(w.transpose() * &m22 * &w) - &cross - cross.transpose() - slack;
    let mut m = DMatrix::zeros(k + l, k + l);
    m.view_mut((0, 0), (k, k)).copy_from(&m11);
    m.view_mut((0, k), (k, l)).copy_from(&m12);
    m.view_mut((k, 0), (l, k)).copy_from(&m12.transpose());
    m.view_mut((k, k), (l, l)).copy_from(&m22);
    (symmetrize(&m, "dualization M"), w)
}
