//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_mismatch, shape, Error, Result};

/// Asymmetry above this level is reported when a matrix is symmetrized on ingestion.
pub const ASYMMETRY_WARN: f64 = 1e-9;

/// Relative eigenvalue floor used by PSD checks.
pub const PSD_FLOOR: f64 = 1e-9;

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Returns `(m + mᵀ)/2`, logging a warning when the input was noticeably asymmetric.
pub fn symmetrize(m: &DMatrix<f64>, what: &str) -> DMatrix<f64> {
    let asym = asymmetry(m);
    if asym > ASYMMETRY_WARN {
        log::warn!("{what}: symmetrizing input with asymmetry {asym:e}");
    }
    let mut s = m.clone();
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

pub fn require_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(dim_mismatch(what, "square", shape(m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

pub fn require_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(dim_mismatch(
            what,
            shape(rows, cols),
            shape(m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn require_len(v: &DVector<f64>, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(dim_mismatch(what, len, v.len()));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// PSD test with the relative floor `-PSD_FLOOR * ‖m‖`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let ev = sym_eigenvalues(m);
    let scale = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    ev.first().is_none_or(|&lo| lo >= -PSD_FLOOR * scale)
}

pub fn require_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if is_psd(m) {
        Ok(())
    } else {
        Err(Error::NotPsd {
            what: what.to_string(),
            min_eigenvalue: min_eigenvalue(m),
        })
    }
}

/// Factor `L` with `L Lᵀ = m`, clipping negative eigenvalues to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Moore-Penrose inverse of a symmetric matrix, dropping eigenvalues below
/// `rel_cutoff * max |λ|`.
pub fn pinv_sym(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let d = m.nrows();
    if d == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = rel_cutoff * scale;
    let inv = eig.eigenvalues.map(|v| {
        if v.abs() > cutoff && v != 0.0 {
            1.0 / v
        } else {
            0.0
        }
    });
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&inv) * v.transpose()
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Solves `X = A X Aᵀ + Q` through the vectorized system `(I - A⊗A) vec X = vec Q`.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = require_square(a, "lyapunov A")?;
    require_shape(q, n, n, "lyapunov Q")?;
    let kron = a.kronecker(a);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("I - A⊗A in discrete Lyapunov equation".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x, "lyapunov solution"))
}

/// Frobenius inner product `trace(Aᵀ B)`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        let s = symmetrize(&m, "test");
        assert_eq!(s[(0, 1)], 3.0);
        assert_eq!(s[(1, 0)], 3.0);
        assert_eq!(asymmetry(&s), 0.0);
    }

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let m = &v * v.transpose();
        let p = pinv_sym(&m, 1e-12);
        let back = &m * &p * &m;
        assert_relative_eq!(back, m, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_scalar_geometric_series() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = discrete_lyapunov(&a, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn psd_floor_is_relative() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1e6, -1e-5]));
        assert!(is_psd(&m));
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-5]));
        assert!(!is_psd(&m));
    }
}
