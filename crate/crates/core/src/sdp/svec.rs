use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, shape, Result};

/// Column-major lower-triangle stacking with off-diagonals scaled by √2, so
/// that `svec(A)·svec(B) = trace(AB)` for symmetric `A`, `B`.
pub fn svec(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() {
        return Err(dim_mismatch(
            "svec input",
            "square",
            shape(m.nrows(), m.ncols()),
        ));
    }
    let d = m.nrows();
    let mut out = DVector::zeros(d * (d + 1) / 2);
    let mut k = 0;
    for j in 0..d {
        out[k] = m[(j, j)];
        k += 1;
        for i in (j + 1)..d {
            out[k] = std::f64::consts::SQRT_2 * m[(i, j)];
            k += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let len = v.len();
    let d = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if d * (d + 1) / 2 != len {
        return Err(dim_mismatch("smat input length", "triangular number", len));
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        m[(j, j)] = v[k];
        k += 1;
        for i in (j + 1)..d {
            let x = v[k] / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity() {
        let v = svec(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn off_diagonal_scaling() {
        let v = svec(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(v.as_slice(), &[0.0, std::f64::consts::SQRT_2, 0.0]);
    }

    #[test]
    fn rejects_non_square() {
        assert!(svec(&DMatrix::zeros(2, 3)).is_err());
        assert!(smat(&DVector::zeros(4)).is_err());
    }

    fn sym(d: usize, vals: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_column_slice(d, d, &vals[..d * d]);
        (&m + m.transpose()) * 0.5
    }

    proptest! {
        #[test]
        fn dot_is_trace(d in 1usize..6, vals in prop::collection::vec(-10.0f64..10.0, 72)) {
            let a = sym(d, &vals[..36]);
            let b = sym(d, &vals[36..]);
            let lhs = svec(&a).unwrap().dot(&svec(&b).unwrap());
            let rhs = (&a * &b).trace();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + rhs.abs()));
        }

        #[test]
        fn round_trip(d in 1usize..6, vals in prop::collection::vec(-10.0f64..10.0, 36)) {
            let a = sym(d, &vals);
            let back = smat(&svec(&a).unwrap()).unwrap();
            prop_assert!((back - a).amax() <= 1e-14);
        }
    }
}
