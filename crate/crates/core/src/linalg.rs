//! Small dense helpers shared by the analysis modules.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin SVD with singular values in non-increasing order.
///
/// Backed by faer: nalgebra's bidiagonal QR was seen to stop early on
/// rank-deficient inputs and return inaccurate factors.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok((DMatrix::zeros(r, 0), DVector::zeros(0), DMatrix::zeros(c, 0)));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("SVD of a non-finite matrix".into()));
    }
    let fm = to_faer(m);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    Ok((
        DMatrix::from_fn(r, k, |i, j| u[(i, order[j])]),
        DVector::from_fn(k, |i, _| s[order[i]]),
        DMatrix::from_fn(c, k, |i, j| v[(i, order[j])]),
    ))
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Ascending eigenvalues of a symmetric matrix.
pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    to_faer(m)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Numeric(format!("symmetric eigensolve failed: {e:?}")))
}

/// Symmetric eigendecomposition `m = Q diag(λ) Qᵀ`, eigenvalues ascending.
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let evd = to_faer(m)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numeric(format!("symmetric eigensolve failed: {e:?}")))?;
    let (s, u) = (evd.S().column_vector(), evd.U());
    Ok((DVector::from_fn(n, |i, _| s[i]), DMatrix::from_fn(n, n, |i, j| u[(i, j)])))
}

/// Eigenvalues of a general real square matrix.
pub(crate) fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("eigenvalues of a non-finite matrix".into()));
    }
    to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::Numeric(format!("eigensolve failed: {e:?}")))
}

/// Orthonormal basis of the orthogonal complement of the (orthonormal) columns of `q`.
pub(crate) fn orthonormal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let want = n - q.ncols();
    let mut cols: Vec<DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    let mut out = Vec::with_capacity(want);
    for i in 0..n {
        if out.len() == want {
            break;
        }
        let mut v = DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            v /= norm;
            cols.push(v.clone());
            out.push(v);
        }
    }
    DMatrix::from_columns(&out)
}

/// Cosines of the principal angles between two column-orthonormal bases (ascending).
pub fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let m = a.tr_mul(b);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(f64::total_cmp);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_completes_an_orthonormal_basis() {
        let q = DMatrix::from_column_slice(3, 1, &[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0]);
        let c = orthonormal_complement(&q);
        assert_eq!(c.ncols(), 2);
        let full = DMatrix::from_columns(&[q.column(0), c.column(0), c.column(1)]);
        let gram = full.tr_mul(&full);
        assert!((gram - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn svd_is_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 3.0]);
        let (_, s, _) = sorted_svd(&m).unwrap();
        assert_eq!(s.as_slice(), &[3.0, 0.5]);
    }
}
