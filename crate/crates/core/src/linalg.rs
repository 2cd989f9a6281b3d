//! Small dense helpers: sign-fixed QR, subspace angles, intersections and
//! complements of column spans.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Thin QR with a non-negative diagonal in `R`.
pub fn qr_signed(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(q.ncols()) {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis of the column span (assumed full rank).
pub fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    qr_signed(m).0
}

/// `sin` of the largest principal angle between `span(a)` and `span(b)`,
/// i.e. `‖(I - BBᵀ)A‖₂` for orthonormal `A`, `B` with `dim A ≤ dim B`.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (small, big) = if a.ncols() <= b.ncols() { (a, b) } else { (b, a) };
    if small.ncols() == 0 {
        return 0.0;
    }
    let resid = small - big * (big.transpose() * small);
    resid.svd(false, false).singular_values.max()
}

/// Largest principal angle in radians.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    subspace_distance(a, b).min(1.0).asin()
}

/// Orthonormal basis of the orthogonal complement of an orthonormal `a`.
pub fn complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let k = a.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    let proj = DMatrix::identity(n, n) - a * a.transpose();
    let eig = proj.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let cols: Vec<_> = order[..n - k].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    orthonormalize(DMatrix::from_columns(&cols))
}

/// `dim`-dimensional approximate intersection of `span(a)` and `span(b)`
/// (both orthonormal): the directions of `span(a)` closest to `span(b)`.
pub fn intersection(a: &DMatrix<f64>, b: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let n = a.nrows();
    if dim == 0 {
        return DMatrix::zeros(n, 0);
    }
    let resid = a - b * (b.transpose() * a);
    let svd = resid.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut coeffs = DMatrix::zeros(a.ncols(), dim);
    for (c, &i) in order.iter().take(dim).enumerate() {
        coeffs.set_column(c, &v_t.row(i).transpose());
    }
    orthonormalize(a * coeffs)
}

/// Concatenate column blocks.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (b.nrows(), b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| Error::SingularOperator(format!("{what} is not invertible")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_qr_has_positive_diagonal() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 2.0, -2.0, 1.0]);
        let (q, r) = qr_signed(m.clone());
        assert!((0..3).all(|i| r[(i, i)] >= 0.0));
        assert!((&q * &r - m).amax() < 1e-12);
    }

    #[test]
    fn intersection_of_planes() {
        let a = orthonormalize(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let b = orthonormalize(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        let i = intersection(&a, &b, 1);
        assert!((i[(0, 0)].abs() - 1.0).abs() < 1e-12);
        let c = complement(&a);
        assert!((c[(2, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(principal_angle(&a, &a) < 1e-7);
    }
}
