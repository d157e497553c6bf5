//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// ascending order (eigenvectors permuted to match).
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Frobenius norm of `a - b`.
pub fn frobenius_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((a - b).norm())
}

/// Ordinary least squares `argmin_v |X v - t|^2` via the pseudo-inverse of
/// the normal equations, so rank-deficient designs still return a
/// minimizer.
pub fn least_squares(x: &DMatrix<f64>, t: &DVector<f64>) -> DVector<f64> {
    let gram = x.transpose() * x;
    let rhs = x.transpose() * t;
    solve_normal(&gram, &rhs)
}

/// Minimum-norm solution of `gram * beta = rhs` through the pseudo-inverse.
pub fn solve_normal(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let (vals, vecs) = sym_eigen_sorted(gram);
    let cutoff = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs())) * 1e-12;
    let mut out = DVector::zeros(gram.ncols());
    for (k, &lam) in vals.iter().enumerate() {
        if lam > cutoff {
            let u = vecs.column(k);
            out += u * (u.dot(&rhs) / lam);
        }
    }
    out
}
