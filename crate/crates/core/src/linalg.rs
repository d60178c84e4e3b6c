//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything operates on `nalgebra::DMatrix<f64>`. Symmetric inputs are
//! symmetrized as `(M + M^T) / 2` before any spectral routine so that
//! round-off asymmetry never leaks into eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Standard singular-value cutoff: `max(dim) * eps * sigma_max`.
pub fn pinv_cutoff(max_dim: usize, sigma_max: f64) -> f64 {
    max_dim as f64 * f64::EPSILON * sigma_max
}

/// Moore-Penrose pseudo-inverse together with the cutoff that produced it.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub cutoff: f64,
    pub rank: usize,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues (descending) and matching eigenvectors of `(M + M^T)/2`.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Pseudo-inverse of a symmetric (possibly indefinite) matrix through its
/// eigendecomposition. `max_dim` sets the cutoff scale; pass the dimension
/// of the matrix whose spectrum this block represents.
pub fn pinv_symmetric_scaled(m: &DMatrix<f64>, max_dim: usize) -> PseudoInverse {
    let n = m.nrows();
    if n == 0 {
        return PseudoInverse { matrix: DMatrix::zeros(0, 0), cutoff: 0.0, rank: 0 };
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let sigma_max = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = pinv_cutoff(max_dim.max(n), sigma_max);
    let mut inv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let lambda = eig.eigenvalues[k];
        if lambda.abs() > cutoff && sigma_max > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            inv += (&v * v.transpose()) / lambda;
        }
    }
    PseudoInverse { matrix: symmetrize(&inv), cutoff, rank }
}

pub fn pinv_symmetric(m: &DMatrix<f64>) -> PseudoInverse {
    pinv_symmetric_scaled(m, m.nrows())
}

/// General pseudo-inverse through the SVD.
pub fn pinv(m: &DMatrix<f64>) -> PseudoInverse {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return PseudoInverse { matrix: DMatrix::zeros(c, r), cutoff: 0.0, rank: 0 };
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = pinv_cutoff(r.max(c), sigma_max);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut inv = DMatrix::zeros(c, r);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && sigma_max > 0.0 {
            rank += 1;
            inv += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    PseudoInverse { matrix: inv, cutoff, rank }
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Frobenius norm over off-diagonal entries only.
pub fn frobenius_off(m: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Row-major nested vectors, the layout used by every JSON surface.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != p) {
        return None;
    }
    Some(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}
