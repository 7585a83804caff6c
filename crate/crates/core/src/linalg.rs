//! Dense linear algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("eigenvalue iteration did not converge for a {dim}x{dim} matrix")]
    NoConvergence { dim: usize },
}

/// Solves `a · x = b` by LU with partial pivoting.
pub fn solve(a: CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    let lu = a.lu();
    lu.solve(b).filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite())).ok_or(LinalgError::Singular)
}

pub fn inverse(a: CMatrix) -> Result<CMatrix, LinalgError> {
    let n = a.nrows();
    solve(a, &CMatrix::identity(n, n))
}

/// Eigen-decomposition of a general complex matrix.
///
/// Returns the eigenvalues and a matrix whose columns are the matching unit
/// eigenvectors. Uses the complex Schur form and back-substitution on the
/// triangular factor.
pub fn eig(a: CMatrix) -> Result<(Vec<Complex64>, CMatrix), LinalgError> {
    let n = a.nrows();
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let schur = nalgebra::linalg::Schur::try_new(a, 1e-15, 100 * n.max(10))
        .ok_or(LinalgError::NoConvergence { dim: n })?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let small = f64::EPSILON * scale;

    let mut y = CMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = values[k];
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                acc += t[(i, j)] * y[(j, k)];
            }
            let mut d = t[(i, i)] - lambda;
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            y[(i, k)] = -acc / d;
        }
        let norm = (0..=k).map(|i| y[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..=k {
            y[(i, k)] /= norm;
        }
    }
    Ok((values, q * y))
}

/// Eigen-decomposition of a real symmetric 3×3 matrix by cyclic Jacobi
/// rotations. Eigenvalues ascend; `vectors[i]` belongs to `values[i]`.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let diag = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2);
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let vectors = order.map(|c| [v[0][c], v[1][c], v[2][c]]);
    (values, vectors)
}

/// Inverse of a 3×3 matrix, `None` when singular.
pub fn inverse3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [c00 * inv, (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv, (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv],
        [c01 * inv, (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv, (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv],
        [c02 * inv, (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv, (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv],
    ])
}
