//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm, relative to the input norm, at which sweeps stop.
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;
const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix.
///
/// Eigenvalues ascend; column `k` of `eigenvectors` belongs to eigenvalue `k`
/// and has unit norm with its largest-magnitude entry non-negative (the first
/// such entry when magnitudes tie).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }
}

pub fn eig_symmetric(l: &Matrix) -> Result<Spectrum> {
    eig_symmetric_with(l, DEFAULT_MAX_SWEEPS)
}

pub fn eig_symmetric_with(l: &Matrix, max_sweeps: usize) -> Result<Spectrum> {
    if !l.is_square() {
        return Err(Error::Shape(format!("eigensolver needs a square matrix, got {}x{}", l.rows(), l.cols())));
    }
    if !l.is_finite() {
        return Err(Error::Numeric("eigensolver input has non-finite entries".into()));
    }
    let n = l.rows();
    let scale = l.frobenius_norm();
    if l.asymmetry() > SYMMETRY_TOLERANCE * scale.max(1.0) {
        return Err(Error::Numeric(format!("matrix is not symmetric (max |a_ij - a_ji| = {:e})", l.asymmetry())));
    }
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (l[(i, j)] + l[(j, i)]));
    let mut v = Matrix::identity(n);
    let target = OFF_DIAGONAL_TOLERANCE * scale;

    let mut converged = off_diagonal_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == max_sweeps {
            return Err(Error::Numeric(format!("Jacobi eigensolver did not converge in {max_sweeps} sweeps")));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        converged = off_diagonal_norm(&a) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::from_fn(n, n, |r, k| v[(r, order[k])]);
    for k in 0..n {
        fix_sign(&mut eigenvectors, k);
    }
    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// Flips column `k` so its largest-magnitude entry is non-negative.
pub(crate) fn fix_sign(vectors: &mut Matrix, k: usize) {
    let n = vectors.rows();
    let mut lead = 0;
    for r in 1..n {
        if vectors[(r, k)].abs() > vectors[(lead, k)].abs() {
            lead = r;
        }
    }
    if n > 0 && vectors[(lead, k)] < 0.0 {
        for r in 0..n {
            vectors[(r, k)] = -vectors[(r, k)];
        }
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Applies the rotation annihilating `a[p][q]`: `a ← Jᵀ a J`, `v ← v J`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if tau >= 0.0 { 1.0 / (tau + (1.0 + tau * tau).sqrt()) } else { -1.0 / (-tau + (1.0 + tau * tau).sqrt()) };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
