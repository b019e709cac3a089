//! Per-molecule matrix representations and their Laplacian spectra.

pub mod cache;
mod eigen;

use serde::{Deserialize, Serialize};

use crate::chemio::Molecule;
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};

pub use eigen::{eig_symmetric, eig_symmetric_with, Spectrum, DEFAULT_MAX_SWEEPS, OFF_DIAGONAL_TOLERANCE};

pub const ANGSTROM_TO_BOHR: f64 = 1.8897259886;
/// Guard added to normalization denominators.
pub const NORMALIZATION_EPS: f64 = 1e-9;
/// Atoms closer than this (Ångström) make the geometry degenerate.
pub const MIN_ATOM_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Frobenius,
    Minmax,
    None,
}

impl Normalization {
    pub fn apply(self, c: &Matrix) -> Matrix {
        match self {
            Normalization::Frobenius => normalize_frobenius(c),
            Normalization::Minmax => normalize_minmax(c),
            Normalization::None => c.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplacianKind {
    /// `D^{-1/2} L D^{-1/2}`
    Symmetric,
    /// `D^{-1} L`
    RandomWalk,
}

/// Bond connectivity as a 0/1 matrix with zero diagonal.
pub fn adjacency_matrix(mol: &Molecule) -> Result<Matrix> {
    let bonds = mol.bonds.as_ref().ok_or_else(|| {
        Error::molecule(&mol.id, "no bonds given; adjacency features need bonds, use a Coulomb variant instead")
    })?;
    let n = mol.atoms.len();
    let mut a = Matrix::zeros(n, n);
    for &(i, j) in bonds {
        if i >= n || j >= n || i == j {
            return Err(Error::molecule(&mol.id, format!("invalid bond ({i}, {j})")));
        }
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    Ok(a)
}

/// Coulomb matrix with distances in Bohr.
///
/// Diagonal `0.5 Z^2.4`, off-diagonal `Z_i Z_j / |R_i - R_j|`. Each pair is
/// computed once so the result is exactly symmetric.
pub fn coulomb_matrix(mol: &Molecule) -> Result<Matrix> {
    let n = mol.atoms.len();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        let zi = mol.atoms[i].atomic_number as f64;
        c[(i, i)] = 0.5 * zi.powf(2.4);
        for j in i + 1..n {
            let zj = mol.atoms[j].atomic_number as f64;
            let (ri, rj) = (mol.atoms[i].position, mol.atoms[j].position);
            let d = norm2(&[ri[0] - rj[0], ri[1] - rj[1], ri[2] - rj[2]]);
            if !(d >= MIN_ATOM_DISTANCE) {
                return Err(Error::molecule(
                    &mol.id,
                    format!("degenerate geometry: atoms {i} and {j} are {d:e} Å apart"),
                ));
            }
            let v = zi * zj / (d * ANGSTROM_TO_BOHR);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

pub fn normalize_frobenius(c: &Matrix) -> Matrix {
    let denom = c.frobenius_norm() + NORMALIZATION_EPS;
    c.map(|x| x / denom)
}

pub fn normalize_minmax(c: &Matrix) -> Matrix {
    let (lo, hi) = c.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if c.as_slice().is_empty() {
        return c.clone();
    }
    let denom = hi - lo + NORMALIZATION_EPS;
    c.map(|x| (x - lo) / denom)
}

/// Full row sums, diagonal entry included.
pub fn degrees(x: &Matrix) -> Vec<f64> {
    (0..x.rows()).map(|i| x.row(i).iter().sum()).collect()
}

pub fn degree_matrix(x: &Matrix) -> Result<Matrix> {
    check_symmetric(x)?;
    Ok(Matrix::from_diag(&degrees(x)))
}

/// `L = D - X`. The diagonal of `X` cancels, so it never affects the result.
pub fn laplacian(x: &Matrix) -> Result<Matrix> {
    check_symmetric(x)?;
    let n = x.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j {
                l[(i, j)] = -x[(i, j)];
                off += x[(i, j)];
            }
        }
        l[(i, i)] = off;
    }
    Ok(l)
}

fn positive_degrees(x: &Matrix) -> Result<Vec<f64>> {
    let d = degrees(x);
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Numeric(format!("node {i} is isolated (degree {})", d[i])));
    }
    Ok(d)
}

/// `D^{-1/2} (D - X) D^{-1/2}`.
pub fn sym_normalized_laplacian(x: &Matrix) -> Result<Matrix> {
    let l = laplacian(x)?;
    let d = positive_degrees(x)?;
    Ok(Matrix::from_fn(l.rows(), l.cols(), |i, j| l[(i, j)] / (d[i] * d[j]).sqrt()))
}

/// Random-walk Laplacian `D^{-1}(D - X)` and its spectrum.
///
/// The spectrum is obtained through the similar symmetric matrix: eigenvalues
/// are shared and eigenvectors are `D^{-1/2} v`, renormalized and sign-fixed.
pub fn asym_normalized_laplacian(x: &Matrix) -> Result<(Matrix, Spectrum)> {
    let l = laplacian(x)?;
    let d = positive_degrees(x)?;
    let l_rw = Matrix::from_fn(l.rows(), l.cols(), |i, j| l[(i, j)] / d[i]);
    let sym = eig_symmetric(&sym_normalized_laplacian(x)?)?;
    let n = d.len();
    let mut vectors = Matrix::from_fn(n, n, |i, k| sym.eigenvectors[(i, k)] / d[i].sqrt());
    for k in 0..n {
        let norm = norm2(&vectors.column(k));
        for i in 0..n {
            vectors[(i, k)] /= norm;
        }
        eigen::fix_sign(&mut vectors, k);
    }
    Ok((l_rw, Spectrum { eigenvalues: sym.eigenvalues, eigenvectors: vectors }))
}

/// Spectrum of the chosen normalized Laplacian of `x`.
pub fn laplacian_spectrum(x: &Matrix, kind: LaplacianKind) -> Result<Spectrum> {
    match kind {
        LaplacianKind::Symmetric => eig_symmetric(&sym_normalized_laplacian(x)?),
        LaplacianKind::RandomWalk => Ok(asym_normalized_laplacian(x)?.1),
    }
}

fn check_symmetric(x: &Matrix) -> Result<()> {
    if !x.is_square() {
        return Err(Error::Shape(format!("expected a square matrix, got {}x{}", x.rows(), x.cols())));
    }
    if x.asymmetry() > 1e-10 * x.max_abs().max(1.0) {
        return Err(Error::Numeric("matrix is not symmetric".into()));
    }
    Ok(())
}

/// Per-atom spectral input: `p` rows of (eigenvalue, eigenvector component).
#[derive(Debug, Clone, PartialEq)]
pub struct LpeInput {
    /// `p x 2`; rows past the molecule size are zero.
    pub rows: Matrix,
    /// `true` for rows that hold an eigenpair, `false` for padding.
    pub mask: Vec<bool>,
}

/// Takes the `p` lowest eigenpairs, trivial eigenvalue included.
pub fn lpe_input(spec: &Spectrum, atom_index: usize, p: usize) -> Result<LpeInput> {
    let n = spec.len();
    if atom_index >= n {
        return Err(Error::Shape(format!("atom index {atom_index} out of range for {n} atoms")));
    }
    let mut rows = Matrix::zeros(p, 2);
    let mut mask = vec![false; p];
    for k in 0..p.min(n) {
        rows[(k, 0)] = spec.eigenvalues[k];
        rows[(k, 1)] = spec.eigenvectors[(atom_index, k)];
        mask[k] = true;
    }
    Ok(LpeInput { rows, mask })
}
