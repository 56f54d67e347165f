//! Small operator types shared by the lattice models.
//!
//! Lattice Hamiltonians and velocity operators are Hermitian with a real
//! diagonal and a handful of constant off-diagonals, so they are stored in a
//! banded form that supports O(N·bands) matrix-vector products. Dense exports
//! are provided for diagonalization and for tests.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("banded operator is empty")]
    Empty,
    #[error("band offset {offset} out of range for dimension {n}")]
    BandOutOfRange { offset: usize, n: usize },
    #[error("operator entries must be finite")]
    NonFinite,
}

/// Hermitian matrix with a real diagonal and constant super-diagonals.
///
/// `bands` holds pairs `(s, c)` meaning `A[l][l+s] = c` for every valid `l`
/// (and `A[l+s][l] = c*` by Hermiticity). Boundaries are hard walls: entries
/// that would leave the matrix are simply absent.
#[derive(Debug, Clone)]
pub struct BandedHermitian {
    n: usize,
    diag: Vec<f64>,
    bands: Vec<(usize, C64)>,
}

impl BandedHermitian {
    pub fn new(diag: Vec<f64>, bands: Vec<(usize, C64)>) -> Result<Self, OperatorError> {
        let n = diag.len();
        if n == 0 {
            return Err(OperatorError::Empty);
        }
        if diag.iter().any(|x| !x.is_finite())
            || bands.iter().any(|(_, c)| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(OperatorError::NonFinite);
        }
        for &(s, _) in &bands {
            if s == 0 || s >= n {
                return Err(OperatorError::BandOutOfRange { offset: s, n });
            }
        }
        Ok(Self { n, diag, bands })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn bands(&self) -> &[(usize, C64)] {
        &self.bands
    }

    /// True if the only off-diagonal coupling is nearest-neighbor.
    pub fn is_tridiagonal(&self) -> bool {
        self.bands.iter().all(|&(s, _)| s == 1)
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (yi, (&di, xi)) in y.iter_mut().zip(self.diag.iter().zip(x)) {
            *yi = di * xi;
        }
        for &(s, c) in &self.bands {
            let cc = c.conj();
            for l in 0..self.n - s {
                y[l] += c * x[l + s];
                y[l + s] += cc * x[l];
            }
        }
    }

    /// Unnormalized quadratic form `Re ⟨x|A|x⟩` (real for Hermitian `A`).
    pub fn expectation(&self, x: &[C64]) -> f64 {
        let mut acc = 0.0;
        for (&di, xi) in self.diag.iter().zip(x) {
            acc += di * xi.norm_sqr();
        }
        for &(s, c) in &self.bands {
            for l in 0..self.n - s {
                // x_l* c x_{l+s} + x_{l+s}* c* x_l = 2 Re(x_l* c x_{l+s})
                acc += 2.0 * (x[l].conj() * c * x[l + s]).re;
            }
        }
        acc
    }

    /// `‖A x‖²`, i.e. `⟨x|A²|x⟩` for Hermitian `A`.
    pub fn quadratic_norm(&self, x: &[C64], scratch: &mut Vec<C64>) -> f64 {
        scratch.resize(self.n, C64::new(0.0, 0.0));
        self.matvec(x, scratch);
        scratch.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::from_element(self.n, self.n, C64::new(0.0, 0.0));
        for (i, &d) in self.diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        for &(s, c) in &self.bands {
            for l in 0..self.n - s {
                m[(l, l + s)] = c;
                m[(l + s, l)] = c.conj();
            }
        }
        m
    }

    /// Dense real export; `None` if any band has an imaginary part.
    pub fn to_dense_real(&self) -> Option<DMatrix<f64>> {
        if self.bands.iter().any(|(_, c)| c.im != 0.0) {
            return None;
        }
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, &d) in self.diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        for &(s, c) in &self.bands {
            for l in 0..self.n - s {
                m[(l, l + s)] = c.re;
                m[(l + s, l)] = c.re;
            }
        }
        Some(m)
    }
}

/// Diagonal operator with unit-modulus entries.
#[derive(Debug, Clone)]
pub struct DiagonalUnitary {
    entries: Vec<C64>,
}

impl DiagonalUnitary {
    /// Builds from phase angles: entry `l` is `exp(i φ_l)`.
    pub fn from_phases(phases: impl IntoIterator<Item = f64>) -> Self {
        let entries = phases
            .into_iter()
            .map(|p| C64::new(p.cos(), p.sin()))
            .collect();
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    /// `y = L x`.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        for ((yi, li), xi) in y.iter_mut().zip(&self.entries).zip(x) {
            *yi = li * xi;
        }
    }

    /// `x ← L x`.
    pub fn apply_inplace(&self, x: &mut [C64]) {
        for (xi, li) in x.iter_mut().zip(&self.entries) {
            *xi *= li;
        }
    }
}

pub fn norm_sq(x: &[C64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum()
}

pub fn all_finite(x: &[C64]) -> bool {
    x.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matvec_matches_dense() {
        let op = BandedHermitian::new(
            vec![1.0, -2.0, 0.5, 3.0, -1.0],
            vec![(1, C64::new(0.0, -0.7)), (2, C64::new(0.3, 0.1))],
        )
        .unwrap();
        let x: Vec<C64> = (0..5)
            .map(|i| C64::new(0.2 * i as f64 - 0.3, 0.1 * i as f64))
            .collect();
        let mut y = vec![C64::new(0.0, 0.0); 5];
        op.matvec(&x, &mut y);

        let dense = op.to_dense();
        let xv = nalgebra::DVector::from_column_slice(&x);
        let yd = &dense * &xv;
        for i in 0..5 {
            assert_relative_eq!(y[i].re, yd[i].re, epsilon = 1e-14);
            assert_relative_eq!(y[i].im, yd[i].im, epsilon = 1e-14);
        }

        // quadratic forms against the dense route
        let e = op.expectation(&x);
        let ed = xv.map(|c| c.conj()).dot(&yd);
        assert_relative_eq!(e, ed.re, epsilon = 1e-13);
        assert!(ed.im.abs() < 1e-13);
    }

    #[test]
    fn dense_export_is_hermitian() {
        let op = BandedHermitian::new(
            vec![0.0; 4],
            vec![(1, C64::new(-0.5, 0.25)), (3, C64::new(0.0, 1.0))],
        )
        .unwrap();
        let m = op.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let a = m[(i, j)];
                let b = m[(j, i)].conj();
                assert!((a - b).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_bands() {
        assert!(BandedHermitian::new(vec![0.0; 3], vec![(0, C64::new(1.0, 0.0))]).is_err());
        assert!(BandedHermitian::new(vec![0.0; 3], vec![(3, C64::new(1.0, 0.0))]).is_err());
        assert!(BandedHermitian::new(vec![], vec![]).is_err());
    }
}
