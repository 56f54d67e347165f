//! Bloch band solver for the continuum lattice potential.
//!
//! In scaled units (lengths in inverse wave numbers, energies in recoil
//! units) the force-free Hamiltonian is `H = p² - U cos²(z)`, with lattice
//! period π and reciprocal vectors spaced 2. In the plane-wave basis
//! `e^{i(κ+2n)z}` the potential couples components offset by ±2 with
//! amplitude `-U/4` and shifts the diagonal by `-U/2`, so every quasimomentum
//! κ yields a small real symmetric tridiagonal eigenproblem.
//!
//! The ground band's discrete Fourier cosine coefficients are the hopping
//! energies of the matching few-diagonal lattice model: `ε₀(κ) ≈ mean -
//! Σ_s Δ_s cos(πsκ)`, with `Δ₁` equal to half the band width for a pure
//! cosine band.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BandError {
    #[error("invalid band-solver input: {0}")]
    InvalidInput(String),
    #[error("diagonalization failed to converge at κ index {kappa_index}")]
    NonConvergent { kappa_index: usize },
}

/// Band energies `ε_b(κ)` on a symmetric quasimomentum grid over `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct BandSpectrum {
    pub kappa: Vec<f64>,
    /// `bands[b][i]` is `ε_b(kappa[i])`, bands ordered by energy.
    pub bands: Vec<Vec<f64>>,
}

impl BandSpectrum {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn band(&self, b: usize) -> &[f64] {
        &self.bands[b]
    }

    /// Smallest direct gap between bands `b` and `b+1`.
    pub fn gap(&self, b: usize) -> f64 {
        self.bands[b + 1]
            .iter()
            .zip(&self.bands[b])
            .map(|(hi, lo)| hi - lo)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn bandwidth(&self, b: usize) -> f64 {
        let lo = self.bands[b].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.bands[b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Diagonalizes `p² - U cos²(z)` on the plane-wave components with the given
/// sorted momenta (spacing 2). Returns eigenvalues ascending and the matching
/// eigenvector columns.
pub(crate) fn diagonalize_plane_wave(
    u: f64,
    momenta: &[f64],
) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let n = momenta.len();
    let mut h = DMatrix::zeros(n, n);
    for (i, &k) in momenta.iter().enumerate() {
        h[(i, i)] = k * k - 0.5 * u;
        if i + 1 < n {
            h[(i, i + 1)] = -0.25 * u;
            h[(i + 1, i)] = -0.25 * u;
        }
    }
    let eig = SymmetricEigen::try_new(h, 1e-13, 10_000)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Some((eigenvalues, vectors))
}

/// Computes the lowest `n_bands` Bloch bands of `H = p² - U cos²(z)` on an
/// `n_kappa`-point grid over `[-1, 1]` (endpoints included), using
/// `n_planewaves` reciprocal components per κ.
pub fn band_spectrum(
    u: f64,
    n_bands: usize,
    n_kappa: usize,
    n_planewaves: usize,
) -> Result<BandSpectrum, BandError> {
    if !(u.is_finite() && u >= 0.0) {
        return Err(BandError::InvalidInput("potential depth must be finite and >= 0".into()));
    }
    if n_bands == 0 || n_kappa < 3 {
        return Err(BandError::InvalidInput("need at least one band and three κ points".into()));
    }
    if n_planewaves % 2 == 0 || n_planewaves < 2 * n_bands + 5 {
        return Err(BandError::InvalidInput(format!(
            "n_planewaves must be odd and at least 2·n_bands+5, got {n_planewaves}"
        )));
    }
    let half = (n_planewaves as i64 - 1) / 2;
    let kappa: Vec<f64> = (0..n_kappa)
        .map(|i| -1.0 + 2.0 * i as f64 / (n_kappa as f64 - 1.0))
        .collect();
    let mut bands = vec![vec![0.0; n_kappa]; n_bands];

    #[cfg(feature = "parallel")]
    let columns: Vec<Result<Vec<f64>, BandError>> = {
        use rayon::prelude::*;
        kappa
            .par_iter()
            .enumerate()
            .map(|(i, &k)| solve_column(u, k, half, n_bands, i))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<Result<Vec<f64>, BandError>> = kappa
        .iter()
        .enumerate()
        .map(|(i, &k)| solve_column(u, k, half, n_bands, i))
        .collect();

    for (i, col) in columns.into_iter().enumerate() {
        let col = col?;
        for (b, &e) in col.iter().enumerate() {
            bands[b][i] = e;
        }
    }
    Ok(BandSpectrum { kappa, bands })
}

fn solve_column(
    u: f64,
    kappa: f64,
    half: i64,
    n_bands: usize,
    kappa_index: usize,
) -> Result<Vec<f64>, BandError> {
    let momenta: Vec<f64> = (-half..=half).map(|n| kappa + 2.0 * n as f64).collect();
    let (eigenvalues, _) = diagonalize_plane_wave(u, &momenta)
        .ok_or(BandError::NonConvergent { kappa_index })?;
    Ok(eigenvalues[..n_bands].to_vec())
}

/// Hopping energies extracted from a ground band: `ε₀(κ) ≈ mean -
/// Σ_s deltas[s-1]·cos(πsκ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TbHoppings {
    pub mean: f64,
    pub deltas: Vec<f64>,
}

/// Discrete Fourier cosine transform of the ground band; coefficients are
/// truncated at the first one smaller than 1e-6 of the leading hopping.
pub fn tb_parameters_from_band(spectrum: &BandSpectrum) -> Result<TbHoppings, BandError> {
    if spectrum.bands.is_empty() {
        return Err(BandError::InvalidInput("spectrum carries no bands".into()));
    }
    let band = &spectrum.bands[0];
    let n_grid = spectrum.kappa.len();
    if n_grid < 5 {
        return Err(BandError::InvalidInput("κ grid too coarse for the transform".into()));
    }
    // periodic grid: drop the duplicated κ = +1 endpoint
    let n = n_grid - 1;
    let kappa = &spectrum.kappa[..n];
    let values = &band[..n];

    let mean = values.iter().sum::<f64>() / n as f64;
    let max_s = n / 2;
    let mut deltas = Vec::new();
    let mut leading: Option<f64> = None;
    for s in 1..=max_s {
        let c: f64 = values
            .iter()
            .zip(kappa)
            .map(|(&e, &k)| e * (PI * s as f64 * k).cos())
            .sum::<f64>()
            * 2.0
            / n as f64;
        let delta = -c;
        match leading {
            None => {
                if delta.abs() < 1e-12 {
                    // flat band: no hoppings at all
                    return Ok(TbHoppings { mean, deltas: vec![] });
                }
                leading = Some(delta.abs());
                deltas.push(delta);
            }
            Some(lead) => {
                if delta.abs() < 1e-6 * lead {
                    break;
                }
                deltas.push(delta);
            }
        }
    }
    Ok(TbHoppings { mean, deltas })
}

/// Least-squares fit of `c₀ - Δ cos(πκ)` to the ground band. The residual is
/// relative in the usual norm sense: `‖ε₀ - fit‖₂ / ‖ε₀‖₂`.
#[derive(Debug, Clone, Copy)]
pub struct CosineFit {
    pub offset: f64,
    pub delta: f64,
    pub rel_residual: f64,
}

pub fn fit_cosine(spectrum: &BandSpectrum) -> Result<CosineFit, BandError> {
    if spectrum.bands.is_empty() {
        return Err(BandError::InvalidInput("spectrum carries no bands".into()));
    }
    let band = &spectrum.bands[0];
    let n = spectrum.kappa.len() as f64;
    // normal equations for basis {1, cos(πκ)}
    let (mut s_c, mut s_cc, mut s_e, mut s_ec) = (0.0, 0.0, 0.0, 0.0);
    for (&e, &k) in band.iter().zip(&spectrum.kappa) {
        let c = (PI * k).cos();
        s_c += c;
        s_cc += c * c;
        s_e += e;
        s_ec += e * c;
    }
    let det = n * s_cc - s_c * s_c;
    if det.abs() < 1e-12 {
        return Err(BandError::InvalidInput("degenerate cosine fit".into()));
    }
    let offset = (s_e * s_cc - s_ec * s_c) / det;
    let amp = (n * s_ec - s_e * s_c) / det;
    let mut ss = 0.0;
    for (&e, &k) in band.iter().zip(&spectrum.kappa) {
        let r = e - (offset + amp * (PI * k).cos());
        ss += r * r;
    }
    let width = band.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - band.iter().copied().fold(f64::INFINITY, f64::min);
    let rel_residual = if width > 0.0 {
        (ss / n).sqrt() / width
    } else {
        (ss / n).sqrt()
    };
    Ok(CosineFit { offset, delta: -amp, rel_residual })
}
