//! Single-band lattice model on a Wannier basis.
//!
//! The lattice Hamiltonian couples neighboring wells with hopping energies
//! `Δ_s` and tilts the lattice with a constant force:
//!
//! ```text
//! H[l][l±s] = -Δ_s/2,     H[l][l] = d·F·l
//! ```
//!
//! A spontaneously emitted photon kicks the atom through the diagonal recoil
//! operator `L_u[l][l] = (-1)^l exp(iπul)` with transverse projection
//! `u ∈ [-1, 1]`; every `L_u` is unitary, so `L†L = 1` identically in this
//! model. Velocity and position operators are
//! `v[l][m] = (dΔ/2ħ)(iδ_{l,m+1} - iδ_{l,m-1})` (and the obvious few-diagonal
//! generalization) and `z[l][m] = d·l·δ_{l,m}`.
//!
//! Scaled units `ħ = 1`; the Bloch frequency `ω_B = d·F/ħ` is always derived
//! from the stored parameters, never stored by itself.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::operators::{BandedHermitian, DiagonalUnitary};

/// Reduced Planck constant in the scaled units used throughout.
pub const HBAR: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TbError {
    #[error("invalid tight-binding parameters: {0}")]
    InvalidParams(String),
    #[error("recoil projection must satisfy |u| <= 1, got {0}")]
    RecoilProjection(f64),
    #[error("zero force: the position reference amplitude Δ/F is undefined")]
    ZeroForce,
}

/// Parameters of the tilted single-band lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TBParams {
    /// Hopping energies `Δ_s` for s-th-neighbor coupling; `hoppings[0]` is the
    /// nearest-neighbor `Δ`.
    pub hoppings: Vec<f64>,
    /// Lattice period.
    pub d: f64,
    /// Static force.
    pub force: f64,
    /// Spontaneous emission rate γ̃.
    pub gamma: f64,
    /// Number of lattice sites.
    pub n_sites: usize,
    /// Site label of the first amplitude; labels run `origin..origin+n_sites`.
    pub origin: i64,
}

impl TBParams {
    /// Nearest-neighbor lattice with the default period `d = π`, centered
    /// around site 0.
    pub fn new(delta: f64, force: f64, gamma: f64, n_sites: usize) -> Result<Self, TbError> {
        Self::with_hoppings(vec![delta], PI, force, gamma, n_sites)
    }

    pub fn with_hoppings(
        hoppings: Vec<f64>,
        d: f64,
        force: f64,
        gamma: f64,
        n_sites: usize,
    ) -> Result<Self, TbError> {
        let origin = -((n_sites as i64 - 1) / 2);
        let p = Self { hoppings, d, force, gamma, n_sites, origin };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TbError> {
        if self.n_sites < 3 {
            return Err(TbError::InvalidParams(format!(
                "need at least 3 sites, got {}",
                self.n_sites
            )));
        }
        if self.hoppings.is_empty() {
            return Err(TbError::InvalidParams("no hopping coefficients".into()));
        }
        if self.hoppings.len() >= self.n_sites {
            return Err(TbError::InvalidParams(format!(
                "{} hopping ranges do not fit {} sites",
                self.hoppings.len(),
                self.n_sites
            )));
        }
        if !self.hoppings.iter().all(|x| x.is_finite())
            || !self.d.is_finite()
            || !self.force.is_finite()
            || !self.gamma.is_finite()
        {
            return Err(TbError::InvalidParams("non-finite parameter".into()));
        }
        if self.d <= 0.0 {
            return Err(TbError::InvalidParams("lattice period must be positive".into()));
        }
        if self.gamma < 0.0 {
            return Err(TbError::InvalidParams("emission rate must be nonnegative".into()));
        }
        Ok(())
    }

    /// Nearest-neighbor hopping `Δ`.
    pub fn delta(&self) -> f64 {
        self.hoppings[0]
    }

    /// Bloch frequency `ω_B = d·F/ħ` (signed).
    pub fn omega_b(&self) -> f64 {
        self.d * self.force / HBAR
    }

    /// Bloch period `2π/|ω_B|`.
    pub fn bloch_period(&self) -> Result<f64, TbError> {
        if self.force == 0.0 {
            return Err(TbError::ZeroForce);
        }
        Ok(2.0 * PI / self.omega_b().abs())
    }

    /// Full width `2 Σ_s |Δ_s|` of the band dispersion.
    pub fn bandwidth(&self) -> f64 {
        2.0 * self.hoppings.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Peak coherent velocity `v₀ = dΔ/ħ`.
    pub fn v0(&self) -> f64 {
        self.d * self.delta() / HBAR
    }

    pub fn site_label(&self, index: usize) -> i64 {
        self.origin + index as i64
    }
}

/// Complex amplitudes over Wannier sites. The norm is finite but not pinned
/// to 1: the linear unraveling lets it drift per trajectory.
#[derive(Debug, Clone)]
pub struct LatticeState {
    pub amps: Vec<C64>,
    pub origin: i64,
}

impl LatticeState {
    /// Gaussian wave packet `ψ_l ∝ exp(-(l-center)²/(2σ²))`, normalized.
    pub fn gaussian(n_sites: usize, origin: i64, sigma: f64, center: f64) -> Self {
        let mut amps: Vec<C64> = (0..n_sites)
            .map(|i| {
                let l = (origin + i as i64) as f64 - center;
                C64::new((-l * l / (2.0 * sigma * sigma)).exp(), 0.0)
            })
            .collect();
        let norm = amps.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        Self { amps, origin }
    }

    /// Gaussian packet with a Bloch-wave carrier `exp(i d κ l)`.
    pub fn bloch_gaussian(n_sites: usize, origin: i64, sigma: f64, d: f64, kappa: f64) -> Self {
        let mut s = Self::gaussian(n_sites, origin, sigma, 0.0);
        for (i, a) in s.amps.iter_mut().enumerate() {
            let l = (origin + i as i64) as f64;
            let ph = d * kappa * l;
            *a *= C64::new(ph.cos(), ph.sin());
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        crate::operators::norm_sq(&self.amps)
    }

    /// Fraction of the total population living in the outer `margin` sites on
    /// either edge.
    pub fn edge_fraction(&self, margin: usize) -> f64 {
        let n = self.amps.len();
        let m = margin.min(n / 2);
        let edge: f64 = self.amps[..m]
            .iter()
            .chain(self.amps[n - m..].iter())
            .map(|c| c.norm_sqr())
            .sum();
        let total = self.norm_sq();
        if total > 0.0 {
            edge / total
        } else {
            0.0
        }
    }
}

/// Few-diagonal lattice Hamiltonian `H[l][l±s] = -Δ_s/2, H[l][l] = d·F·l`.
pub fn build_tb_hamiltonian(params: &TBParams) -> Result<BandedHermitian, TbError> {
    params.validate()?;
    let diag: Vec<f64> = (0..params.n_sites)
        .map(|i| params.d * params.force * params.site_label(i) as f64)
        .collect();
    let bands: Vec<(usize, C64)> = params
        .hoppings
        .iter()
        .enumerate()
        .map(|(k, &delta_s)| (k + 1, C64::new(-delta_s / 2.0, 0.0)))
        .collect();
    BandedHermitian::new(diag, bands)
        .map_err(|e| TbError::InvalidParams(e.to_string()))
}

/// Diagonal recoil operator `L_u[l][l] = (-1)^l exp(iπul)`; unitary for every
/// `u`, so `L†L` is the identity.
pub fn recoil_operator_tb(u: f64, n_sites: usize, origin: i64) -> Result<DiagonalUnitary, TbError> {
    if !(u.is_finite() && u.abs() <= 1.0) {
        return Err(TbError::RecoilProjection(u));
    }
    Ok(DiagonalUnitary::from_phases((0..n_sites).map(|i| {
        let l = (origin + i as i64) as f64;
        PI * (u + 1.0) * l
    })))
}

/// Velocity operator `v[l][m] = (d/2ħ) Σ_s s·Δ_s (iδ_{l,m+s} - iδ_{l,m-s})`.
///
/// A Bloch wave with quasimomentum κ is an eigenvector with eigenvalue
/// `Σ_s (d·s·Δ_s/ħ) sin(s·d·κ)`, the group velocity of the band.
pub fn velocity_operator_tb(params: &TBParams) -> Result<BandedHermitian, TbError> {
    params.validate()?;
    let diag = vec![0.0; params.n_sites];
    let bands: Vec<(usize, C64)> = params
        .hoppings
        .iter()
        .enumerate()
        .map(|(k, &delta_s)| {
            let s = k + 1;
            (s, C64::new(0.0, -params.d * s as f64 * delta_s / (2.0 * HBAR)))
        })
        .collect();
    BandedHermitian::new(diag, bands)
        .map_err(|e| TbError::InvalidParams(e.to_string()))
}

/// Position operator diagonal `z_l = d·l`.
pub fn position_operator_tb(params: &TBParams) -> Vec<f64> {
    (0..params.n_sites)
        .map(|i| params.d * params.site_label(i) as f64)
        .collect()
}

/// Coherent (noise-free) oscillation reference:
/// `⟨v(t)⟩ = (dΔ/ħ) sin(ω_B t)`, `⟨z(t)⟩ = (Δ/F) cos(ω_B t)`.
///
/// The position component needs `F ≠ 0`; at zero force the motion is
/// ballistic, not oscillatory.
pub fn coherent_bloch_reference(params: &TBParams, t: f64) -> Result<(f64, f64), TbError> {
    params.validate()?;
    if params.force == 0.0 {
        return Err(TbError::ZeroForce);
    }
    let wb = params.omega_b();
    let v = params.v0() * (wb * t).sin();
    let z = params.delta() / params.force * (wb * t).cos();
    Ok((v, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    #[test]
    fn hamiltonian_three_sites_hopping_only() {
        let p = TBParams::new(1.0, 0.0, 0.0, 3).unwrap();
        let h = build_tb_hamiltonian(&p).unwrap().to_dense();
        let expect = [
            [0.0, -0.5, 0.0],
            [-0.5, 0.0, -0.5],
            [0.0, -0.5, 0.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(h[(i, j)].re, expect[i][j], epsilon = 1e-15);
                assert_eq!(h[(i, j)].im, 0.0);
            }
        }
    }

    #[test]
    fn hamiltonian_three_sites_force_only() {
        let p = TBParams::new(0.0, 0.1, 0.0, 3).unwrap();
        assert_eq!(p.origin, -1);
        let h = build_tb_hamiltonian(&p).unwrap();
        let d = h.diag();
        assert_relative_eq!(d[0], -0.1 * PI, epsilon = 1e-15);
        assert_relative_eq!(d[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(d[2], 0.1 * PI, epsilon = 1e-15);
    }

    #[test]
    fn flat_band_spectrum_matches_cosine_dispersion() {
        // Hard-wall tridiagonal Toeplitz eigenvalues are known in closed form:
        // ε_j = -Δ cos(jπ/(N+1)); the sorted dense spectrum must reproduce the
        // band dispersion ε(κ) = -Δ cos(dκ) on that κ grid.
        let n = 201;
        let p = TBParams::new(1.0, 0.0, 0.0, n).unwrap();
        let h = build_tb_hamiltonian(&p).unwrap().to_dense_real().unwrap();
        let eig = SymmetricEigen::new(h);
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (j, &e) in ev.iter().enumerate() {
            let kappa_d = (j + 1) as f64 * PI / (n as f64 + 1.0);
            let expect = -1.0 * kappa_d.cos();
            assert_relative_eq!(e, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn recoil_alternating_identity_and_pointwise() {
        let l0 = recoil_operator_tb(0.0, 5, -2).unwrap();
        // (-1)^l for l = -2..2
        let signs = [1.0, -1.0, 1.0, -1.0, 1.0];
        for (e, s) in l0.entries().iter().zip(signs) {
            assert_relative_eq!(e.re, s, epsilon = 1e-12);
            assert!(e.im.abs() < 1e-12);
        }

        let l1 = recoil_operator_tb(1.0, 7, -3).unwrap();
        for e in l1.entries() {
            assert_relative_eq!(e.re, 1.0, epsilon = 1e-12);
            assert!(e.im.abs() < 1e-12);
        }

        // u = 0.5 at site l = 2: (-1)² e^{iπ} = -1
        let lh = recoil_operator_tb(0.5, 5, 0).unwrap();
        let e = lh.entries()[2];
        assert_relative_eq!(e.re, -1.0, epsilon = 1e-12);
        assert!(e.im.abs() < 1e-12);
    }

    #[test]
    fn recoil_rejects_large_projection() {
        assert!(recoil_operator_tb(1.0 + 1e-12, 5, 0).is_err());
        assert!(recoil_operator_tb(-1.5, 5, 0).is_err());
        assert!(recoil_operator_tb(f64::NAN, 5, 0).is_err());
    }

    #[test]
    fn velocity_expectation_on_bloch_packet() {
        // Broad Gaussian with carrier κ: ⟨v⟩ → (dΔ/ħ) sin(dκ) up to O(1/σ²).
        let n = 601;
        let p = TBParams::new(1.0, 0.0, 0.0, n).unwrap();
        let v = velocity_operator_tb(&p).unwrap();
        for kappa in [0.15, -0.4, 0.31] {
            let st = LatticeState::bloch_gaussian(n, p.origin, 40.0, p.d, kappa);
            let got = v.expectation(&st.amps);
            let expect = p.v0() * (p.d * kappa).sin();
            assert_relative_eq!(got, expect, epsilon = 2e-3 * p.v0());
        }
        // κ = 0 uniform-phase packet: ⟨v⟩ = 0 by symmetry
        let st = LatticeState::gaussian(n, p.origin, 40.0, 0.0);
        assert!(v.expectation(&st.amps).abs() < 1e-12);
    }

    #[test]
    fn velocity_vanishes_without_hopping() {
        let p = TBParams::new(0.0, 0.1, 0.0, 9).unwrap();
        let v = velocity_operator_tb(&p).unwrap();
        let st = LatticeState::bloch_gaussian(9, p.origin, 2.0, p.d, 0.3);
        assert_eq!(v.expectation(&st.amps), 0.0);
        assert!(v.bands().iter().all(|(_, c)| c.norm() == 0.0));
    }

    #[test]
    fn coherent_reference_values() {
        let p = TBParams::new(1.0, 0.1, 0.0, 11).unwrap();
        let (v0t, z0t) = coherent_bloch_reference(&p, 0.0).unwrap();
        assert_relative_eq!(v0t, 0.0, epsilon = 1e-15);
        assert_relative_eq!(z0t, 10.0, epsilon = 1e-12);

        // quarter period: |v| = v₀ = dΔ/ħ = π
        let wb = p.omega_b();
        let (vq, _) = coherent_bloch_reference(&p, 0.5 * PI / wb).unwrap();
        assert_relative_eq!(vq.abs(), PI, epsilon = 1e-12);

        // full period returns to the t = 0 values
        let tb = p.bloch_period().unwrap();
        let (vp, zp) = coherent_bloch_reference(&p, tb).unwrap();
        assert_relative_eq!(vp, v0t, epsilon = 1e-9);
        assert_relative_eq!(zp, z0t, epsilon = 1e-9);

        let p0 = TBParams::new(1.0, 0.0, 0.0, 11).unwrap();
        assert!(coherent_bloch_reference(&p0, 1.0).is_err());
    }

    #[test]
    fn rejects_small_or_bad_lattices() {
        assert!(TBParams::new(1.0, 0.1, 0.05, 2).is_err());
        assert!(TBParams::new(f64::NAN, 0.1, 0.05, 8).is_err());
        assert!(TBParams::new(1.0, 0.1, -0.05, 8).is_err());
    }

    proptest! {
        #[test]
        fn recoil_is_unitary(u in -1.0f64..=1.0, n in 3usize..40) {
            let l = recoil_operator_tb(u, n, -(n as i64 / 2)).unwrap();
            for e in l.entries() {
                prop_assert!((e.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn operators_are_hermitian(
            delta in -2.0f64..2.0,
            delta2 in -0.5f64..0.5,
            force in -0.5f64..0.5,
            n in 4usize..24,
        ) {
            let p = TBParams::with_hoppings(vec![delta, delta2], PI, force, 0.0, n).unwrap();
            for op in [build_tb_hamiltonian(&p).unwrap(), velocity_operator_tb(&p).unwrap()] {
                let m = op.to_dense();
                for i in 0..n {
                    for j in 0..n {
                        prop_assert!((m[(i, j)] - m[(j, i)].conj()).norm() < 1e-14);
                    }
                }
            }
        }
    }
}
