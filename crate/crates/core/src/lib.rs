//! Dynamics of cold atoms in tilted optical lattices subject to photon-recoil noise.
//!
//! The crate implements two complementary models of the same physical system —
//! an atom in a one-dimensional optical lattice pulled by a constant force and
//! randomly kicked by spontaneously emitted photons — together with the
//! statistical machinery needed to extract decay rates, diffusion coefficients
//! and band-depletion constants from simulated data:
//!
//! * [`tightbinding`] — single-band lattice model on a Wannier basis:
//!   few-diagonal Hamiltonians, the diagonal recoil operator, velocity and
//!   position operators, and the coherent oscillation reference formulas.
//! * [`sde`] — linear stochastic wave-function unraveling of the master
//!   equation: one-step integrators, seeded trajectory ensembles and
//!   deterministic ensemble reduction into observable time series.
//! * [`lindblad`] — exact density-matrix evolution of the single-band master
//!   equation; serves as the oracle for the stochastic engine.
//! * [`bands`] — plane-wave Bloch band solver for the continuum lattice
//!   potential and the Fourier extraction of tight-binding hoppings.
//! * [`continuum`] — full continuum model on a spatial grid: split-operator
//!   propagation, recoil kicks, absorbing boundaries, windowed observables.
//! * [`analysis`] — classical recoil-kick ensemble and the decay / diffusion /
//!   depletion fitters.
//!
//! Scaled units are used throughout: `ħ = 1`, lattice period `d = π` (lengths
//! in inverse laser wave numbers), energies in recoil units for the continuum
//! model. The Bloch frequency is always derived as `ω_B = d·F/ħ`.
//!
//! Trajectory ensembles are data-parallel. With the default `parallel` feature
//! the ensemble driver fans trajectories out over a rayon pool; results are
//! reduced in a fixed order so that output is bit-identical for any thread
//! count, and identical to the always-available sequential path.

pub mod analysis;
pub mod bands;
pub mod continuum;
pub mod lindblad;
pub mod operators;
pub mod sde;
pub mod tightbinding;

pub use num_complex::Complex64 as C64;
