//! Exact single-band master-equation evolution.
//!
//! Averaging the recoil noise over the transverse photon projection with
//! `P(u) = 1/2` turns the lattice dissipator into a pure dephasing term in the
//! Wannier basis (`∫ du e^{iπu(n-m)}/2 = δ_{nm}` for integer site
//! separations), so the density matrix obeys
//!
//! ```text
//! dρ/dt = -(i/ħ)[H, ρ] - γ̃ · offdiag(ρ)
//! ```
//!
//! with the same few-diagonal lattice Hamiltonian used by the stochastic
//! engine. Every off-diagonal element decays at the rate γ̃, which drives the
//! density matrix diagonal in the Wannier basis; the surviving nearest
//! off-diagonals follow the diagonal populations quasi-statically, and the
//! populations obey a discrete diffusion equation whose coefficient is
//! [`diffusion_coefficient`].
//!
//! The integrator is a classical explicit 4th-order scheme on the full
//! matrix. Dense storage puts an O(N²) memory contract on the caller; sizes
//! are capped at N = 512. The commutator route of the right-hand side is
//! unit-tested against the elementwise stencil
//!
//! ```text
//! dρ[n][m]/dt = (iΔ/2ħ) Σ± (ρ[n±1][m] - ρ[n][m±1])
//!               - iω_B(n-m)ρ[n][m] - γ̃(1-δ_nm)ρ[n][m]
//! ```
//!
//! (row/column convention `ρ[n][m] = ⟨n|ρ|m⟩`).

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::operators::BandedHermitian;
use crate::sde::Observation;
use crate::tightbinding::{
    build_tb_hamiltonian, position_operator_tb, velocity_operator_tb, LatticeState, TBParams,
    HBAR,
};

/// Dense-storage cap: N² complex entries per matrix, five live buffers.
pub const MAX_SITES: usize = 512;

const TRACE_TOL: f64 = 1e-8;
const HERMITICITY_TOL: f64 = 1e-8;
const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LindbladError {
    #[error("invalid master-equation input: {0}")]
    InvalidInput(String),
    #[error("trace drifted by {drift:.3e} at t = {t}")]
    TraceDrift { t: f64, drift: f64 },
    #[error("hermiticity defect {defect:.3e} at t = {t}")]
    HermiticityLoss { t: f64, defect: f64 },
    #[error("density matrix lost positivity (λ_min < -1e-8) at t = {t}")]
    PositivityLoss { t: f64 },
}

/// Hermitian density matrix over lattice sites, row-major, `ρ[n][m] = ⟨n|ρ|m⟩`.
#[derive(Debug, Clone)]
pub struct SingleBandDensityMatrix {
    pub data: Vec<C64>,
    pub n: usize,
    pub origin: i64,
    pub t: f64,
}

impl SingleBandDensityMatrix {
    pub fn from_pure(state: &LatticeState) -> Self {
        let n = state.amps.len();
        let norm_sq = state.norm_sq();
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = state.amps[i] * state.amps[j].conj() / norm_sq;
            }
        }
        Self { data, n, origin: state.origin, t: 0.0 }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).re).sum()
    }

    /// Largest elementwise deviation from `ρ = ρ†`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            worst = worst.max(self.get(i, i).im.abs());
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Positive semidefiniteness within `tol`: checks that `ρ + tol·1` admits
    /// a Cholesky factorization (equivalent to λ_min ≥ -tol).
    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        let mut m = nalgebra::DMatrix::from_element(self.n, self.n, C64::new(0.0, 0.0));
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self.get(i, j);
            }
        }
        for i in 0..self.n {
            m[(i, i)] += C64::new(tol, 0.0);
        }
        nalgebra::Cholesky::new(m).is_some()
    }

    /// `Re Tr(Aρ)` for a banded Hermitian observable.
    pub fn expectation(&self, op: &BandedHermitian) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for (i, &d) in op.diag().iter().enumerate() {
            acc += d * self.get(i, i).re;
        }
        for &(s, c) in op.bands() {
            for l in 0..n - s {
                // A[l][l+s] ρ[l+s][l] + A[l+s][l] ρ[l][l+s] = 2 Re(c ρ[l+s][l])
                acc += 2.0 * (c * self.get(l + s, l)).re;
            }
        }
        acc
    }

    /// `Re Tr(A²ρ)` via the product `A(Aρ)`.
    pub fn expectation_squared(&self, op: &BandedHermitian) -> f64 {
        let n = self.n;
        let mut b = vec![C64::new(0.0, 0.0); n * n];
        banded_times_dense(op, &self.data, n, &mut b);
        let mut acc = C64::new(0.0, 0.0);
        // Tr(A·B) where B = Aρ
        for (l, &d) in op.diag().iter().enumerate() {
            acc += d * b[l * n + l];
        }
        for &(s, c) in op.bands() {
            for l in 0..n - s {
                acc += c * b[(l + s) * n + l];
                acc += c.conj() * b[l * n + l + s];
            }
        }
        acc.re
    }

    pub fn diag_populations(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i).re).collect()
    }

    /// Mass per diagonal offset: `profile[k] = Σ_n |ρ[n][n+k]|`.
    pub fn offdiagonal_mass_profile(&self) -> Vec<f64> {
        (0..self.n)
            .map(|k| (0..self.n - k).map(|n| self.get(n, n + k).norm()).sum())
            .collect()
    }

    /// Plot-ready text dump: a `#`-prefixed header carrying `n`, `origin` and
    /// `t`, then N lines of 2N columns (`re im` pairs, row-major).
    pub fn write_dump<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# density-matrix n={} origin={} t={}", self.n, self.origin, self.t)?;
        for i in 0..self.n {
            let mut line = String::new();
            for j in 0..self.n {
                let e = self.get(i, j);
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{} {}", e.re, e.im));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// `out = A · ρ` for banded Hermitian `A` and dense row-major `ρ`.
fn banded_times_dense(a: &BandedHermitian, rho: &[C64], n: usize, out: &mut [C64]) {
    for (i, &d) in a.diag().iter().enumerate() {
        for j in 0..n {
            out[i * n + j] = d * rho[i * n + j];
        }
    }
    for &(s, c) in a.bands() {
        let cc = c.conj();
        for i in 0..n - s {
            for j in 0..n {
                out[i * n + j] += c * rho[(i + s) * n + j];
                out[(i + s) * n + j] += cc * rho[i * n + j];
            }
        }
    }
}

/// `dρ/dt = -(i/ħ)(Hρ - (Hρ)†) - γ̃·offdiag(ρ)`, using `ρH = (Hρ)†` for
/// Hermitian `ρ`.
fn master_rhs(
    h: &BandedHermitian,
    gamma: f64,
    rho: &[C64],
    n: usize,
    scratch: &mut [C64],
    out: &mut [C64],
) {
    banded_times_dense(h, rho, n, scratch);
    let minus_i_over_hbar = C64::new(0.0, -1.0 / HBAR);
    for i in 0..n {
        for j in 0..n {
            let commutator = scratch[i * n + j] - scratch[j * n + i].conj();
            let mut d = minus_i_over_hbar * commutator;
            if i != j {
                d -= gamma * rho[i * n + j];
            }
            out[i * n + j] = d;
        }
    }
}

/// Evolution options: fixed step `dt` (same guard scales as the stochastic
/// engine), total time, observable cadence, and the times at which full
/// density-matrix snapshots are kept.
#[derive(Debug, Clone)]
pub struct MasterEqOptions {
    pub dt: f64,
    pub t_total: f64,
    pub record_stride: usize,
    pub snapshot_times: Vec<f64>,
}

/// Observable series of a deterministic master-equation run; `trace` is the
/// monitored Tr ρ (identically the survival probability for this model).
#[derive(Debug, Clone)]
pub struct LindbladSeries {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub z2: Vec<f64>,
    pub disp: Vec<f64>,
    pub v2: Vec<f64>,
    pub trace: Vec<f64>,
}

impl LindbladSeries {
    /// Packs the record at index `i` in the engine's observation layout.
    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            norm: self.trace[i],
            survival: self.trace[i],
            v: self.v[i],
            z: self.z[i],
            z2: self.z2[i],
            v2: self.v2[i],
        }
    }
}

pub struct MasterEqResult {
    pub series: LindbladSeries,
    pub snapshots: Vec<SingleBandDensityMatrix>,
}

/// Integrates the single-band master equation with a classical 4th-order
/// scheme and returns observable series plus the requested snapshots.
///
/// Aborts if the trace drifts by more than 1e-8, the Hermiticity defect
/// exceeds 1e-8, or (checked at record times) the smallest eigenvalue falls
/// below -1e-8.
pub fn evolve_master_equation(
    rho0: &SingleBandDensityMatrix,
    params: &TBParams,
    opts: &MasterEqOptions,
) -> Result<MasterEqResult, LindbladError> {
    params
        .validate()
        .map_err(|e| LindbladError::InvalidInput(e.to_string()))?;
    let n = params.n_sites;
    if n > MAX_SITES {
        return Err(LindbladError::InvalidInput(format!(
            "{n} sites exceed the dense-storage cap of {MAX_SITES}"
        )));
    }
    if rho0.n != n || rho0.origin != params.origin {
        return Err(LindbladError::InvalidInput(
            "density matrix does not match the lattice geometry".into(),
        ));
    }
    if (rho0.trace() - 1.0).abs() > 1e-10 {
        return Err(LindbladError::InvalidInput(format!(
            "initial trace {} is not 1",
            rho0.trace()
        )));
    }
    if rho0.hermiticity_defect() > HERMITICITY_TOL {
        return Err(LindbladError::InvalidInput("initial matrix is not Hermitian".into()));
    }
    if !rho0.is_positive_semidefinite(POSITIVITY_TOL) {
        return Err(LindbladError::InvalidInput(
            "initial matrix is not positive semidefinite".into(),
        ));
    }
    if !(opts.dt > 0.0) || opts.record_stride == 0 || !(opts.t_total >= opts.dt) {
        return Err(LindbladError::InvalidInput("bad evolution options".into()));
    }
    let max_rate = params
        .omega_b()
        .abs()
        .max(params.gamma)
        .max(params.bandwidth() / HBAR);
    if opts.dt * max_rate > crate::sde::DT_GUARD * (1.0 + 1e-12) {
        return Err(LindbladError::InvalidInput(format!(
            "dt = {} exceeds the step-size guard for this model",
            opts.dt
        )));
    }

    let h = build_tb_hamiltonian(params).map_err(|e| LindbladError::InvalidInput(e.to_string()))?;
    let v_op =
        velocity_operator_tb(params).map_err(|e| LindbladError::InvalidInput(e.to_string()))?;
    let z_diag = position_operator_tb(params);

    let n_steps = (opts.t_total / opts.dt).round().max(1.0) as usize;
    let mut snapshot_steps: Vec<usize> = opts
        .snapshot_times
        .iter()
        .map(|&t| ((t / opts.dt).round() as usize).min(n_steps))
        .collect();
    snapshot_steps.sort_unstable();
    snapshot_steps.dedup();

    let mut rho = rho0.data.clone();
    let nn = n * n;
    let mut k1 = vec![C64::new(0.0, 0.0); nn];
    let mut k2 = vec![C64::new(0.0, 0.0); nn];
    let mut k3 = vec![C64::new(0.0, 0.0); nn];
    let mut k4 = vec![C64::new(0.0, 0.0); nn];
    let mut tmp = vec![C64::new(0.0, 0.0); nn];
    let mut scratch = vec![C64::new(0.0, 0.0); nn];

    let mut series = LindbladSeries {
        times: Vec::new(),
        v: Vec::new(),
        z: Vec::new(),
        z2: Vec::new(),
        disp: Vec::new(),
        v2: Vec::new(),
        trace: Vec::new(),
    };
    let mut snapshots: Vec<SingleBandDensityMatrix> = Vec::new();

    let mut record = |step: usize,
                      rho: &[C64],
                      series: &mut LindbladSeries,
                      snapshots: &mut Vec<SingleBandDensityMatrix>|
     -> Result<(), LindbladError> {
        let t = step as f64 * opts.dt;
        let snap = SingleBandDensityMatrix { data: rho.to_vec(), n, origin: params.origin, t };
        let tr = snap.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(LindbladError::TraceDrift { t, drift: (tr - 1.0).abs() });
        }
        let defect = snap.hermiticity_defect();
        if defect > HERMITICITY_TOL {
            return Err(LindbladError::HermiticityLoss { t, defect });
        }
        if !snap.is_positive_semidefinite(POSITIVITY_TOL) {
            return Err(LindbladError::PositivityLoss { t });
        }
        let v = snap.expectation(&v_op);
        let mut z = 0.0;
        let mut z2 = 0.0;
        for (i, &zi) in z_diag.iter().enumerate() {
            let pop = snap.get(i, i).re;
            z += zi * pop;
            z2 += zi * zi * pop;
        }
        let v2 = snap.expectation_squared(&v_op);
        series.times.push(t);
        series.v.push(v);
        series.z.push(z);
        series.z2.push(z2);
        series.disp.push(z2 - z * z);
        series.v2.push(v2);
        series.trace.push(tr);
        if snapshot_steps.binary_search(&step).is_ok() {
            snapshots.push(snap);
        }
        Ok(())
    };

    record(0, &rho, &mut series, &mut snapshots)?;
    for step in 0..n_steps {
        let dt = opts.dt;
        master_rhs(&h, params.gamma, &rho, n, &mut scratch, &mut k1);
        for i in 0..nn {
            tmp[i] = rho[i] + 0.5 * dt * k1[i];
        }
        master_rhs(&h, params.gamma, &tmp, n, &mut scratch, &mut k2);
        for i in 0..nn {
            tmp[i] = rho[i] + 0.5 * dt * k2[i];
        }
        master_rhs(&h, params.gamma, &tmp, n, &mut scratch, &mut k3);
        for i in 0..nn {
            tmp[i] = rho[i] + dt * k3[i];
        }
        master_rhs(&h, params.gamma, &tmp, n, &mut scratch, &mut k4);
        for i in 0..nn {
            rho[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let step_done = step + 1;
        if step_done % opts.record_stride == 0
            || step_done == n_steps
            || snapshot_steps.binary_search(&step_done).is_ok()
        {
            record(step_done, &rho, &mut series, &mut snapshots)?;
        }
    }

    Ok(MasterEqResult { series, snapshots })
}

/// Quasi-static estimate of the stationary nearest off-diagonals from the
/// neighboring populations:
///
/// ```text
/// (iΔ/2ħ)(ρ[n+1][n+1] - ρ[n][n]) / (iω_B + γ̃)
/// ```
///
/// In the `ρ[n][m] = ⟨n|ρ|m⟩` convention of [`evolve_master_equation`], the
/// evolved element `⟨n+1|ρ|n⟩` relaxes to *minus* this value (and
/// `⟨n|ρ|n+1⟩` to its negated conjugate); magnitudes are orientation-free.
pub fn stationary_offdiagonal_estimate(
    rho_next_diag: f64,
    rho_diag: f64,
    params: &TBParams,
) -> C64 {
    let num = C64::new(0.0, params.delta() / (2.0 * HBAR)) * (rho_next_diag - rho_diag);
    let den = C64::new(params.gamma, params.omega_b());
    num / den
}

/// Diffusion coefficient of the recoil-heated lattice gas,
/// `D = 2 v_st² γ̃ / (ω_B² + γ̃²)`.
pub fn diffusion_coefficient(v_st_sq: f64, gamma: f64, omega_b: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    2.0 * v_st_sq * gamma / (omega_b * omega_b + gamma * gamma)
}

/// Stationary mean squared velocity `v₀²/2 = (dΔ/ħ)²/2`.
pub fn stationary_v_squared(params: &TBParams) -> f64 {
    let v0 = params.v0();
    0.5 * v0 * v0
}

/// Population hopping rate of the diagonal-sector rate equation,
/// `w = (Δ/2ħ)² · 2γ̃/(ω_B² + γ̃²)`; the diffusion coefficient is `D = 2d²w`.
pub fn hopping_rate(delta: f64, gamma: f64, omega_b: f64) -> f64 {
    let a = delta / (2.0 * HBAR);
    a * a * 2.0 * gamma / (omega_b * omega_b + gamma * gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn random_hermitian(n: usize, seed: u64) -> Vec<C64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            m[i * n + i] = C64::new(rng.gen_range(0.0..1.0), 0.0);
            for j in i + 1..n {
                let c = C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                m[i * n + j] = c;
                m[j * n + i] = c.conj();
            }
        }
        m
    }

    #[test]
    fn rhs_matches_elementwise_stencil() {
        let p = TBParams::new(0.8, -0.3, 0.17, 6).unwrap();
        let h = build_tb_hamiltonian(&p).unwrap();
        let n = p.n_sites;
        let rho = random_hermitian(n, 5);
        let mut scratch = vec![C64::new(0.0, 0.0); n * n];
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        master_rhs(&h, p.gamma, &rho, n, &mut scratch, &mut out);

        let wb = p.omega_b();
        let get = |i: i64, j: i64| -> C64 {
            if i < 0 || j < 0 || i >= n as i64 || j >= n as i64 {
                C64::new(0.0, 0.0)
            } else {
                rho[i as usize * n + j as usize]
            }
        };
        let i_half_delta = C64::new(0.0, p.delta() / (2.0 * HBAR));
        for i in 0..n as i64 {
            for j in 0..n as i64 {
                let hopping = i_half_delta
                    * (get(i + 1, j) + get(i - 1, j) - get(i, j + 1) - get(i, j - 1));
                let stark = C64::new(0.0, -wb * (i - j) as f64) * get(i, j);
                let dephasing = if i == j {
                    C64::new(0.0, 0.0)
                } else {
                    -p.gamma * get(i, j)
                };
                let expect = hopping + stark + dephasing;
                let got = out[i as usize * n + j as usize];
                assert!(
                    (got - expect).norm() < 1e-13,
                    "rhs mismatch at ({i},{j}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn diagonal_matrix_is_stationary_without_hopping() {
        let p = TBParams::new(0.0, 0.2, 0.3, 5).unwrap();
        // strictly diagonal ρ0 built from Gaussian populations
        let state = LatticeState::gaussian(5, p.origin, 1.0, 0.0);
        let mut rho0 = SingleBandDensityMatrix::from_pure(&state);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    rho0.data[i * 5 + j] = C64::new(0.0, 0.0);
                }
            }
        }
        let opts = MasterEqOptions {
            dt: 0.02,
            t_total: 2.0,
            record_stride: 50,
            snapshot_times: vec![2.0],
        };
        let out = evolve_master_equation(&rho0, &p, &opts).unwrap();
        let end = &out.snapshots[0];
        for i in 0..5 {
            for j in 0..5 {
                let d = (end.get(i, j) - rho0.get(i, j)).norm();
                assert!(d < 1e-12, "element ({i},{j}) moved by {d}");
            }
        }
    }

    #[test]
    fn lone_coherence_decays_at_gamma_and_rotates_at_omega_b() {
        // Δ = 0, pure two-site superposition: the (n,m) coherence obeys
        // ρ(t) = ρ(0) e^{-iω_B(n-m)t - γ̃t} in closed form.
        let p = TBParams::new(0.0, 0.25, 0.4, 5).unwrap();
        let mut amps = vec![C64::new(0.0, 0.0); 5];
        amps[1] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[3] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let state = LatticeState { amps, origin: p.origin };
        let rho0 = SingleBandDensityMatrix::from_pure(&state);
        let t_end = 3.0;
        let opts = MasterEqOptions {
            dt: 0.02,
            t_total: t_end,
            record_stride: 50,
            snapshot_times: vec![t_end],
        };
        let out = evolve_master_equation(&rho0, &p, &opts).unwrap();
        let end = &out.snapshots[0];

        let wb = p.omega_b();
        let phase = -wb * (1.0 - 3.0) * t_end; // element (n=1, m=3)
        let expect = rho0.get(1, 3) * C64::from_polar((-p.gamma * t_end).exp(), phase);
        let got = end.get(1, 3);
        assert!((got - expect).norm() < 1e-6, "coherence {got} vs {expect}");
        assert_relative_eq!(end.get(1, 1).re, 0.5, epsilon = 1e-10);
        assert_relative_eq!(end.get(3, 3).re, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn trace_and_hermiticity_hold_under_evolution() {
        let p = TBParams::new(1.0, -0.1, 0.05, 41).unwrap();
        let state = LatticeState::gaussian(41, p.origin, 3.0, 0.0);
        let rho0 = SingleBandDensityMatrix::from_pure(&state);
        let opts = MasterEqOptions {
            dt: 0.02,
            t_total: 10.0,
            record_stride: 100,
            snapshot_times: vec![10.0],
        };
        let out = evolve_master_equation(&rho0, &p, &opts).unwrap();
        for &tr in &out.series.trace {
            assert!((tr - 1.0).abs() < 1e-10);
        }
        assert!(out.snapshots[0].hermiticity_defect() < 1e-12);
    }

    #[test]
    fn stationary_estimate_frozen_value() {
        // Δρ = 0.1, Δ = 1, ħ = 1, ω_B = 0.1π, γ̃ = 0.05. Independent route:
        // (ΔΔρ/2ħ)(ω_B + iγ̃)/(ω_B² + γ̃²).
        let p = TBParams::new(1.0, 0.1, 0.05, 5).unwrap();
        let wb = p.omega_b();
        assert_relative_eq!(wb, 0.1 * PI, epsilon = 1e-15);
        let est = stationary_offdiagonal_estimate(0.1, 0.0, &p);
        let denom = wb * wb + 0.05 * 0.05;
        let oracle_re = 0.5 * 0.1 * wb / denom;
        let oracle_im = 0.5 * 0.1 * 0.05 / denom;
        assert_relative_eq!(est.re, oracle_re, epsilon = 1e-14);
        assert_relative_eq!(est.im, oracle_im, epsilon = 1e-14);
        // frozen digits from the direct evaluation
        assert_relative_eq!(est.re, 0.15522309613464763, epsilon = 1e-12);
        assert_relative_eq!(est.im, 0.024704523031857648, epsilon = 1e-12);
        // equal neighbor populations → 0
        let zero = stationary_offdiagonal_estimate(0.3, 0.3, &p);
        assert_eq!(zero, C64::new(0.0, 0.0));
    }

    #[test]
    fn diffusion_coefficient_values() {
        assert_eq!(diffusion_coefficient(1.0, 0.0, 0.3), 0.0);
        // ω_B = 0 limit: 2 v_st²/γ̃
        assert_relative_eq!(diffusion_coefficient(2.0, 0.5, 0.0), 8.0, epsilon = 1e-14);
        // Δ=1, d=π, ħ=1 → v_st² = π²/2; γ̃ = 0.05, ω_B = 0.1π
        let p = TBParams::new(1.0, 0.1, 0.05, 5).unwrap();
        let v_st2 = stationary_v_squared(&p);
        assert_relative_eq!(v_st2, PI * PI / 2.0, epsilon = 1e-14);
        let d = diffusion_coefficient(v_st2, p.gamma, p.omega_b());
        assert_relative_eq!(d, 4.876477384840712, epsilon = 1e-12);
        // rate-equation route: D = 2 d² w
        let w = hopping_rate(p.delta(), p.gamma, p.omega_b());
        assert_relative_eq!(d, 2.0 * p.d * p.d * w, epsilon = 1e-13);
    }

    #[test]
    fn offdiagonal_profile_examples() {
        // pure Wannier state
        let mut amps = vec![C64::new(0.0, 0.0); 4];
        amps[2] = C64::new(1.0, 0.0);
        let rho = SingleBandDensityMatrix::from_pure(&LatticeState { amps, origin: -1 });
        let profile = rho.offdiagonal_mass_profile();
        assert_relative_eq!(profile[0], 1.0, epsilon = 1e-14);
        assert!(profile[1..].iter().all(|&x| x == 0.0));

        // maximally coherent two-site state: (1, 0.5, 0, …)
        let mut amps = vec![C64::new(0.0, 0.0); 4];
        amps[1] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[2] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let rho = SingleBandDensityMatrix::from_pure(&LatticeState { amps, origin: -1 });
        let profile = rho.offdiagonal_mass_profile();
        assert_relative_eq!(profile[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(profile[1], 0.5, epsilon = 1e-14);
        assert!(profile[2..].iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = TBParams::new(1.0, 0.1, 0.05, 5).unwrap();
        let state = LatticeState::gaussian(5, p.origin, 1.0, 0.0);
        let opts = MasterEqOptions {
            dt: 0.02,
            t_total: 1.0,
            record_stride: 10,
            snapshot_times: vec![],
        };
        // non-Hermitian
        let mut bad_rho = SingleBandDensityMatrix::from_pure(&state);
        bad_rho.data[1] += C64::new(0.5, 0.0);
        assert!(evolve_master_equation(&bad_rho, &p, &opts).is_err());
        // coarse dt
        let rho0 = SingleBandDensityMatrix::from_pure(&state);
        let bad_opts = MasterEqOptions { dt: 0.2, ..opts.clone() };
        assert!(evolve_master_equation(&rho0, &p, &bad_opts).is_err());
        // oversized lattice
        let p_big = TBParams::new(1.0, 0.1, 0.05, MAX_SITES + 1);
        assert!(p_big.is_ok());
        let state_big = LatticeState::gaussian(MAX_SITES + 1, p_big.as_ref().unwrap().origin, 3.0, 0.0);
        let rho_big = SingleBandDensityMatrix::from_pure(&state_big);
        assert!(evolve_master_equation(&rho_big, &p_big.unwrap(), &opts).is_err());
    }
}
