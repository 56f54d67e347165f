//! Linear stochastic wave-function unraveling and trajectory ensembles.
//!
//! A single trajectory integrates
//!
//! ```text
//! dψ = ( -(i/ħ) H dt - (γ̃/2) L†_u L_u dt + √γ̃ L_u dξ ) ψ
//! ```
//!
//! with a fresh transverse projection `u ~ uniform[-1,1]` and a fresh real
//! Wiener increment `dξ ~ N(0, dt)` drawn every step. The equation is linear:
//! the norm of an individual trajectory drifts, and only the ensemble mean of
//! the unnormalized quadratic forms `⟨ψ|A|ψ⟩` reproduces master-equation
//! expectation values. The ensemble-mean norm is reported as a convergence
//! control.
//!
//! One step is realized as an exact unitary propagation of the deterministic
//! Hamiltonian factor (`exp(-iH dt)`, either Strang-split with an exact
//! sine-basis hopping step or a precomputed dense exponential) followed by an
//! Euler–Maruyama update of the dissipative terms. A naive explicit Euler
//! treatment of `-iH dt` amplifies every mode by `√(1+E²dt²)` per step and is
//! useless over the step counts needed here. The optional Heun scheme applies
//! a predictor–corrector to the noise substep with the Itô→Stratonovich drift
//! correction, so both schemes integrate the same (Itô) equation.
//!
//! Trajectory `k` draws from an independent, reproducible ChaCha8 stream
//! derived from `(master seed, k)`; per step `u` is drawn first, then `dξ`.
//! Ensembles are reduced chunk-wise in a fixed order, so results are
//! bit-identical for any thread count and identical between the parallel and
//! sequential drivers.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::operators::{all_finite, norm_sq, BandedHermitian};

/// Hard guard on the step size: `dt · max_rate ≤ GUARD`.
pub const DT_GUARD: f64 = 0.05;

/// Trajectories per reduction chunk (fixed, so that the summation order does
/// not depend on the thread count).
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    Heun,
}

/// Ensemble configuration. `u` is always uniform on `[-1, 1]` with density 1/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    pub t_total: f64,
    pub n_traj: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Observables are recorded every `record_stride` steps (plus the final
    /// step). Presets default this to about 100 samples per Bloch period.
    pub record_stride: usize,
}

impl SdeConfig {
    pub fn validate(&self, max_rate: f64) -> Result<(), SdeError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SdeError::InvalidConfig("dt must be positive".into()));
        }
        if self.dt * max_rate > DT_GUARD * (1.0 + 1e-12) {
            return Err(SdeError::InvalidConfig(format!(
                "dt = {} too large: dt * max rate {} exceeds the guard {}",
                self.dt,
                self.dt * max_rate,
                DT_GUARD
            )));
        }
        if !(self.t_total.is_finite() && self.t_total >= self.dt) {
            return Err(SdeError::InvalidConfig("t_total must cover at least one step".into()));
        }
        if self.n_traj == 0 {
            return Err(SdeError::InvalidConfig("need at least one trajectory".into()));
        }
        if self.record_stride == 0 {
            return Err(SdeError::InvalidConfig("record stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_total / self.dt).round().max(1.0) as usize
    }
}

/// The two random numbers consumed by one step.
#[derive(Debug, Clone, Copy)]
pub struct StepNoise {
    /// Transverse photon projection, uniform on [-1, 1].
    pub u: f64,
    /// Wiener increment, N(0, dt).
    pub dxi: f64,
}

pub fn draw_noise<R: Rng>(rng: &mut R, dt: f64) -> StepNoise {
    let u = rng.gen_range(-1.0..=1.0);
    let g: f64 = rng.sample(StandardNormal);
    StepNoise { u, dxi: g * dt.sqrt() }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AbortReason {
    #[error("non-finite amplitudes")]
    NonFinite,
    #[error("edge population fraction {fraction:.3e} exceeds threshold {threshold:.1e}")]
    EdgeProximity { fraction: f64, threshold: f64 },
}

#[derive(Debug, Clone)]
pub struct TrajectoryFailure {
    pub trajectory: usize,
    /// RNG stream of the failed trajectory (equal to its index).
    pub stream: u64,
    pub t: f64,
    pub reason: AbortReason,
}

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("{} trajectories aborted; first: trajectory {} (stream {}) at t = {}: {}",
        .0.len(), .0[0].trajectory, .0[0].stream, .0[0].t, .0[0].reason)]
    TrajectoriesAborted(Vec<TrajectoryFailure>),
}

/// Unnormalized per-trajectory quadratic forms recorded at one output time.
#[derive(Debug, Clone, Copy, Default)]
pub struct Observation {
    pub norm: f64,
    pub survival: f64,
    pub v: f64,
    pub z: f64,
    pub z2: f64,
    pub v2: f64,
}

impl Observation {
    fn as_array(&self) -> [f64; 6] {
        [self.norm, self.survival, self.v, self.z, self.z2, self.v2]
    }
}

/// A model that the ensemble driver can integrate: owns its state layout, its
/// one-step map and its observable measurements.
pub trait SdeModel: Sync {
    type State: Clone + Send;

    fn initial_state(&self) -> Self::State;
    /// Step size baked into the model's drift propagator.
    fn dt(&self) -> f64;
    /// Fastest rate scale, for the `dt` guard.
    fn max_rate(&self) -> f64;
    fn step(&self, state: &mut Self::State, noise: &StepNoise, scheme: Scheme);
    fn observe(&self, state: &mut Self::State) -> Observation;
    /// Health monitors, evaluated at every record time.
    fn check(&self, state: &Self::State) -> Result<(), AbortReason>;
}

// ---------------------------------------------------------------------------
// Drift propagators
// ---------------------------------------------------------------------------

/// Scratch buffers owned by a trajectory state.
#[derive(Debug, Clone, Default)]
pub struct StepWorkspace {
    pub ext: Vec<C64>,
    pub fft_scratch: Vec<C64>,
    pub l_diag: Vec<C64>,
    pub op_scratch: Vec<C64>,
}

/// Exact one-step propagator `exp(-iH dt)` for a time-independent lattice
/// Hamiltonian.
pub enum DriftPropagator {
    /// Diagonal H: pure phases.
    Diagonal { phases: Vec<C64> },
    /// Nearest-neighbor H: Strang split `V/2 · K · V/2` where the hopping
    /// step K is applied exactly in its hard-wall sine eigenbasis via FFT.
    StrangSine {
        phase_half: Vec<C64>,
        /// `-exp(-i ε_j dt) / (2(N+1))`: the eigenphases with the scale
        /// factors of the two raw sine passes folded in.
        eigenphase: Vec<C64>,
        fft: Arc<dyn Fft<f64>>,
        n: usize,
    },
    /// General few-diagonal H: one dense matrix exponential, built once.
    DenseExp { w: Vec<C64>, n: usize },
}

impl DriftPropagator {
    /// Builds the cheapest exact propagator for `h` (which must have real
    /// off-diagonals; lattice Hamiltonians always do).
    pub fn build(h: &BandedHermitian, dt: f64) -> Result<Self, SdeError> {
        let n = h.dim();
        if h.bands().is_empty() {
            let phases = h
                .diag()
                .iter()
                .map(|&e| C64::from_polar(1.0, -e * dt))
                .collect();
            return Ok(DriftPropagator::Diagonal { phases });
        }
        if h.bands().iter().any(|(_, c)| c.im != 0.0) {
            return Err(SdeError::InvalidConfig(
                "drift propagator requires real off-diagonal couplings".into(),
            ));
        }
        if h.is_tridiagonal() {
            let c = h.bands()[0].1.re;
            let phase_half = h
                .diag()
                .iter()
                .map(|&e| C64::from_polar(1.0, -e * dt / 2.0))
                .collect();
            let m = 2 * (n + 1);
            let scale = -1.0 / (2.0 * (n as f64 + 1.0));
            let eigenphase = (1..=n)
                .map(|j| {
                    let eps = 2.0 * c * (std::f64::consts::PI * j as f64 / (n as f64 + 1.0)).cos();
                    C64::from_polar(scale, -eps * dt)
                })
                .collect();
            let fft = FftPlanner::new().plan_fft_forward(m);
            return Ok(DriftPropagator::StrangSine { phase_half, eigenphase, fft, n });
        }
        // dense exponential via the real symmetric eigendecomposition
        let hd = h.to_dense_real().expect("checked real bands above");
        let eig = nalgebra::SymmetricEigen::new(hd);
        let q = eig.eigenvectors;
        let mut w = vec![C64::new(0.0, 0.0); n * n];
        for a in 0..n {
            for b in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += q[(a, k)] * q[(b, k)] * C64::from_polar(1.0, -eig.eigenvalues[k] * dt);
                }
                w[a * n + b] = acc;
            }
        }
        Ok(DriftPropagator::DenseExp { w, n })
    }

    pub fn dim(&self) -> usize {
        match self {
            DriftPropagator::Diagonal { phases } => phases.len(),
            DriftPropagator::StrangSine { n, .. } => *n,
            DriftPropagator::DenseExp { n, .. } => *n,
        }
    }

    pub fn apply(&self, psi: &mut [C64], ws: &mut StepWorkspace) {
        match self {
            DriftPropagator::Diagonal { phases } => {
                for (p, ph) in psi.iter_mut().zip(phases) {
                    *p *= ph;
                }
            }
            DriftPropagator::StrangSine { phase_half, eigenphase, fft, n } => {
                let n = *n;
                ws.fft_scratch
                    .resize(fft.get_inplace_scratch_len(), C64::new(0.0, 0.0));
                for (p, ph) in psi.iter_mut().zip(phase_half) {
                    *p *= ph;
                }
                sine_pass(psi, &mut ws.ext, fft.as_ref(), &mut ws.fft_scratch, n);
                // eigenphases carry the two sine-pass scale factors
                ws.op_scratch.resize(n, C64::new(0.0, 0.0));
                for j in 0..n {
                    ws.op_scratch[j] = ws.ext[j + 1] * eigenphase[j];
                }
                let coeffs = std::mem::take(&mut ws.op_scratch);
                sine_pass(&coeffs, &mut ws.ext, fft.as_ref(), &mut ws.fft_scratch, n);
                ws.op_scratch = coeffs;
                for (i, p) in psi.iter_mut().enumerate() {
                    *p = ws.ext[i + 1];
                }
                for (p, ph) in psi.iter_mut().zip(phase_half) {
                    *p *= ph;
                }
            }
            DriftPropagator::DenseExp { w, n } => {
                let n = *n;
                ws.op_scratch.resize(n, C64::new(0.0, 0.0));
                for (i, out) in ws.op_scratch.iter_mut().enumerate() {
                    let row = &w[i * n..(i + 1) * n];
                    let mut acc = C64::new(0.0, 0.0);
                    for (wij, pj) in row.iter().zip(psi.iter()) {
                        acc += wij * pj;
                    }
                    *out = acc;
                }
                psi.copy_from_slice(&ws.op_scratch[..n]);
            }
        }
    }
}

/// Writes the odd extension of `x` into `ext` and FFTs it in place. After the
/// call, `ext[j]` for `j = 1..=n` holds `-2i · Σ_l x_l sin(πjl/(n+1))`.
fn sine_pass(x: &[C64], ext: &mut Vec<C64>, fft: &dyn Fft<f64>, scratch: &mut [C64], n: usize) {
    let m = 2 * (n + 1);
    ext.resize(m, C64::new(0.0, 0.0));
    ext[0] = C64::new(0.0, 0.0);
    ext[n + 1] = C64::new(0.0, 0.0);
    for i in 0..n {
        ext[i + 1] = x[i];
        ext[m - 1 - i] = -x[i];
    }
    fft.process_with_scratch(ext, scratch);
}

// ---------------------------------------------------------------------------
// One stochastic step
// ---------------------------------------------------------------------------

/// Family of recoil operators `u ↦ L_u`, diagonal in the model basis.
pub trait RecoilFamily: Sync {
    /// Writes the diagonal of `L_u`.
    fn diagonal(&self, u: f64, out: &mut Vec<C64>);
    /// `true` if every `L_u` is unitary (then `L†L = 1` and the drift term is
    /// state-independent).
    fn is_unitary(&self) -> bool;
    /// Writes the diagonal of `L†_u L_u` (only called when not unitary).
    fn number_diagonal(&self, u: f64, out: &mut Vec<f64>);
}

/// Dissipative substep on a state with diagonal recoil operator:
/// Euler–Maruyama `ψ ← ψ - (γ̃ dt/2) L†L ψ + √γ̃ dξ L ψ`, or the
/// Stratonovich-corrected Heun predictor–corrector of the same Itô equation.
pub fn noise_substep(
    psi: &mut [C64],
    l_diag: &[C64],
    n_diag: Option<&[f64]>,
    gamma: f64,
    dt: f64,
    dxi: f64,
    scheme: Scheme,
) {
    let sg = gamma.sqrt();
    match scheme {
        Scheme::EulerMaruyama => {
            for (i, p) in psi.iter_mut().enumerate() {
                let l = l_diag[i];
                let n = n_diag.map_or(1.0, |nd| nd[i]);
                let mult = C64::new(1.0 - 0.5 * gamma * dt * n, 0.0) + sg * dxi * l;
                *p *= mult;
            }
        }
        Scheme::Heun => {
            for (i, p) in psi.iter_mut().enumerate() {
                let l = l_diag[i];
                let n = n_diag.map_or(1.0, |nd| nd[i]);
                // Stratonovich drift: a = -(γ̃/2)(L†L + L²)
                let a = -0.5 * gamma * (C64::new(n, 0.0) + l * l);
                let b = sg * l;
                let incr = a * dt + b * dxi;
                let pred = C64::new(1.0, 0.0) + incr;
                let mult = C64::new(1.0, 0.0) + 0.5 * incr * (C64::new(1.0, 0.0) + pred);
                *p *= mult;
            }
        }
    }
}

/// One full step of the stochastic wave equation: exact drift propagation
/// `exp(-iH dt)` followed by the dissipative substep with the recoil family
/// evaluated at `noise.u`.
pub fn sde_step<F: RecoilFamily + ?Sized>(
    psi: &mut [C64],
    drift: &DriftPropagator,
    recoil: &F,
    gamma: f64,
    dt: f64,
    noise: &StepNoise,
    scheme: Scheme,
    ws: &mut StepWorkspace,
) {
    drift.apply(psi, ws);
    if gamma > 0.0 {
        recoil.diagonal(noise.u, &mut ws.l_diag);
        let l_diag = std::mem::take(&mut ws.l_diag);
        if recoil.is_unitary() {
            noise_substep(psi, &l_diag, None, gamma, dt, noise.dxi, scheme);
        } else {
            let mut nd = Vec::new();
            recoil.number_diagonal(noise.u, &mut nd);
            noise_substep(psi, &l_diag, Some(&nd), gamma, dt, noise.dxi, scheme);
        }
        ws.l_diag = l_diag;
    }
}

// ---------------------------------------------------------------------------
// Lattice model
// ---------------------------------------------------------------------------

use crate::tightbinding::{
    build_tb_hamiltonian, position_operator_tb, velocity_operator_tb, LatticeState, TBParams,
    TbError,
};

/// Recoil family of the lattice model: `L_u[l][l] = (-1)^l e^{iπul}`.
pub struct LatticeRecoil {
    n_sites: usize,
    origin: i64,
}

impl RecoilFamily for LatticeRecoil {
    fn diagonal(&self, u: f64, out: &mut Vec<C64>) {
        out.clear();
        out.reserve(self.n_sites);
        // phase recurrence: entry(l+1) = entry(l) · e^{iπ(u+1)}
        let step = C64::from_polar(1.0, std::f64::consts::PI * (u + 1.0));
        let mut cur = C64::from_polar(1.0, std::f64::consts::PI * (u + 1.0) * self.origin as f64);
        for _ in 0..self.n_sites {
            out.push(cur);
            cur *= step;
        }
    }

    fn is_unitary(&self) -> bool {
        true
    }

    fn number_diagonal(&self, _u: f64, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.n_sites, 1.0);
    }
}

/// Trajectory state: amplitudes plus thread-confined scratch.
#[derive(Debug, Clone)]
pub struct LatticeTrajState {
    pub psi: Vec<C64>,
    ws: StepWorkspace,
}

/// Ensemble model for the tilted lattice with recoil noise.
pub struct LatticeSdeModel {
    params: TBParams,
    drift: DriftPropagator,
    recoil: LatticeRecoil,
    v_op: BandedHermitian,
    z_diag: Vec<f64>,
    initial: Vec<C64>,
    dt: f64,
    /// Monitor width (sites on each edge) and abort threshold on the
    /// population fraction found there; `INFINITY` disables the monitor.
    pub edge_margin: usize,
    pub edge_threshold: f64,
}

impl LatticeSdeModel {
    pub fn new(params: &TBParams, initial: &LatticeState, dt: f64) -> Result<Self, TbError> {
        params.validate()?;
        if initial.amps.len() != params.n_sites || initial.origin != params.origin {
            return Err(TbError::InvalidParams(
                "initial state does not match the lattice geometry".into(),
            ));
        }
        let h = build_tb_hamiltonian(params)?;
        let drift =
            DriftPropagator::build(&h, dt).map_err(|e| TbError::InvalidParams(e.to_string()))?;
        Ok(Self {
            params: params.clone(),
            drift,
            recoil: LatticeRecoil { n_sites: params.n_sites, origin: params.origin },
            v_op: velocity_operator_tb(params)?,
            z_diag: position_operator_tb(params),
            initial: initial.amps.clone(),
            dt,
            edge_margin: 10,
            edge_threshold: 1e-6,
        })
    }

    pub fn params(&self) -> &TBParams {
        &self.params
    }

    /// Disables the edge-proximity monitor (for deliberately tiny boxes,
    /// e.g. the few-site oracle-equivalence runs).
    pub fn without_edge_monitor(mut self) -> Self {
        self.edge_threshold = f64::INFINITY;
        self
    }
}

impl SdeModel for LatticeSdeModel {
    type State = LatticeTrajState;

    fn initial_state(&self) -> LatticeTrajState {
        LatticeTrajState { psi: self.initial.clone(), ws: StepWorkspace::default() }
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn max_rate(&self) -> f64 {
        self.params
            .omega_b()
            .abs()
            .max(self.params.gamma)
            .max(self.params.bandwidth() / crate::tightbinding::HBAR)
    }

    fn step(&self, state: &mut LatticeTrajState, noise: &StepNoise, scheme: Scheme) {
        sde_step(
            &mut state.psi,
            &self.drift,
            &self.recoil,
            self.params.gamma,
            self.dt,
            noise,
            scheme,
            &mut state.ws,
        );
    }

    fn observe(&self, state: &mut LatticeTrajState) -> Observation {
        let psi = &state.psi;
        let norm = norm_sq(psi);
        let v = self.v_op.expectation(psi);
        let mut z = 0.0;
        let mut z2 = 0.0;
        for (zi, p) in self.z_diag.iter().zip(psi) {
            let w = p.norm_sqr();
            z += zi * w;
            z2 += zi * zi * w;
        }
        let v2 = self.v_op.quadratic_norm(psi, &mut state.ws.op_scratch);
        Observation { norm, survival: norm, v, z, z2, v2 }
    }

    fn check(&self, state: &LatticeTrajState) -> Result<(), AbortReason> {
        if !all_finite(&state.psi) {
            return Err(AbortReason::NonFinite);
        }
        if self.edge_threshold.is_finite() {
            let n = state.psi.len();
            let m = self.edge_margin.min(n / 2);
            let edge: f64 = state.psi[..m]
                .iter()
                .chain(state.psi[n - m..].iter())
                .map(|c| c.norm_sqr())
                .sum();
            let total = norm_sq(&state.psi);
            let fraction = if total > 0.0 { edge / total } else { 0.0 };
            if fraction > self.edge_threshold {
                return Err(AbortReason::EdgeProximity {
                    fraction,
                    threshold: self.edge_threshold,
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Ensemble driver and reduction
// ---------------------------------------------------------------------------

/// Ensemble-averaged observable time series with standard errors.
///
/// All columns are averages of unnormalized quadratic forms (consistent with
/// the linear unraveling); `disp = ⟨z²⟩ - ⟨z⟩²` at the ensemble level. The
/// mean norm doubles as the statistical-convergence control: it must stay
/// within its standard error of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub p_err: Vec<f64>,
    pub v: Vec<f64>,
    pub v_err: Vec<f64>,
    pub z: Vec<f64>,
    pub z_err: Vec<f64>,
    pub z2: Vec<f64>,
    pub z2_err: Vec<f64>,
    pub disp: Vec<f64>,
    pub disp_err: Vec<f64>,
    pub v2: Vec<f64>,
    pub v2_err: Vec<f64>,
    pub norm: Vec<f64>,
    pub norm_err: Vec<f64>,
    pub n_traj: usize,
}

impl ObservableSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean velocity divided by the survival probability.
    pub fn v_normalized(&self) -> Vec<f64> {
        self.v.iter().zip(&self.p).map(|(v, p)| v / p).collect()
    }

    /// Standard error of the normalized velocity (the P contribution is
    /// propagated in quadrature).
    pub fn v_normalized_err(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let p = self.p[i];
                let v = self.v[i];
                ((self.v_err[i] / p).powi(2) + (v * self.p_err[i] / (p * p)).powi(2)).sqrt()
            })
            .collect()
    }

    /// Dispersion of the P-normalized moments, `⟨z²⟩/P - (⟨z⟩/P)²`.
    pub fn disp_normalized(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.z2[i] / self.p[i] - (self.z[i] / self.p[i]).powi(2))
            .collect()
    }
}

struct ChunkAccum {
    count: usize,
    sums: Vec<[f64; 6]>,
    sq: Vec<[f64; 6]>,
    cross_z_z2: Vec<f64>,
    failures: Vec<TrajectoryFailure>,
}

impl ChunkAccum {
    fn new(n_records: usize) -> Self {
        Self {
            count: 0,
            sums: vec![[0.0; 6]; n_records],
            sq: vec![[0.0; 6]; n_records],
            cross_z_z2: vec![0.0; n_records],
            failures: Vec::new(),
        }
    }

    fn add(&mut self, records: &[Observation]) {
        self.count += 1;
        for (i, obs) in records.iter().enumerate() {
            let a = obs.as_array();
            for (k, &x) in a.iter().enumerate() {
                self.sums[i][k] += x;
                self.sq[i][k] += x * x;
            }
            self.cross_z_z2[i] += obs.z * obs.z2;
        }
    }

    fn merge(&mut self, other: &ChunkAccum) {
        self.count += other.count;
        for i in 0..self.sums.len() {
            for k in 0..6 {
                self.sums[i][k] += other.sums[i][k];
                self.sq[i][k] += other.sq[i][k];
            }
            self.cross_z_z2[i] += other.cross_z_z2[i];
        }
        self.failures.extend(other.failures.iter().cloned());
    }
}

fn record_steps(n_steps: usize, stride: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=n_steps).step_by(stride).collect();
    if *steps.last().unwrap() != n_steps {
        steps.push(n_steps);
    }
    steps
}

fn run_trajectory<M: SdeModel>(
    model: &M,
    config: &SdeConfig,
    traj: usize,
    n_steps: usize,
    records: &[usize],
) -> Result<Vec<Observation>, TrajectoryFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(traj as u64);
    let mut state = model.initial_state();
    let mut out = Vec::with_capacity(records.len());
    let mut next_record = 0;
    for step in 0..=n_steps {
        if next_record < records.len() && records[next_record] == step {
            model.check(&state).map_err(|reason| TrajectoryFailure {
                trajectory: traj,
                stream: traj as u64,
                t: step as f64 * config.dt,
                reason,
            })?;
            out.push(model.observe(&mut state));
            next_record += 1;
        }
        if step < n_steps {
            let noise = draw_noise(&mut rng, config.dt);
            model.step(&mut state, &noise, config.scheme);
        }
    }
    Ok(out)
}

fn run_chunk<M: SdeModel>(
    model: &M,
    config: &SdeConfig,
    chunk: usize,
    n_steps: usize,
    records: &[usize],
) -> ChunkAccum {
    let lo = chunk * CHUNK;
    let hi = ((chunk + 1) * CHUNK).min(config.n_traj);
    let mut acc = ChunkAccum::new(records.len());
    for traj in lo..hi {
        match run_trajectory(model, config, traj, n_steps, records) {
            Ok(obs) => acc.add(&obs),
            Err(failure) => acc.failures.push(failure),
        }
    }
    acc
}

fn reduce(
    chunks: Vec<ChunkAccum>,
    records: &[usize],
    dt: f64,
) -> Result<ObservableSeries, SdeError> {
    let n_records = records.len();
    let mut total = ChunkAccum::new(n_records);
    for c in &chunks {
        total.merge(c);
    }
    if !total.failures.is_empty() {
        total.failures.sort_by_key(|f| f.trajectory);
        return Err(SdeError::TrajectoriesAborted(total.failures));
    }
    let m = total.count as f64;
    let mut series = ObservableSeries {
        times: records.iter().map(|&s| s as f64 * dt).collect(),
        p: Vec::with_capacity(n_records),
        p_err: Vec::with_capacity(n_records),
        v: Vec::with_capacity(n_records),
        v_err: Vec::with_capacity(n_records),
        z: Vec::with_capacity(n_records),
        z_err: Vec::with_capacity(n_records),
        z2: Vec::with_capacity(n_records),
        z2_err: Vec::with_capacity(n_records),
        disp: Vec::with_capacity(n_records),
        disp_err: Vec::with_capacity(n_records),
        v2: Vec::with_capacity(n_records),
        v2_err: Vec::with_capacity(n_records),
        norm: Vec::with_capacity(n_records),
        norm_err: Vec::with_capacity(n_records),
        n_traj: total.count,
    };
    let stderr = |sum: f64, sumsq: f64| -> f64 {
        if total.count < 2 {
            return 0.0;
        }
        let var = ((sumsq - sum * sum / m) / (m - 1.0)).max(0.0);
        (var / m).sqrt()
    };
    for i in 0..n_records {
        let [norm, p, v, z, z2, v2] = total.sums[i];
        let [norm2, p2, v_sq, z_sq, z2_sq, v2_sq] = total.sq[i];
        series.norm.push(norm / m);
        series.norm_err.push(stderr(norm, norm2));
        series.p.push(p / m);
        series.p_err.push(stderr(p, p2));
        series.v.push(v / m);
        series.v_err.push(stderr(v, v_sq));
        series.z.push(z / m);
        series.z_err.push(stderr(z, z_sq));
        series.z2.push(z2 / m);
        series.z2_err.push(stderr(z2, z2_sq));
        series.v2.push(v2 / m);
        series.v2_err.push(stderr(v2, v2_sq));

        let z_mean = z / m;
        let z2_mean = z2 / m;
        series.disp.push(z2_mean - z_mean * z_mean);
        // delta method: Var(z2̄ - z̄²) ≈ Var(z2̄) + 4z̄²Var(z̄) - 4z̄Cov(z̄,z2̄)
        let disp_err = if total.count < 2 {
            0.0
        } else {
            let var_z = ((z_sq - z * z / m) / (m - 1.0)).max(0.0) / m;
            let var_z2 = ((z2_sq - z2 * z2 / m) / (m - 1.0)).max(0.0) / m;
            let cov = ((total.cross_z_z2[i] - z * z2 / m) / (m - 1.0)) / m;
            (var_z2 + 4.0 * z_mean * z_mean * var_z - 4.0 * z_mean * cov)
                .max(0.0)
                .sqrt()
        };
        series.disp_err.push(disp_err);
    }
    Ok(series)
}

/// Runs the trajectory ensemble, parallel over fixed-size chunks when the
/// `parallel` feature is enabled.
pub fn run_ensemble<M: SdeModel>(
    model: &M,
    config: &SdeConfig,
) -> Result<ObservableSeries, SdeError> {
    prepare(model, config)?;
    let n_steps = config.n_steps();
    let records = record_steps(n_steps, config.record_stride);
    let n_chunks = (config.n_traj + CHUNK - 1) / CHUNK;

    #[cfg(feature = "parallel")]
    let chunks: Vec<ChunkAccum> = {
        use rayon::prelude::*;
        (0..n_chunks)
            .into_par_iter()
            .map(|c| run_chunk(model, config, c, n_steps, &records))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<ChunkAccum> = (0..n_chunks)
        .map(|c| run_chunk(model, config, c, n_steps, &records))
        .collect();

    reduce(chunks, &records, config.dt)
}

/// Sequential driver; bit-identical to [`run_ensemble`] for the same inputs.
pub fn run_ensemble_seq<M: SdeModel>(
    model: &M,
    config: &SdeConfig,
) -> Result<ObservableSeries, SdeError> {
    prepare(model, config)?;
    let n_steps = config.n_steps();
    let records = record_steps(n_steps, config.record_stride);
    let n_chunks = (config.n_traj + CHUNK - 1) / CHUNK;
    let chunks: Vec<ChunkAccum> = (0..n_chunks)
        .map(|c| run_chunk(model, config, c, n_steps, &records))
        .collect();
    reduce(chunks, &records, config.dt)
}

fn prepare<M: SdeModel>(model: &M, config: &SdeConfig) -> Result<(), SdeError> {
    config.validate(model.max_rate())?;
    if (config.dt - model.dt()).abs() > 1e-12 * config.dt.max(1.0) {
        return Err(SdeError::InvalidConfig(format!(
            "config dt = {} does not match the model's drift propagator dt = {}",
            config.dt,
            model.dt()
        )));
    }
    Ok(())
}
