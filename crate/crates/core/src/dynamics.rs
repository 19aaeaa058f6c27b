//! Lindblad time evolution, Liouvillian steady states and pulse sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegratorOptions};
use crate::model::{
    build_dissipators, DriveSpec, EffectiveHamiltonian, HamiltonianOptions, SystemSpec, QUBIT,
    SNAIL,
};
use crate::quantum::{
    liouvillian_matrix, unvec, vec_of, CMatrix, DensityMatrix, HilbertSpace, C64, I, ONE,
};

/// Relative singular-value threshold below which a Liouvillian direction
/// counts as part of the null space.
pub const NULL_SPACE_TOL: f64 = 1e-10;
/// `‖Lρ‖ ≤ STEADY_RESIDUAL_TOL · ‖L‖`.
pub const STEADY_RESIDUAL_TOL: f64 = 1e-8;

const LEVEL_NAMES: [char; 8] = ['g', 'e', 'f', 'h', 'i', 'j', 'k', 'l'];

/// Qubit and SNAIL populations at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSample {
    pub time: f64,
    /// Qubit `[P_g, P_e, P_f⁺]`; `P_f⁺` aggregates every level ≥ |f⟩ and is 0
    /// for a two-level qubit.
    pub qubit: [f64; 3],
    /// SNAIL `[P_0, P_1⁺]`.
    pub snail: [f64; 2],
    /// `|tr ρ − 1|`.
    pub trace_err: f64,
}

impl PopulationSample {
    fn from_state(time: f64, rho: &CMatrix, space: &HilbertSpace) -> Self {
        let mut qubit = [0.0; 3];
        let mut snail = [0.0; 2];
        let mut trace = C64::new(0.0, 0.0);
        for idx in 0..space.total_dim() {
            let p = rho[(idx, idx)].re;
            trace += rho[(idx, idx)];
            let levels = space.levels_of(idx);
            qubit[levels[QUBIT].min(2)] += p;
            snail[levels[SNAIL].min(1)] += p;
        }
        Self {
            time,
            qubit,
            snail,
            trace_err: (trace - ONE).norm(),
        }
    }

    pub fn p_g(&self) -> f64 {
        self.qubit[0]
    }

    pub fn p_e(&self) -> f64 {
        self.qubit[1]
    }

    pub fn p_fplus(&self) -> f64 {
        self.qubit[2]
    }
}

/// Sampled qubit populations, the input to the rate fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSeries {
    pub times: Vec<f64>,
    pub populations: Vec<[f64; 3]>,
}

impl PopulationSeries {
    pub fn new(times: Vec<f64>, populations: Vec<[f64; 3]>) -> Result<Self> {
        if times.len() != populations.len() {
            return Err(Error::InvalidData(format!(
                "{} times but {} population rows",
                times.len(),
                populations.len()
            )));
        }
        Ok(Self { times, populations })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<PopulationSample>,
    pub rho_final: DensityMatrix,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &PopulationSample {
        self.samples
            .last()
            .expect("trajectories hold at least one sample")
    }

    pub fn qubit_series(&self) -> PopulationSeries {
        PopulationSeries {
            times: self.times(),
            populations: self.samples.iter().map(|s| s.qubit).collect(),
        }
    }

    /// Checks the sampled populations: each in [−1e-8, 1+1e-8], summing to 1
    /// within 1e-6, with strictly increasing times.
    pub fn check_invariants(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::InvalidData(format!(
                    "times not strictly increasing at {}",
                    w[1].time
                )));
            }
        }
        for s in &self.samples {
            for p in s.qubit.iter().chain(&s.snail) {
                if !(-1e-8..=1.0 + 1e-8).contains(p) {
                    return Err(Error::InvalidData(format!(
                        "population {p} out of range at t = {}",
                        s.time
                    )));
                }
            }
            let sum: f64 = s.qubit.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidData(format!(
                    "populations sum to {sum} at t = {}",
                    s.time
                )));
            }
        }
        Ok(())
    }
}

/// Settings shared by every time-evolution call.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub integrator: IntegratorOptions,
    pub hamiltonian: HamiltonianOptions,
}

/// Right-hand side `ρ̇ = −i(H_eff ρ − ρ H_eff†) + Σ γ LρL†` with
/// `H_eff = H − (i/2) Σ γ L†L`, on the real/imaginary split of `vec(ρ)`.
struct MasterEquation {
    hamiltonian: EffectiveHamiltonian,
    anti_hermitian: CMatrix,
    jumps: Vec<(f64, CMatrix, CMatrix)>,
    n: usize,
}

impl MasterEquation {
    fn new(hamiltonian: EffectiveHamiltonian, channels: &[(f64, CMatrix)]) -> Self {
        let n = hamiltonian.space().total_dim();
        let mut anti = CMatrix::zeros(n, n);
        let mut jumps = Vec::new();
        for (rate, l) in channels {
            let ld = l.adjoint();
            anti += (&ld * l) * C64::new(0.5 * rate, 0.0);
            jumps.push((*rate, l.clone(), ld));
        }
        Self {
            hamiltonian,
            anti_hermitian: anti,
            jumps,
            n,
        }
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let rho = unpack(y, self.n);
        let h_eff = self.hamiltonian.matrix_at(t) - &self.anti_hermitian * I;
        let a = &h_eff * &rho;
        let mut out = (&a - a.adjoint()) * (-I);
        for (rate, l, ld) in &self.jumps {
            out += (l * &rho * ld) * C64::new(*rate, 0.0);
        }
        pack_into(&out, dy);
    }
}

fn pack(m: &CMatrix) -> Vec<f64> {
    let mut v = vec![0.0; 2 * m.len()];
    pack_into(m, &mut v);
    v
}

fn pack_into(m: &CMatrix, out: &mut [f64]) {
    let n2 = m.len();
    for (k, z) in m.as_slice().iter().enumerate() {
        out[k] = z.re;
        out[n2 + k] = z.im;
    }
}

fn unpack(y: &[f64], n: usize) -> CMatrix {
    let n2 = n * n;
    CMatrix::from_iterator(n, n, (0..n2).map(|k| C64::new(y[k], y[n2 + k])))
}

fn channel_matrices(spec: &SystemSpec) -> Result<Vec<(f64, CMatrix)>> {
    Ok(build_dissipators(spec)?
        .into_iter()
        .map(|(r, op)| (r, op.into_matrix()))
        .collect())
}

fn sample_times(t_start: f64, duration: f64, dt: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let steps = (duration / dt).floor() as usize;
    for k in 1..=steps {
        let t = t_start + k as f64 * dt;
        if t < t_start + duration - 1e-12 * dt {
            times.push(t);
        }
    }
    times.push(t_start + duration);
    times
}

fn check_initial(spec: &SystemSpec, rho0: &DensityMatrix) -> Result<HilbertSpace> {
    let space = spec.space()?;
    if rho0.space() != &space {
        return Err(Error::InvalidState(format!(
            "initial state lives on {:?}, system is {:?}",
            rho0.space().dims(),
            space.dims()
        )));
    }
    DensityMatrix::new(space.clone(), rho0.matrix().clone())?;
    Ok(space)
}

/// Evolves from `t_start` for `duration`, appending samples after `t_start`.
fn evolve_segment(
    spec: &SystemSpec,
    drives: &[DriveSpec],
    rho: &CMatrix,
    t_start: f64,
    duration: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
    samples: &mut Vec<PopulationSample>,
) -> Result<CMatrix> {
    let space = spec.space()?;
    if duration == 0.0 {
        return Ok(rho.clone());
    }
    let eq = MasterEquation::new(
        EffectiveHamiltonian::new(spec, drives, opts.hamiltonian)?,
        &channel_matrices(spec)?,
    );
    let times = sample_times(t_start, duration, sample_dt);
    let states = integrate(
        |t, y, dy| eq.rhs(t, y, dy),
        t_start,
        &pack(rho),
        &times,
        &opts.integrator,
    )?;
    let n = space.total_dim();
    for (t, y) in times.iter().zip(&states) {
        samples.push(PopulationSample::from_state(*t, &unpack(y, n), &space));
    }
    Ok(unpack(states.last().expect("nonempty"), n))
}

fn check_timing(t_final: f64, sample_dt: f64) -> Result<()> {
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidParameter {
            name: "t_final".into(),
            reason: format!("{t_final} must be finite and >= 0"),
        });
    }
    if !(sample_dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sample_dt".into(),
            reason: format!("{sample_dt} must be > 0"),
        });
    }
    Ok(())
}

/// Integrates the master equation from `t = 0` to `t_final`, sampling every
/// `sample_dt` (plus the endpoint).
pub fn evolve(
    spec: &SystemSpec,
    drives: &[DriveSpec],
    rho0: &DensityMatrix,
    t_final: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_final".into(),
            reason: format!("{t_final} must be > 0"),
        });
    }
    check_timing(t_final, sample_dt)?;
    let space = check_initial(spec, rho0)?;
    let mut samples = vec![PopulationSample::from_state(0.0, rho0.matrix(), &space)];
    let rho = evolve_segment(
        spec,
        drives,
        rho0.matrix(),
        0.0,
        t_final,
        sample_dt,
        opts,
        &mut samples,
    )?;
    Ok(Trajectory {
        samples,
        rho_final: DensityMatrix::from_raw(space, rho),
    })
}

/// Dense propagator `exp(L t)` applied to `ρ₀` at each time; static
/// Hamiltonians only. Independent of the Runge–Kutta path.
pub fn evolve_exponential(
    spec: &SystemSpec,
    drives: &[DriveSpec],
    rho0: &DensityMatrix,
    times: &[f64],
) -> Result<Vec<DensityMatrix>> {
    let space = check_initial(spec, rho0)?;
    let h = EffectiveHamiltonian::new(spec, drives, HamiltonianOptions::default())?;
    if !h.is_static() {
        return Err(Error::TimeDependentDrives);
    }
    let n = space.total_dim();
    let l = liouvillian_matrix(&h.matrix_at(0.0), &channel_matrices(spec)?, n);
    let v0 = vec_of(rho0.matrix());
    Ok(times
        .iter()
        .map(|&t| {
            let prop = (&l * C64::new(t, 0.0)).exp();
            DensityMatrix::from_raw(space.clone(), unvec(&(prop * &v0), n))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SteadyStateOptions {
    /// Solve in the frame where every drive is static, keeping only the
    /// secular (frame-static) parts of the collapse operators. Required when
    /// e–f drives or detunings make `H(t)` time dependent.
    pub co_rotating: bool,
    pub hamiltonian: HamiltonianOptions,
}

/// Frame energies making all drive terms static: SNAIL quantum `k_s` and
/// qubit level energies `k_l` (`k_0 = 0`), rad/µs.
fn co_rotating_frame(h: &EffectiveHamiltonian, qubit_dim: usize) -> Result<(f64, Vec<f64>)> {
    let unknowns = qubit_dim; // k_s, k_1 .. k_{d-1}
    if h.terms.is_empty() {
        return Ok((0.0, vec![0.0; qubit_dim]));
    }
    let rows = h.terms.len();
    let mut a = DMatrix::<f64>::zeros(rows, unknowns);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, term) in h.terms.iter().enumerate() {
        // ν + k_s + k_to − k_from = 0
        let (to, from) = term.kind.qubit_transition();
        a[(r, 0)] = 1.0;
        if to > 0 {
            a[(r, to)] += 1.0;
        }
        if from > 0 {
            a[(r, from)] -= 1.0;
        }
        b[r] = -term.frequency;
    }
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-12).map_err(|_| Error::NoCoRotatingFrame)?;
    let scale = b.amax().max(1.0);
    if (&a * &x - &b).amax() > 1e-9 * scale {
        return Err(Error::NoCoRotatingFrame);
    }
    let mut levels = vec![0.0; qubit_dim];
    levels[1..].copy_from_slice(&x.as_slice()[1..]);
    Ok((x[0], levels))
}

/// Splits a collapse operator into components rotating at distinct
/// frequencies under the diagonal frame `energies`.
fn secular_components(l: &CMatrix, energies: &[f64]) -> Vec<CMatrix> {
    let n = l.nrows();
    let mut groups: Vec<(f64, CMatrix)> = Vec::new();
    let scale = energies.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    for c in 0..n {
        for r in 0..n {
            let v = l[(r, c)];
            if v.norm() == 0.0 {
                continue;
            }
            let w = energies[r] - energies[c];
            match groups
                .iter_mut()
                .find(|(f, _)| (f - w).abs() <= 1e-9 * scale)
            {
                Some((_, m)) => m[(r, c)] = v,
                None => {
                    let mut m = CMatrix::zeros(n, n);
                    m[(r, c)] = v;
                    groups.push((w, m));
                }
            }
        }
    }
    groups.into_iter().map(|(_, m)| m).collect()
}

/// Static-frame Liouvillian for a steady-state solve.
fn steady_liouvillian(
    spec: &SystemSpec,
    drives: &[DriveSpec],
    opts: &SteadyStateOptions,
) -> Result<(HilbertSpace, CMatrix)> {
    let h = EffectiveHamiltonian::new(spec, drives, opts.hamiltonian)?;
    let space = h.space().clone();
    let n = space.total_dim();
    let channels = channel_matrices(spec)?;
    if h.is_static() {
        return Ok((space, liouvillian_matrix(&h.matrix_at(0.0), &channels, n)));
    }
    if !opts.co_rotating {
        return Err(Error::TimeDependentDrives);
    }
    let (k_s, k_q) = co_rotating_frame(&h, spec.qubit_dim)?;
    let energies: Vec<f64> = (0..n)
        .map(|idx| {
            let lv = space.levels_of(idx);
            k_s * lv[SNAIL] as f64 + k_q[lv[QUBIT]]
        })
        .collect();
    let mut hs = h.static_matrix().clone();
    for term in &h.terms {
        let a = &term.op * term.coefficient;
        hs += &a + a.adjoint();
    }
    for (idx, e) in energies.iter().enumerate() {
        hs[(idx, idx)] -= C64::new(*e, 0.0);
    }
    let secular: Vec<(f64, CMatrix)> = channels
        .iter()
        .flat_map(|(rate, l)| {
            secular_components(l, &energies)
                .into_iter()
                .map(move |m| (*rate, m))
        })
        .collect();
    Ok((space, liouvillian_matrix(&hs, &secular, n)))
}

/// Unique fixed point of the Liouvillian.
pub fn steady_state(
    spec: &SystemSpec,
    drives: &[DriveSpec],
    opts: &SteadyStateOptions,
) -> Result<DensityMatrix> {
    let (space, l) = steady_liouvillian(spec, drives, opts)?;
    null_space_state(&space, &l)
}

pub(crate) fn null_space_state(space: &HilbertSpace, l: &CMatrix) -> Result<DensityMatrix> {
    let n = space.total_dim();
    let svd = l.clone().svd(false, true);
    let sigma = &svd.singular_values;
    let s_max = sigma.max();
    let threshold = NULL_SPACE_TOL * s_max;
    let nullity = sigma.iter().filter(|&&s| s <= threshold).count();
    if nullity != 1 {
        return Err(Error::DegenerateSteadyState(nullity));
    }
    let k = sigma.imin();
    let v_t = svd.v_t.expect("requested V");
    let v: DVector<C64> = v_t.row(k).adjoint();
    let mut rho = unvec(&v, n);
    let tr = rho.trace();
    rho /= tr;
    rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);

    let eig = rho.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -crate::quantum::POSITIVITY_TOL {
        return Err(Error::InvalidState(format!(
            "steady state has eigenvalue {min:.3e}"
        )));
    }
    if min < 0.0 {
        let clamped = eig.eigenvalues.map(|x| C64::new(x.max(0.0), 0.0));
        let vecs = &eig.eigenvectors;
        rho = vecs * CMatrix::from_diagonal(&clamped) * vecs.adjoint();
        let tr = rho.trace();
        rho /= tr;
    }

    let residual = (l * vec_of(&rho)).norm();
    let bound = STEADY_RESIDUAL_TOL * l.norm();
    if residual > bound {
        return Err(Error::SteadyStateResidual { residual, bound });
    }
    Ok(DensityMatrix::from_raw(space.clone(), rho))
}

/// Initial product state `|n, level⟩`, written like `"0,g"` or `"1,e"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitialState {
    pub snail: usize,
    pub qubit: usize,
}

impl InitialState {
    pub fn new(snail: usize, qubit: usize) -> Self {
        Self { snail, qubit }
    }

    pub fn density_matrix(&self, spec: &SystemSpec) -> Result<DensityMatrix> {
        DensityMatrix::basis_state(&spec.space()?, &[self.snail, self.qubit])
    }
}

impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter {
            name: "initial_state".into(),
            reason: format!("`{s}` is not of the form `<snail number>,<qubit level>`"),
        };
        let (n, q) = s.split_once(',').ok_or_else(bad)?;
        let snail = n.trim().parse().map_err(|_| bad())?;
        let q = q.trim();
        let qubit = match q.chars().collect::<Vec<_>>().as_slice() {
            [c] if c.is_ascii_digit() => c.to_digit(10).unwrap() as usize,
            [c] => LEVEL_NAMES.iter().position(|l| l == c).ok_or_else(bad)?,
            _ => return Err(bad()),
        };
        Ok(Self { snail, qubit })
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match LEVEL_NAMES.get(self.qubit) {
            Some(c) => write!(f, "{},{}", self.snail, c),
            None => write!(f, "{},{}", self.snail, self.qubit),
        }
    }
}

impl Serialize for InitialState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InitialState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    /// µs.
    pub duration: f64,
    pub drives: Vec<DriveSpec>,
}

/// Initialize, run pump segments, then evolve drive-free for the measurement
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub initial_state: InitialState,
    pub segments: Vec<Segment>,
    /// µs.
    pub measure_window: f64,
}

impl PulseSequence {
    pub fn validate(&self) -> Result<()> {
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.duration >= 0.0) || !seg.duration.is_finite() {
                return Err(Error::InvalidParameter {
                    name: format!("segments[{i}].duration"),
                    reason: format!("{} must be finite and >= 0", seg.duration),
                });
            }
        }
        if !(self.measure_window >= 0.0) || !self.measure_window.is_finite() {
            return Err(Error::InvalidParameter {
                name: "measure_window".into(),
                reason: format!("{} must be finite and >= 0", self.measure_window),
            });
        }
        Ok(())
    }

    pub fn pump_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Same sequence with every segment's drives replaced.
    pub fn with_drives(&self, drives: &[DriveSpec]) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    duration: s.duration,
                    drives: drives.to_vec(),
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Runs the segments back to back on a continuous clock, then the drive-free
/// measurement window.
pub fn run_sequence(
    spec: &SystemSpec,
    seq: &PulseSequence,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    seq.validate()?;
    check_timing(seq.pump_duration() + seq.measure_window, sample_dt)?;
    let rho0 = seq.initial_state.density_matrix(spec)?;
    let space = rho0.space().clone();
    let mut samples = vec![PopulationSample::from_state(0.0, rho0.matrix(), &space)];
    let mut rho = rho0.matrix().clone();
    let mut t = 0.0;
    for seg in &seq.segments {
        rho = evolve_segment(
            spec,
            &seg.drives,
            &rho,
            t,
            seg.duration,
            sample_dt,
            opts,
            &mut samples,
        )?;
        t += seg.duration;
    }
    rho = evolve_segment(
        spec,
        &[],
        &rho,
        t,
        seq.measure_window,
        sample_dt,
        opts,
        &mut samples,
    )?;
    Ok(Trajectory {
        samples,
        rho_final: DensityMatrix::from_raw(space, rho),
    })
}

/// Result for one sweep point; failures do not abort the sweep.
#[derive(Debug)]
pub struct SweepPoint<T> {
    pub index: usize,
    pub drives: Vec<DriveSpec>,
    pub outcome: Result<T>,
}

/// Maps `f` over `items` in parallel, keeping input order. `threads` caps
/// the worker count.
pub fn par_map<I, T, F>(items: &[I], threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync,
{
    let job = || items.par_iter().map(&f).collect::<Vec<_>>();
    Ok(match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter {
                name: "threads".into(),
                reason: e.to_string(),
            })?
            .install(job),
        None => job(),
    })
}

fn run_parallel<T, F>(
    grid: &[Vec<DriveSpec>],
    threads: Option<usize>,
    f: F,
) -> Result<Vec<SweepPoint<T>>>
where
    T: Send,
    F: Fn(&[DriveSpec]) -> Result<T> + Sync,
{
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let indexed: Vec<(usize, &Vec<DriveSpec>)> = grid.iter().enumerate().collect();
    par_map(&indexed, threads, |(index, drives)| SweepPoint {
        index: *index,
        drives: drives.to_vec(),
        outcome: f(drives),
    })
}

/// First sample time after which every qubit population stays within `tol`
/// of `target`, considering samples up to `t_end`.
pub fn settling_time(traj: &Trajectory, target: [f64; 3], tol: f64, t_end: f64) -> Option<f64> {
    let window: Vec<&PopulationSample> = traj
        .samples
        .iter()
        .filter(|s| s.time <= t_end + 1e-9)
        .collect();
    let inside = |s: &PopulationSample| (0..3).all(|k| (s.qubit[k] - target[k]).abs() <= tol);
    if !window.last().is_some_and(|s| inside(s)) {
        return None;
    }
    let first_out = window.iter().rposition(|s| !inside(s));
    Some(match first_out {
        Some(k) => window[k + 1].time,
        None => window[0].time,
    })
}

/// Runs `template` once per grid point with that point's drives.
pub fn sweep(
    spec: &SystemSpec,
    drive_grid: &[Vec<DriveSpec>],
    template: &PulseSequence,
    sample_dt: f64,
    opts: &EvolveOptions,
    threads: Option<usize>,
) -> Result<Vec<SweepPoint<Trajectory>>> {
    run_parallel(drive_grid, threads, |drives| {
        run_sequence(spec, &template.with_drives(drives), sample_dt, opts)
    })
}

/// Steady state per grid point.
pub fn sweep_steady(
    spec: &SystemSpec,
    drive_grid: &[Vec<DriveSpec>],
    opts: &SteadyStateOptions,
    threads: Option<usize>,
) -> Result<Vec<SweepPoint<DensityMatrix>>> {
    run_parallel(drive_grid, threads, |drives| {
        steady_state(spec, drives, opts)
    })
}

/// Qubit populations `[P_g, P_e, P_f⁺]` of a joint state.
pub fn qubit_populations(rho: &DensityMatrix) -> [f64; 3] {
    PopulationSample::from_state(0.0, rho.matrix(), rho.space()).qubit
}

/// Labelled joint-basis populations, e.g. `"0,g" -> 0.97`.
pub fn joint_populations(rho: &DensityMatrix) -> BTreeMap<String, f64> {
    let space = rho.space();
    rho.populations()
        .into_iter()
        .enumerate()
        .map(|(idx, p)| {
            let lv = space.levels_of(idx);
            (InitialState::new(lv[SNAIL], lv[QUBIT]).to_string(), p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{heating_population_analytic, two_level_steady_state};
    use crate::model::{angular, DriveKind};
    use std::f64::consts::PI;

    fn cold_two_level() -> SystemSpec {
        SystemSpec::two_level(12.98)
    }

    #[test]
    fn no_dynamics_leaves_state_fixed() {
        let spec = SystemSpec {
            kappa_s: 0.0,
            ..cold_two_level()
        };
        let space = spec.space().unwrap();
        let mut rng = crate::quantum::testing::rng(1);
        let rho0 = crate::quantum::testing::random_density(&mut rng, &space);
        let traj = evolve(&spec, &[], &rho0, 3.0, 0.5, &EvolveOptions::default()).unwrap();
        assert_eq!(traj.samples.len(), 7);
        let diff = (traj.rho_final.matrix() - rho0.matrix()).camax();
        assert!(diff < 1e-14);
    }

    #[test]
    fn qubit_decay_is_exponential() {
        let spec = SystemSpec {
            kappa_s: 0.0,
            kappa_q_down: 0.05,
            ..cold_two_level()
        };
        let rho0 = InitialState::new(0, 1).density_matrix(&spec).unwrap();
        let traj = evolve(&spec, &[], &rho0, 10.0, 0.25, &EvolveOptions::default()).unwrap();
        for s in &traj.samples {
            let exact = (-angular(0.05) * s.time).exp();
            assert!((s.p_e() - exact).abs() < 1e-6);
        }
        traj.check_invariants().unwrap();
    }

    #[test]
    fn heating_matches_closed_form() {
        let spec = cold_two_level();
        let g = 0.005 * spec.kappa_s;
        let drives = [DriveSpec::new(DriveKind::SigmaGe, g)];
        let rho0 = InitialState::new(0, 0).density_matrix(&spec).unwrap();
        let traj = evolve(&spec, &drives, &rho0, 20.0, 0.5, &EvolveOptions::default()).unwrap();
        for s in &traj.samples {
            let exact = heating_population_analytic(g, spec.kappa_s, s.time);
            assert!(
                (s.p_g() - exact).abs() < 1e-6,
                "{}: {} {}",
                s.time,
                s.p_g(),
                exact
            );
        }
    }

    #[test]
    fn exponential_propagator_agrees_with_rk() {
        let spec = SystemSpec {
            nbar_s: 0.1,
            kappa_q_down: 0.03,
            kappa_q_up: 0.01,
            ..cold_two_level()
        };
        let drives = [
            DriveSpec::new(DriveKind::SigmaGe, 0.3),
            DriveSpec::new(DriveKind::DeltaGe, 0.2),
        ];
        let rho0 = InitialState::new(0, 0).density_matrix(&spec).unwrap();
        let traj = evolve(&spec, &drives, &rho0, 4.0, 1.0, &EvolveOptions::default()).unwrap();
        let times = traj.times();
        let exact = evolve_exponential(&spec, &drives, &rho0, &times).unwrap();
        for (s, e) in traj.samples.iter().zip(&exact) {
            let q = qubit_populations(e);
            assert!((s.p_g() - q[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn trace_and_hermiticity_preserved() {
        let spec = SystemSpec {
            snail_dim: 3,
            ..SystemSpec::device_defaults()
        };
        let drives = [
            DriveSpec::new(DriveKind::DeltaGe, 0.4),
            DriveSpec::new(DriveKind::SigmaEf, 0.4),
        ];
        let rho0 = InitialState::new(0, 1).density_matrix(&spec).unwrap();
        let traj = evolve(&spec, &drives, &rho0, 1.0, 0.1, &EvolveOptions::default()).unwrap();
        traj.check_invariants().unwrap();
        for s in &traj.samples {
            assert!(s.trace_err < 1e-9);
        }
        assert!(traj.rho_final.hermiticity_error() < 1e-10);
        assert!(traj.rho_final.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let spec = cold_two_level();
        let rho0 = InitialState::new(0, 0).density_matrix(&spec).unwrap();
        let opts = EvolveOptions::default();
        assert!(evolve(&spec, &[], &rho0, 0.0, 0.1, &opts).is_err());
        assert!(evolve(&spec, &[], &rho0, 1.0, 0.0, &opts).is_err());
        let other = SystemSpec {
            qubit_dim: 3,
            ..spec.clone()
        };
        let wrong = InitialState::new(0, 0).density_matrix(&other).unwrap();
        assert!(evolve(&spec, &[], &wrong, 1.0, 0.1, &opts).is_err());
    }

    #[test]
    fn steady_state_examples() {
        let opts = SteadyStateOptions::default();
        // Thermal SNAIL, N̄ = 0, qubit decay → joint ground state.
        let spec = SystemSpec {
            nbar_s: 0.0,
            kappa_q_up: 0.0,
            qubit_dim: 2,
            ..SystemSpec::device_defaults()
        };
        let ss = steady_state(&spec, &[], &opts).unwrap();
        assert!((ss.populations()[0] - 1.0).abs() < 1e-9);

        let spec = cold_two_level();
        let ss = steady_state(&spec, &[DriveSpec::new(DriveKind::DeltaGe, 0.1)], &opts).unwrap();
        assert!((qubit_populations(&ss)[0] - 1.0).abs() < 1e-9);

        let gd = 0.01 * spec.kappa_s / 2.0;
        let drives = [
            DriveSpec::new(DriveKind::SigmaGe, 2.0 * gd),
            DriveSpec::new(DriveKind::DeltaGe, gd),
        ];
        let q = qubit_populations(&steady_state(&spec, &drives, &opts).unwrap());
        assert!(
            (q[0] - 0.2).abs() < 1e-3 && (q[1] - 0.8).abs() < 1e-3,
            "{q:?}"
        );
        let (pg, _) = two_level_steady_state(2.0 * gd, gd, 0.0).unwrap();
        assert!((q[0] - pg).abs() < 1e-3);
    }

    #[test]
    fn steady_state_degenerate_is_error() {
        // No qubit dissipation and no drives: every qubit operator is stationary.
        let spec = cold_two_level();
        assert!(matches!(
            steady_state(&spec, &[], &SteadyStateOptions::default()),
            Err(Error::DegenerateSteadyState(4))
        ));
    }

    #[test]
    fn steady_state_requires_flag_for_time_dependence() {
        let spec = SystemSpec::device_defaults();
        let drives = [
            DriveSpec::new(DriveKind::DeltaGe, 0.3),
            DriveSpec::new(DriveKind::SigmaEf, 0.3),
        ];
        assert!(matches!(
            steady_state(&spec, &drives, &SteadyStateOptions::default()),
            Err(Error::TimeDependentDrives)
        ));
        let opts = SteadyStateOptions {
            co_rotating: true,
            ..Default::default()
        };
        let q = qubit_populations(&steady_state(&spec, &drives, &opts).unwrap());
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn co_rotating_steady_state_matches_long_evolution() {
        let spec = SystemSpec::device_defaults();
        let drives = [
            DriveSpec::new(DriveKind::DeltaGe, 0.5),
            DriveSpec::new(DriveKind::SigmaEf, 0.9),
        ];
        let opts = SteadyStateOptions {
            co_rotating: true,
            ..Default::default()
        };
        let q = qubit_populations(&steady_state(&spec, &drives, &opts).unwrap());
        let rho0 = InitialState::new(0, 0).density_matrix(&spec).unwrap();
        let evo_opts = EvolveOptions {
            integrator: IntegratorOptions {
                rtol: 1e-7,
                atol: 1e-9,
                ..Default::default()
            },
            ..Default::default()
        };
        let traj = evolve(&spec, &drives, &rho0, 120.0, 40.0, &evo_opts).unwrap();
        let last = traj.last().qubit;
        for k in 0..3 {
            assert!((q[k] - last[k]).abs() < 2e-3, "{q:?} vs {last:?}");
        }
    }

    #[test]
    fn steady_state_phase_invariance() {
        let spec = SystemSpec {
            kappa_q_down: 0.02,
            ..cold_two_level()
        };
        let opts = SteadyStateOptions::default();
        let base = qubit_populations(
            &steady_state(&spec, &[DriveSpec::new(DriveKind::SigmaGe, 0.2)], &opts).unwrap(),
        );
        let rotated = DriveSpec {
            phase: 1.234,
            ..DriveSpec::new(DriveKind::SigmaGe, 0.2)
        };
        let q = qubit_populations(&steady_state(&spec, &[rotated], &opts).unwrap());
        for k in 0..3 {
            assert!((q[k] - base[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn long_time_evolution_reaches_steady_state() {
        let spec = SystemSpec {
            kappa_q_down: 0.02,
            kappa_q_up: 0.005,
            ..cold_two_level()
        };
        let drives = [DriveSpec::new(DriveKind::SigmaGe, 0.8)];
        let ss = qubit_populations(&steady_state(&spec, &drives, &Default::default()).unwrap());
        // Slowest relaxation ≈ 4g²/κ + qubit rates; run ten time constants.
        let rate = 4.0 * 0.8 * 0.8 / spec.kappa_s + 0.025;
        let t_final = 10.0 / (2.0 * PI * rate);
        let rho0 = InitialState::new(0, 0).density_matrix(&spec).unwrap();
        let traj = evolve(
            &spec,
            &drives,
            &rho0,
            t_final,
            t_final,
            &EvolveOptions::default(),
        )
        .unwrap();
        assert!((traj.last().p_g() - ss[0]).abs() < 1e-4);
    }

    #[test]
    fn initial_state_parsing() {
        assert_eq!(
            "0,g".parse::<InitialState>().unwrap(),
            InitialState::new(0, 0)
        );
        assert_eq!(
            "1, e".parse::<InitialState>().unwrap(),
            InitialState::new(1, 1)
        );
        assert_eq!(
            "0,2".parse::<InitialState>().unwrap(),
            InitialState::new(0, 2)
        );
        assert!("g".parse::<InitialState>().is_err());
        assert!("0,z".parse::<InitialState>().is_err());
        assert_eq!(InitialState::new(0, 2).to_string(), "0,f");
    }

    #[test]
    fn zero_duration_sequence() {
        let spec = cold_two_level();
        let seq = PulseSequence {
            initial_state: InitialState::new(0, 1),
            segments: vec![],
            measure_window: 0.0,
        };
        // Zero total time still needs a positive sample spacing.
        let traj = run_sequence(&spec, &seq, 0.1, &EvolveOptions::default()).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.last().qubit, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn measurement_window_decay() {
        let spec = SystemSpec {
            kappa_q_up: 0.0,
            ..SystemSpec::device_defaults()
        };
        let seq = PulseSequence {
            initial_state: InitialState::new(0, 1),
            segments: vec![],
            measure_window: 1.2,
        };
        let traj = run_sequence(&spec, &seq, 0.3, &EvolveOptions::default()).unwrap();
        let factor = (-2.0 * PI * 0.029 * 1.2f64).exp();
        assert!((traj.last().p_e() - factor).abs() < 1e-6);
    }

    #[test]
    fn sequence_times_are_continuous() {
        let spec = cold_two_level();
        let drive = vec![DriveSpec::new(DriveKind::SigmaGe, 0.2)];
        let seq = PulseSequence {
            initial_state: InitialState::new(0, 0),
            segments: vec![
                Segment {
                    duration: 0.25,
                    drives: drive.clone(),
                },
                Segment {
                    duration: 0.0,
                    drives: vec![],
                },
                Segment {
                    duration: 0.3,
                    drives: drive,
                },
            ],
            measure_window: 0.2,
        };
        let traj = run_sequence(&spec, &seq, 0.1, &EvolveOptions::default()).unwrap();
        traj.check_invariants().unwrap();
        assert!((traj.last().time - 0.75).abs() < 1e-12);
    }

    #[test]
    fn settling_time_of_exponential_decay() {
        let spec = SystemSpec {
            kappa_s: 0.0,
            kappa_q_down: 0.05,
            ..cold_two_level()
        };
        let rho0 = InitialState::new(0, 1).density_matrix(&spec).unwrap();
        let traj = evolve(&spec, &[], &rho0, 20.0, 0.01, &EvolveOptions::default()).unwrap();
        let t = settling_time(&traj, [1.0, 0.0, 0.0], 0.01, 20.0).unwrap();
        let exact = (100f64).ln() / (2.0 * PI * 0.05);
        assert!((t - exact).abs() <= 0.011, "{t} vs {exact}");
        assert!(settling_time(&traj, [1.0, 0.0, 0.0], 0.01, 5.0).is_none());
    }

    #[test]
    fn sweep_orders_results_and_keeps_failures() {
        let spec = cold_two_level();
        let seq = PulseSequence {
            initial_state: InitialState::new(0, 0),
            segments: vec![Segment {
                duration: 1.0,
                drives: vec![],
            }],
            measure_window: 0.0,
        };
        let grid = vec![
            vec![DriveSpec::new(DriveKind::SigmaGe, 0.1)],
            vec![DriveSpec::new(DriveKind::SigmaEf, 0.1)],
            vec![DriveSpec::new(DriveKind::SigmaGe, 0.3)],
        ];
        let out = sweep(&spec, &grid, &seq, 0.5, &EvolveOptions::default(), Some(2)).unwrap();
        assert_eq!(
            out.iter().map(|p| p.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert!(out[1].outcome.is_err());
        let pg = |p: &SweepPoint<Trajectory>| p.outcome.as_ref().unwrap().last().p_g();
        assert!(pg(&out[2]) < pg(&out[0]));

        let single = sweep(
            &spec,
            &grid[..1],
            &seq,
            0.5,
            &EvolveOptions::default(),
            None,
        )
        .unwrap();
        let direct =
            run_sequence(&spec, &seq.with_drives(&grid[0]), 0.5, &Default::default()).unwrap();
        assert_eq!(single[0].outcome.as_ref().unwrap().last(), direct.last());
        assert!(matches!(
            sweep(&spec, &[], &seq, 0.5, &EvolveOptions::default(), None),
            Err(Error::EmptyGrid)
        ));
    }
}
