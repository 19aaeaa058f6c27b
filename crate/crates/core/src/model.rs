//! Physical parameters, rotating-frame Hamiltonians and collapse channels.
//!
//! Configuration values are `f = ω/2π` in MHz and times in µs. Everything
//! handed to the Lindblad machinery is converted to angular units (rad/µs).
//!
//! Frame: the SNAIL rotates at its own frequency and the qubit at `ω_ge`, so
//! the transmon carries the static anharmonic term `−(α/2) n(n−1)` (zero on
//! |g⟩ and |e⟩, `−α` on |f⟩) and e–f drives oscillate at `±α`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{ladder, number, projector, CMatrix, HilbertSpace, Operator, C64, ONE};

pub const SNAIL: usize = 0;
pub const QUBIT: usize = 1;

/// Default RWA cutoff, MHz.
pub const DEFAULT_RWA_CUTOFF: f64 = 500.0;

pub(crate) fn angular(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz
}

/// Physical parameters of the qubit–SNAIL system.
///
/// `alpha` is the anharmonicity magnitude; the signed anharmonicity is
/// `−alpha = −6·c4_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub f_q: f64,
    pub f_s: f64,
    pub alpha: f64,
    pub c4_q: Option<f64>,
    pub c3_s: Option<f64>,
    pub g_over_delta: f64,
    pub kappa_s: f64,
    pub kappa_q_down: f64,
    pub kappa_q_up: f64,
    pub nbar_s: f64,
    pub snail_dim: usize,
    pub qubit_dim: usize,
}

impl SystemSpec {
    /// Device and simulation parameters used for the three-level studies.
    /// `nbar_s` is the 20 mK occupation of the 8.01 GHz SNAIL.
    pub fn device_defaults() -> Self {
        let bath = crate::analytic::BathSpec {
            temperature: 0.020,
            f_s: 8010.0,
        };
        Self {
            f_q: 4520.0,
            f_s: 8010.0,
            alpha: 197.0,
            c4_q: Some(197.0 / 6.0),
            c3_s: None,
            g_over_delta: 1e-2,
            kappa_s: 12.98,
            kappa_q_down: 0.029,
            kappa_q_up: 0.006,
            nbar_s: crate::analytic::thermal_nbar(&bath),
            snail_dim: 2,
            qubit_dim: 3,
        }
    }

    /// Two-TLS model with only SNAIL loss: the cold, qubit-loss-free setting of
    /// the analytic heating solution.
    pub fn two_level(kappa_s: f64) -> Self {
        Self {
            kappa_s,
            kappa_q_down: 0.0,
            kappa_q_up: 0.0,
            nbar_s: 0.0,
            snail_dim: 2,
            qubit_dim: 2,
            ..Self::device_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let param = |name: &str, reason: String| Error::InvalidParameter {
            name: name.into(),
            reason,
        };
        for (name, v) in [("f_q", self.f_q), ("f_s", self.f_s)] {
            if !(v > 0.0) {
                return Err(param(name, format!("frequency {v} must be > 0")));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("g_over_delta", self.g_over_delta),
            ("kappa_s", self.kappa_s),
            ("kappa_q_down", self.kappa_q_down),
            ("kappa_q_up", self.kappa_q_up),
            ("nbar_s", self.nbar_s),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(param(name, format!("{v} must be finite and >= 0")));
            }
        }
        if let Some(c4) = self.c4_q {
            if (self.alpha - 6.0 * c4).abs() > 1e-9 * self.alpha.abs().max(1e-300) {
                return Err(param(
                    "c4_q",
                    format!("alpha = {} but 6·c4_q = {}", self.alpha, 6.0 * c4),
                ));
            }
        }
        if self.snail_dim < 2 || self.qubit_dim < 2 {
            return Err(param("dims", "every mode dimension must be >= 2".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<HilbertSpace> {
        HilbertSpace::snail_qubit(self.snail_dim, self.qubit_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    /// `s†|e⟩⟨g|`: two-mode squeezing on g–e ("heating").
    SigmaGe,
    /// `s†|g⟩⟨e|`: conversion on g–e ("cooling").
    DeltaGe,
    /// `s†|f⟩⟨e|`, oscillating at `+α` in the `ω_ge` frame.
    SigmaEf,
    /// `s†|e⟩⟨f|`, oscillating at `−α`.
    DeltaEf,
}

impl DriveKind {
    pub const ALL: [DriveKind; 4] = [
        DriveKind::SigmaGe,
        DriveKind::DeltaGe,
        DriveKind::SigmaEf,
        DriveKind::DeltaEf,
    ];

    /// Lower level of the addressed pair.
    pub fn lower_level(self) -> usize {
        match self {
            DriveKind::SigmaGe | DriveKind::DeltaGe => 0,
            DriveKind::SigmaEf | DriveKind::DeltaEf => 1,
        }
    }

    /// Qubit ket-bra `(to, from)` multiplied by `s†`.
    pub fn qubit_transition(self) -> (usize, usize) {
        let i = self.lower_level();
        match self {
            DriveKind::SigmaGe | DriveKind::SigmaEf => (i + 1, i),
            DriveKind::DeltaGe | DriveKind::DeltaEf => (i, i + 1),
        }
    }

    /// Residual oscillation of the `s†…` term in the rotating frame, in units
    /// of α.
    fn alpha_multiple(self) -> f64 {
        match self {
            DriveKind::SigmaGe | DriveKind::DeltaGe => 0.0,
            DriveKind::SigmaEf => 1.0,
            DriveKind::DeltaEf => -1.0,
        }
    }
}

impl fmt::Display for DriveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DriveKind::SigmaGe => "sigma_ge",
            DriveKind::DeltaGe => "delta_ge",
            DriveKind::SigmaEf => "sigma_ef",
            DriveKind::DeltaEf => "delta_ef",
        };
        f.write_str(s)
    }
}

/// A parametric pump given by its effective coupling `g/2π` (MHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub kind: DriveKind,
    pub g_eff: f64,
    #[serde(default)]
    pub phase: f64,
    /// Offset from the resonant pump frequency, MHz.
    #[serde(default)]
    pub detuning: f64,
}

impl DriveSpec {
    pub fn new(kind: DriveKind, g_eff: f64) -> Self {
        Self {
            kind,
            g_eff,
            phase: 0.0,
            detuning: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_eff >= 0.0) || !self.g_eff.is_finite() {
            return Err(Error::InvalidParameter {
                name: "g_eff".into(),
                reason: format!("{} must be finite and >= 0", self.g_eff),
            });
        }
        if !self.phase.is_finite() || !self.detuning.is_finite() {
            return Err(Error::InvalidParameter {
                name: "drive".into(),
                reason: "phase and detuning must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Physical SNAIL pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpPhysical {
    /// Drive amplitude `ε_d/2π`, MHz.
    pub epsilon_d: f64,
    /// Drive frequency, MHz.
    pub f_d: f64,
    pub phase: f64,
}

/// `β = ε_d e^{−iφ_d}/(ω_d − ω_s)`; the 2π factors cancel.
pub fn displacement_amplitude(spec: &SystemSpec, pump: &PumpPhysical) -> Result<C64> {
    if !(pump.epsilon_d >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon_d".into(),
            reason: format!("{} < 0", pump.epsilon_d),
        });
    }
    let detuning = pump.f_d - spec.f_s;
    if detuning == 0.0 {
        return Err(Error::InvalidParameter {
            name: "f_d".into(),
            reason: "pump resonant with the SNAIL; displacement diverges".into(),
        });
    }
    Ok(C64::from_polar(pump.epsilon_d / detuning, -pump.phase))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCouplings {
    /// `6·c₃·(g/Δ)·|β|`, MHz. Applies to either Σ or δ depending on the pump
    /// frequency.
    pub g_eff: f64,
    /// `24·c₄·|β|²`, MHz, added to the qubit frequency.
    pub stark_shift: f64,
}

pub fn effective_couplings(spec: &SystemSpec, pump: &PumpPhysical) -> Result<EffectiveCouplings> {
    let beta = displacement_amplitude(spec, pump)?.norm();
    let c3 = spec.c3_s.ok_or(Error::MissingParameter("c3_s"))?;
    let c4 = spec.c4_q.unwrap_or(spec.alpha / 6.0);
    Ok(EffectiveCouplings {
        g_eff: 6.0 * c3 * spec.g_over_delta * beta,
        stark_shift: 24.0 * c4 * beta * beta,
    })
}

/// Options for [`EffectiveHamiltonian`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HamiltonianOptions {
    /// Adds `2π·shift·q†q` when set (MHz).
    pub stark_shift: Option<f64>,
}

/// One drive term `c e^{iνt} A + h.c.`.
#[derive(Debug, Clone)]
pub(crate) struct DriveTerm {
    pub kind: DriveKind,
    pub coefficient: C64,
    /// rad/µs.
    pub frequency: f64,
    pub op: CMatrix,
}

/// Rotating-frame Hamiltonian `H(t) = H₀ + Σ (cₖ e^{iνₖt} Aₖ + h.c.)`.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    space: HilbertSpace,
    static_part: CMatrix,
    pub(crate) terms: Vec<DriveTerm>,
}

impl EffectiveHamiltonian {
    pub fn new(
        spec: &SystemSpec,
        drives: &[DriveSpec],
        options: HamiltonianOptions,
    ) -> Result<Self> {
        spec.validate()?;
        let space = spec.space()?;
        let n = space.total_dim();
        let nq = number(&space, QUBIT)?.into_matrix();
        let id = CMatrix::identity(n, n);
        let alpha = angular(spec.alpha);
        let mut static_part = &nq * (&nq - &id) * C64::new(-alpha / 2.0, 0.0);
        if let Some(shift) = options.stark_shift {
            static_part += &nq * C64::new(angular(shift), 0.0);
        }
        let s_dag = ladder(&space, SNAIL)?.dag();
        let mut terms = Vec::with_capacity(drives.len());
        for drive in drives {
            drive.validate()?;
            let (to, from) = drive.kind.qubit_transition();
            if to.max(from) >= spec.qubit_dim {
                return Err(Error::DriveOutOfTruncation {
                    kind: drive.kind.to_string(),
                    upper: to.max(from),
                    dim: spec.qubit_dim,
                });
            }
            let op = (&s_dag * &projector(&space, QUBIT, to, from)?).into_matrix();
            terms.push(DriveTerm {
                kind: drive.kind,
                coefficient: C64::from_polar(angular(drive.g_eff), drive.phase),
                frequency: drive.kind.alpha_multiple() * alpha + angular(drive.detuning),
                op,
            });
        }
        Ok(Self {
            space,
            static_part,
            terms,
        })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    /// True when no drive term oscillates.
    pub fn is_static(&self) -> bool {
        self.terms.iter().all(|t| t.frequency == 0.0)
    }

    pub(crate) fn static_matrix(&self) -> &CMatrix {
        &self.static_part
    }

    /// `H(t)` in rad/µs.
    pub fn matrix_at(&self, t: f64) -> CMatrix {
        let mut h = self.static_part.clone();
        for term in &self.terms {
            let c = term.coefficient * C64::from_polar(1.0, term.frequency * t);
            let a = &term.op * c;
            h += &a + a.adjoint();
        }
        h
    }

    pub fn at(&self, t: f64) -> Operator {
        Operator::new(self.space.clone(), self.matrix_at(t)).expect("shape fixed at construction")
    }
}

/// Rotating-frame Hamiltonian at time `t` (µs), default options.
pub fn build_effective_hamiltonian(
    spec: &SystemSpec,
    drives: &[DriveSpec],
    t: f64,
) -> Result<Operator> {
    Ok(EffectiveHamiltonian::new(spec, drives, HamiltonianOptions::default())?.at(t))
}

/// Collapse channels `[(κ_s(N̄+1), s), (κ_s N̄, s†), (κ↓, q), (κ↑, q†)]` with
/// rates in rad/µs; zero-rate channels are omitted.
pub fn build_dissipators(spec: &SystemSpec) -> Result<Vec<(f64, Operator)>> {
    spec.validate()?;
    let space = spec.space()?;
    let s = ladder(&space, SNAIL)?;
    let q = ladder(&space, QUBIT)?;
    let channels = [
        (spec.kappa_s * (spec.nbar_s + 1.0), s.clone()),
        (spec.kappa_s * spec.nbar_s, s.dag()),
        (spec.kappa_q_down, q.clone()),
        (spec.kappa_q_up, q.dag()),
    ];
    Ok(channels
        .into_iter()
        .filter(|(rate, _)| *rate > 0.0)
        .map(|(rate, op)| (angular(rate), op))
        .collect())
}

/// Outcome of the rotating-wave test for one term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwaDecision {
    pub keep: bool,
    /// Oscillation frequency retained in the frame (MHz); 0 for static terms.
    pub oscillation: f64,
}

/// Keep a term iff `|term_frequency| <= cutoff` (both MHz).
pub fn rwa_filter(term_frequency: f64, cutoff: f64) -> Result<RwaDecision> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidParameter {
            name: "cutoff".into(),
            reason: format!("{cutoff} must be > 0"),
        });
    }
    let keep = term_frequency.abs() <= cutoff;
    Ok(RwaDecision {
        keep,
        oscillation: if keep { term_frequency } else { 0.0 },
    })
}

/// One monomial of the cubic SNAIL nonlinearity expanded in the rotating and
/// displaced frame. Operator ordering inside the monomial is not resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingTerm {
    pub s_dag: u8,
    pub s: u8,
    pub q_dag: u8,
    pub q: u8,
    /// Powers of `β e^{−iω_d t}` and its conjugate.
    pub beta: u8,
    pub beta_conj: u8,
    /// Coefficient including `c₃`, `(g/Δ)` and `β` powers, MHz.
    pub coefficient: C64,
    /// Rotation frequency, MHz.
    pub frequency: f64,
}

impl MixingTerm {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (name, pow) in [
            ("s†", self.s_dag),
            ("s", self.s),
            ("q†", self.q_dag),
            ("q", self.q),
            ("β", self.beta),
            ("β*", self.beta_conj),
        ] {
            match pow {
                0 => {}
                1 => parts.push(name.to_string()),
                p => parts.push(format!("{name}^{p}")),
            }
        }
        parts.join(" ")
    }
}

/// Expands `c₃(s e^{−iω_s t} + (g/Δ) q e^{−iω_q t} + β e^{−iω_d t} + h.c.)³`
/// into monomials grouped by operator content.
pub fn enumerate_cubic_terms(spec: &SystemSpec, pump: &PumpPhysical) -> Result<Vec<MixingTerm>> {
    let c3 = spec.c3_s.ok_or(Error::MissingParameter("c3_s"))?;
    let beta = displacement_amplitude(spec, pump)?;
    let gd = C64::new(spec.g_over_delta, 0.0);
    // Factors: s†, s, q†, q, β, β*.
    let factors: [(C64, f64); 6] = [
        (ONE, spec.f_s),
        (ONE, -spec.f_s),
        (gd, spec.f_q),
        (gd, -spec.f_q),
        (beta, -pump.f_d),
        (beta.conj(), pump.f_d),
    ];
    let mut terms: Vec<MixingTerm> = Vec::new();
    for a in 0..6 {
        for b in 0..6 {
            for c in 0..6 {
                let mut counts = [0u8; 6];
                for k in [a, b, c] {
                    counts[k] += 1;
                }
                let coeff = factors[a].0 * factors[b].0 * factors[c].0 * c3;
                let freq = factors[a].1 + factors[b].1 + factors[c].1;
                if let Some(t) = terms
                    .iter_mut()
                    .find(|t| [t.s_dag, t.s, t.q_dag, t.q, t.beta, t.beta_conj] == counts)
                {
                    t.coefficient += coeff;
                } else {
                    terms.push(MixingTerm {
                        s_dag: counts[0],
                        s: counts[1],
                        q_dag: counts[2],
                        q: counts[3],
                        beta: counts[4],
                        beta_conj: counts[5],
                        coefficient: coeff,
                        frequency: freq,
                    });
                }
            }
        }
    }
    Ok(terms)
}

/// Terms surviving the RWA at `cutoff` MHz.
pub fn resonant_terms(terms: &[MixingTerm], cutoff: f64) -> Result<Vec<MixingTerm>> {
    let mut out = Vec::new();
    for t in terms {
        if rwa_filter(t.frequency, cutoff)?.keep {
            out.push(t.clone());
        }
    }
    Ok(out)
}
