//! Closed-form results for the parametrically coupled qubit–SNAIL system.
//!
//! Frequencies and rates are `f = ω/2π` in MHz, times in µs. A rate `Γ` in
//! MHz produces decay `e^{−2πΓt}`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{CMatrix, DensityMatrix, HilbertSpace, C64};

/// Planck constant, J·s (exact, SI 2019).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K (exact, SI 2019).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Relative window around `16g² = κ²` where the heating solution switches to
/// its critically damped limit.
pub const CRITICAL_WINDOW: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    /// Bath temperature in kelvin.
    pub temperature: f64,
    /// SNAIL frequency in MHz.
    pub f_s: f64,
}

impl BathSpec {
    pub fn new(temperature: f64, f_s: f64) -> Result<Self> {
        if !(temperature >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "temperature".into(),
                reason: format!("{temperature} < 0"),
            });
        }
        if !(f_s > 0.0) {
            return Err(Error::InvalidParameter {
                name: "f_s".into(),
                reason: format!("{f_s} <= 0"),
            });
        }
        Ok(Self { temperature, f_s })
    }

    /// `βħω_s`, infinite at zero temperature.
    pub fn reduced_energy(&self) -> f64 {
        if self.temperature == 0.0 {
            return f64::INFINITY;
        }
        PLANCK * self.f_s * 1e6 / (BOLTZMANN * self.temperature)
    }

    /// Inverse temperature `1/kT` expressed per MHz of `h·f`.
    fn inv_temp_per_mhz(&self) -> f64 {
        PLANCK * 1e6 / (BOLTZMANN * self.temperature)
    }
}

/// Semi-classical transition rates between adjacent qubit levels, MHz.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateSet {
    pub ge: f64,
    pub eg: f64,
    #[serde(default)]
    pub ef: f64,
    #[serde(default)]
    pub fe: f64,
}

impl RateSet {
    pub fn two_level(ge: f64, eg: f64) -> Self {
        Self {
            ge,
            eg,
            ef: 0.0,
            fe: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ge", self.ge),
            ("eg", self.eg),
            ("ef", self.ef),
            ("fe", self.fe),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: format!("gamma_{name}"),
                    reason: format!("rate {v} must be >= 0"),
                });
            }
        }
        Ok(())
    }

    /// Column-stochastic generator over (g, e, f) in MHz.
    pub fn generator(&self) -> Matrix3<f64> {
        Matrix3::new(
            -self.ge,
            self.eg,
            0.0,
            self.ge,
            -(self.eg + self.ef),
            self.fe,
            0.0,
            self.ef,
            -self.fe,
        )
    }
}

/// Bose occupation `1/(e^{hf/kT} − 1)`; exactly 0 at T = 0.
pub fn thermal_nbar(bath: &BathSpec) -> f64 {
    if bath.temperature == 0.0 {
        return 0.0;
    }
    1.0 / bath.reduced_energy().exp_m1()
}

/// Qubit populations `(P_g, P_e)` in the weak-coupling limit.
pub fn two_level_steady_state(g_sigma: f64, g_delta: f64, nbar: f64) -> Result<(f64, f64)> {
    check_couplings(g_sigma, g_delta)?;
    if !(nbar >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "nbar".into(),
            reason: format!("{nbar} < 0"),
        });
    }
    let s2 = g_sigma * g_sigma;
    let d2 = g_delta * g_delta;
    let denom = (s2 + d2) * (1.0 + 2.0 * nbar);
    let pg = (s2 * nbar + d2 * (1.0 + nbar)) / denom;
    let pe = (d2 * nbar + s2 * (1.0 + nbar)) / denom;
    Ok((pg, pe))
}

/// Chemical potential in two unit systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemicalPotential {
    /// `μ/h` in MHz.
    pub mhz: f64,
    /// `μ/ħω_s`.
    pub relative: f64,
}

/// `μ = (1/β) ln((g_Σ² e^{βħω_s} + g_δ²)/(g_Σ² e^{−βħω_s} + g_δ²))`.
pub fn chemical_potential(
    g_sigma: f64,
    g_delta: f64,
    bath: &BathSpec,
) -> Result<ChemicalPotential> {
    check_couplings(g_sigma, g_delta)?;
    if bath.temperature == 0.0 {
        return Err(Error::InvalidParameter {
            name: "temperature".into(),
            reason: "chemical potential needs T > 0".into(),
        });
    }
    let x = bath.reduced_energy();
    let ls = 2.0 * g_sigma.ln();
    let ld = 2.0 * g_delta.ln();
    // Log-sum-exp keeps cold baths (x ≫ 1) finite.
    let num = log_add(ls + x, ld);
    let den = log_add(ls - x, ld);
    let beta_mu = num - den;
    let relative = beta_mu / x;
    Ok(ChemicalPotential {
        mhz: relative * bath.f_s,
        relative,
    })
}

/// Grand-canonical two-level populations `(P_g, P_e)` for `μ/h` in MHz.
pub fn fermi_dirac_populations(mu_mhz: f64, bath: &BathSpec) -> Result<(f64, f64)> {
    if !(bath.temperature > 0.0) {
        return Err(Error::InvalidParameter {
            name: "temperature".into(),
            reason: "Fermi–Dirac populations need T > 0".into(),
        });
    }
    let y = bath.inv_temp_per_mhz() * (bath.f_s - mu_mhz);
    // P_g = 1/(1 + e^{−y}), written to avoid overflow for either sign.
    let pe = logistic(-y);
    let pg = logistic(y);
    Ok((pg, pe))
}

/// Diagonal qubit state `Z⁻¹ e^{−β(ω_s − μ)σᶻ/2}`, basis (g, e) with
/// `σᶻ = diag(−1, +1)`.
pub fn grand_canonical_rho(mu_mhz: f64, bath: &BathSpec) -> Result<DensityMatrix> {
    let (pg, pe) = fermi_dirac_populations(mu_mhz, bath)?;
    let space = HilbertSpace::new(vec![2], vec!["qubit".into()])?;
    let mut m = CMatrix::zeros(2, 2);
    m[(0, 0)] = C64::new(pg, 0.0);
    m[(1, 1)] = C64::new(pe, 0.0);
    DensityMatrix::new(space, m)
}

/// Coefficients and exponents of the exact two-TLS heating solution
/// `P_g(t) = Σ cₖ e^{λₖ t}` (angular units).
#[derive(Debug, Clone, Copy)]
pub struct HeatingSolution {
    pub coefficients: [Complex64; 3],
    pub exponents: [Complex64; 3],
    pub critical: bool,
    kappa: f64,
}

impl HeatingSolution {
    /// `g` and `κ` in MHz.
    pub fn new(g_sigma: f64, kappa_s: f64) -> Self {
        let g = 2.0 * PI * g_sigma;
        let k = 2.0 * PI * kappa_s;
        let g2 = g * g;
        let disc = k * k - 16.0 * g2;
        let critical = disc.abs() < CRITICAL_WINDOW * k * k;
        let root = Complex64::new(disc, 0.0).sqrt();
        let denom = 32.0 * g2 - 2.0 * k * k;
        let c1 = Complex64::new(8.0 * g2 / (16.0 * g2 - k * k), 0.0);
        let c2 = (8.0 * g2 + k * (-k + root)) / denom;
        let c3 = (8.0 * g2 - k * (k + root)) / denom;
        Self {
            coefficients: [c1, c2, c3],
            exponents: [
                Complex64::new(-k / 2.0, 0.0),
                -(k + root) / 2.0,
                -(k - root) / 2.0,
            ],
            critical,
            kappa: k,
        }
    }

    pub fn population(&self, t: f64) -> f64 {
        if self.critical {
            // 4g = κ: double root, P_g = (1 + κt/4)² e^{−κt/2}.
            let a = 1.0 + self.kappa * t / 4.0;
            return a * a * (-self.kappa * t / 2.0).exp();
        }
        let p: Complex64 = self
            .coefficients
            .iter()
            .zip(&self.exponents)
            .map(|(c, l)| c * (l * t).exp())
            .sum();
        p.re
    }
}

/// Exact `P_g(t)` for the two-TLS heating model from `|0,g⟩`; g, κ in MHz.
pub fn heating_population_analytic(g_sigma: f64, kappa_s: f64, t: f64) -> f64 {
    HeatingSolution::new(g_sigma, kappa_s).population(t)
}

/// Weak-coupling effective rate `4g²/κ` in MHz.
pub fn effective_rate(g: f64, kappa_s: f64) -> f64 {
    4.0 * g * g / kappa_s
}

/// Inverse of [`effective_rate`].
pub fn coupling_for_rate(rate: f64, kappa_s: f64) -> f64 {
    (rate * kappa_s / 4.0).sqrt()
}

/// Two-level rate model: `P_g = c₀ e^{−2π(Γ_ge+Γ_eg)t} + Γ_eg/(Γ_ge+Γ_eg)`.
pub fn semiclassical_2level(rates: &RateSet, p_g0: f64, t: f64) -> Result<(f64, f64)> {
    rates.validate()?;
    let total = rates.ge + rates.eg;
    if total == 0.0 {
        return Err(Error::InvalidParameter {
            name: "rates".into(),
            reason: "Γ_ge + Γ_eg must be > 0".into(),
        });
    }
    let p_inf = rates.eg / total;
    let pg = (p_g0 - p_inf) * (-2.0 * PI * total * t).exp() + p_inf;
    Ok((pg, 1.0 - pg))
}

/// Three-level rate model solved by matrix exponential of the generator.
pub fn semiclassical_3level(rates: &RateSet, p0: [f64; 3], t: f64) -> Result<[f64; 3]> {
    rates.validate()?;
    if p0.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidParameter {
            name: "p0".into(),
            reason: "negative probability".into(),
        });
    }
    let sum: f64 = p0.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "p0".into(),
            reason: format!("probabilities sum to {sum}"),
        });
    }
    Ok(propagate_3level(rates, p0, t))
}

/// Largest `2π·Γ·t` the three-level propagator accepts; beyond it the
/// result is NaN.
pub(crate) const MAX_RATE_TIME: f64 = 1e6;

pub(crate) fn propagate_3level(rates: &RateSet, p0: [f64; 3], t: f64) -> [f64; 3] {
    let g = rates.generator() * (2.0 * PI * t);
    // `Matrix::exp` overflows internally, and then never terminates, far
    // beyond any physical rate·time product.
    if !(g.amax() <= MAX_RATE_TIME) {
        return [f64::NAN; 3];
    }
    let prop = g.exp();
    let p = prop * Vector3::from(p0);
    [p[0], p[1], p[2]]
}

/// Stationary distribution of the three-level rate model (null vector of
/// the generator).
pub fn rate_steady_state(rates: &RateSet) -> Result<[f64; 3]> {
    rates.validate()?;
    let svd = rates.generator().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (k, smallest) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let scale = svd.singular_values.max();
    let second = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, s)| *s)
        .fold(f64::INFINITY, f64::min);
    if scale == 0.0 || second <= 1e-12 * scale || *smallest > 1e-9 * scale {
        return Err(Error::DegenerateSteadyState(
            svd.singular_values
                .iter()
                .filter(|&&s| s <= 1e-12 * scale.max(f64::MIN_POSITIVE))
                .count(),
        ));
    }
    let row = v_t.row(k);
    let sum: f64 = row.iter().sum();
    Ok([row[0] / sum, row[1] / sum, row[2] / sum])
}

fn check_couplings(g_sigma: f64, g_delta: f64) -> Result<()> {
    if !(g_sigma >= 0.0 && g_delta >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "coupling".into(),
            reason: "couplings must be >= 0".into(),
        });
    }
    if g_sigma == 0.0 && g_delta == 0.0 {
        return Err(Error::InvalidParameter {
            name: "coupling".into(),
            reason: "g_sigma and g_delta cannot both be zero".into(),
        });
    }
    Ok(())
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}
