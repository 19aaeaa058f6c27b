//! Rate extraction from population series, drive-scaling fits and inverse
//! pump design.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::analytic::{coupling_for_rate, propagate_3level, RateSet};
use crate::dynamics::{qubit_populations, steady_state, PopulationSeries, SteadyStateOptions};
use crate::error::{Error, Result};
use crate::model::{DriveKind, DriveSpec, SystemSpec};

/// Known rates held fixed during a fit (MHz).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedRates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ef: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fe: Option<f64>,
}

impl FixedRates {
    fn get(&self, k: usize) -> Option<f64> {
        [self.ge, self.eg, self.ef, self.fe][k]
    }

    fn validate(&self) -> Result<()> {
        for (k, name) in RATE_NAMES.iter().enumerate() {
            if let Some(v) = self.get(k) {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: format!("fixed.{name}"),
                        reason: format!("{v} must be finite and > 0"),
                    });
                }
            }
        }
        Ok(())
    }
}

const RATE_NAMES: [&str; 4] = ["gamma_ge", "gamma_eg", "gamma_ef", "gamma_fe"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on `‖∇½Σr²‖₂` in optimizer coordinates.
    pub gradient_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: RateSet,
    /// Initial-condition nuisance parameters: `c₀ = P_g(0)` for the
    /// two-level model, `(P_g(0), P_e(0))` per trajectory for three levels.
    pub initial_conditions: Vec<f64>,
    /// Names for `covariance_diag`, rates first (fixed rates included, with
    /// zero variance).
    pub parameter_names: Vec<String>,
    /// Variance estimates; `f64::MAX` marks an unidentifiable direction.
    pub covariance_diag: Vec<f64>,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Optimizer coordinates: log free rates, then nuisance parameters.
    pub optimizer_params: Vec<f64>,
}

/// Least-squares problem in optimizer coordinates.
trait Problem {
    fn n_params(&self) -> usize;
    fn residuals(&self, theta: &[f64], out: &mut Vec<f64>);
    fn jacobian(&self, theta: &[f64], r: &[f64]) -> DMatrix<f64> {
        let n = self.n_params();
        let mut j = DMatrix::zeros(r.len(), n);
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        let mut th = theta.to_vec();
        for k in 0..n {
            let h = 1e-6 * theta[k].abs().max(1.0);
            th[k] = theta[k] + h;
            self.residuals(&th, &mut plus);
            th[k] = theta[k] - h;
            self.residuals(&th, &mut minus);
            th[k] = theta[k];
            for i in 0..r.len() {
                j[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        j
    }
}

fn half_ssq(r: &[f64]) -> f64 {
    let s: f64 = r.iter().map(|x| x * x).sum();
    if s.is_finite() {
        0.5 * s
    } else {
        f64::INFINITY
    }
}

struct LmOutcome {
    theta: Vec<f64>,
    cost: f64,
    jacobian: DMatrix<f64>,
    n_residuals: usize,
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(p: &dyn Problem, theta0: Vec<f64>, opts: &FitOptions) -> LmOutcome {
    let mut theta = theta0;
    let mut r = Vec::new();
    p.residuals(&theta, &mut r);
    let mut cost = half_ssq(&r);
    let mut lambda = 1e-3;
    let mut trial_r = Vec::new();
    let mut iterations = 0;
    let mut j = p.jacobian(&theta, &r);
    let mut grad = j.tr_mul(&DVector::from_column_slice(&r));
    let mut converged = grad.norm() <= opts.gradient_tol;

    while !converged && iterations < opts.max_iterations && cost.is_finite() {
        iterations += 1;
        let jtj = j.tr_mul(&j);
        let floor = 1e-12 * jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(floor);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            p.residuals(&trial, &mut trial_r);
            let trial_cost = half_ssq(&trial_r);
            if trial_cost < cost {
                theta = trial;
                std::mem::swap(&mut r, &mut trial_r);
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        j = p.jacobian(&theta, &r);
        grad = j.tr_mul(&DVector::from_column_slice(&r));
        converged = grad.norm() <= opts.gradient_tol;
        if !accepted {
            // No downhill step exists at working precision.
            break;
        }
    }
    LmOutcome {
        n_residuals: r.len(),
        gradient_norm: grad.norm(),
        theta,
        cost,
        jacobian: j,
        iterations,
        converged,
    }
}

/// Diagonal of `σ²(JᵀJ)⁻¹`; directions with vanishing curvature give
/// `f64::MAX` on every parameter they touch.
fn covariance_diagonal(j: &DMatrix<f64>, cost: f64, n_res: usize) -> Vec<f64> {
    let n = j.ncols();
    let dof = n_res.saturating_sub(n).max(1) as f64;
    let sigma2 = 2.0 * cost / dof;
    let Some(eig) = j.tr_mul(j).try_symmetric_eigen(f64::EPSILON, 10_000) else {
        return vec![f64::MAX; n];
    };
    let s_max = eig.eigenvalues.amax();
    (0..n)
        .map(|i| {
            let mut var = 0.0;
            for k in 0..n {
                let v = eig.eigenvectors[(i, k)];
                let s = eig.eigenvalues[k];
                if s <= 1e-12 * s_max {
                    if v.abs() > 1e-6 {
                        return f64::MAX;
                    }
                    continue;
                }
                var += v * v / s;
            }
            sigma2 * var
        })
        .collect()
}

fn validate_series(series: &PopulationSeries, min_points: usize) -> Result<()> {
    if series.times.len() != series.populations.len() {
        return Err(Error::InvalidData(
            "times and populations differ in length".into(),
        ));
    }
    if series.len() < min_points {
        return Err(Error::InvalidData(format!(
            "need at least {min_points} time points, got {}",
            series.len()
        )));
    }
    for w in series.times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidData(
                "times must be strictly increasing".into(),
            ));
        }
    }
    for (t, p) in series.times.iter().zip(&series.populations) {
        if !t.is_finite() || p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite sample at t = {t}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidData(format!(
                "populations at t = {t} sum to {sum}"
            )));
        }
    }
    Ok(())
}

/// Shared layout: free rates (log) first, then nuisance parameters.
struct Layout {
    fixed: FixedRates,
    free: Vec<usize>,
}

impl Layout {
    fn new(fixed: &FixedRates, n_rates: usize) -> Self {
        Self {
            fixed: *fixed,
            free: (0..n_rates).filter(|&k| fixed.get(k).is_none()).collect(),
        }
    }

    fn rates(&self, theta: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            if let Some(v) = self.fixed.get(k) {
                *o = v;
            }
        }
        for (i, &k) in self.free.iter().enumerate() {
            out[k] = theta[i].exp();
        }
        out
    }
}

struct TwoLevel<'a> {
    series: &'a PopulationSeries,
    layout: Layout,
}

impl TwoLevel<'_> {
    fn model(&self, theta: &[f64]) -> ([f64; 4], f64) {
        (self.layout.rates(theta), theta[self.layout.free.len()])
    }
}

impl Problem for TwoLevel<'_> {
    fn n_params(&self) -> usize {
        self.layout.free.len() + 1
    }

    fn residuals(&self, theta: &[f64], out: &mut Vec<f64>) {
        let (rates, c0) = self.model(theta);
        let total = rates[0] + rates[1];
        let p_inf = rates[1] / total;
        out.clear();
        for (t, p) in self.series.times.iter().zip(&self.series.populations) {
            let model = (c0 - p_inf) * (-2.0 * PI * total * t).exp() + p_inf;
            out.push(model - p[0]);
        }
    }

    fn jacobian(&self, theta: &[f64], r: &[f64]) -> DMatrix<f64> {
        let (rates, c0) = self.model(theta);
        let (ge, eg) = (rates[0], rates[1]);
        let total = ge + eg;
        let p_inf = eg / total;
        let dp = [-eg / (total * total), ge / (total * total)];
        let mut j = DMatrix::zeros(r.len(), self.n_params());
        for (i, t) in self.series.times.iter().enumerate() {
            let e = (-2.0 * PI * total * t).exp();
            let d_total = -2.0 * PI * t * (c0 - p_inf) * e;
            for (col, &k) in self.layout.free.iter().enumerate() {
                // d/d ln Γ = Γ d/dΓ
                j[(i, col)] = rates[k] * (dp[k] * (1.0 - e) + d_total);
            }
            j[(i, self.layout.free.len())] = e;
        }
        j
    }
}

/// Equilibrium starting point `Γ_eg/(Γ_ge + Γ_eg) ≈ P_g(end)`, at four total
/// rates spanning the observation window.
fn two_level_guesses(series: &PopulationSeries, layout: &Layout) -> Vec<Vec<f64>> {
    let span = series.times.last().unwrap() - series.times[0];
    let p_end = series.populations.last().unwrap()[0].clamp(0.02, 0.98);
    let c0 = series.populations[0][0];
    [0.3, 1.0, 3.0, 10.0]
        .iter()
        .map(|k| {
            let total = k / (2.0 * PI * span);
            let guess = [(1.0 - p_end) * total, p_end * total];
            let mut theta: Vec<f64> = layout.free.iter().map(|&i| guess[i].ln()).collect();
            theta.push(c0);
            theta
        })
        .collect()
}

fn best_of(p: &dyn Problem, starts: Vec<Vec<f64>>, opts: &FitOptions) -> LmOutcome {
    starts
        .into_iter()
        .map(|s| levenberg_marquardt(p, s, opts))
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("at least one start")
}

fn assemble(
    outcome: LmOutcome,
    layout: &Layout,
    n_rates: usize,
    nuisance_names: Vec<String>,
) -> FitResult {
    let rates = layout.rates(&outcome.theta);
    let cov_theta = covariance_diagonal(&outcome.jacobian, outcome.cost, outcome.n_residuals);
    let mut names: Vec<String> = RATE_NAMES[..n_rates]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut cov = vec![0.0; n_rates];
    for (i, &k) in layout.free.iter().enumerate() {
        let c = cov_theta[i];
        cov[k] = if c == f64::MAX {
            c
        } else {
            rates[k] * rates[k] * c
        };
    }
    let nf = layout.free.len();
    cov.extend_from_slice(&cov_theta[nf..]);
    names.extend(nuisance_names);
    FitResult {
        params: RateSet {
            ge: rates[0],
            eg: rates[1],
            ef: rates[2],
            fe: rates[3],
        },
        initial_conditions: outcome.theta[nf..].to_vec(),
        parameter_names: names,
        covariance_diag: cov,
        residual_rms: (2.0 * outcome.cost / outcome.n_residuals as f64).sqrt(),
        converged: outcome.converged,
        iterations: outcome.iterations,
        gradient_norm: outcome.gradient_norm,
        optimizer_params: outcome.theta,
    }
}

/// Fits `P_g(t) = (c₀ − p∞) e^{−2π(Γ_ge+Γ_eg)t} + p∞`, `p∞ = Γ_eg/(Γ_ge+Γ_eg)`.
/// Non-convergence is reported through `converged`, with the best parameters
/// found.
pub fn fit_rates_2level(
    series: &PopulationSeries,
    fixed: &FixedRates,
    opts: &FitOptions,
) -> Result<FitResult> {
    validate_series(series, 5)?;
    fixed.validate()?;
    if fixed.ef.is_some() || fixed.fe.is_some() {
        return Err(Error::InvalidParameter {
            name: "fixed".into(),
            reason: "the two-level model has no e–f rates".into(),
        });
    }
    let layout = Layout::new(fixed, 2);
    let problem = TwoLevel {
        series,
        layout: Layout::new(fixed, 2),
    };
    let outcome = best_of(&problem, two_level_guesses(series, &layout), opts);
    Ok(assemble(outcome, &layout, 2, vec!["c0".into()]))
}

/// Objective `½Σr²` of the two-level fit at optimizer coordinates `theta`.
pub fn objective_2level(series: &PopulationSeries, fixed: &FixedRates, theta: &[f64]) -> f64 {
    let problem = TwoLevel {
        series,
        layout: Layout::new(fixed, 2),
    };
    let mut r = Vec::new();
    problem.residuals(theta, &mut r);
    half_ssq(&r)
}

struct ThreeLevel<'a> {
    series: &'a [PopulationSeries],
    layout: Layout,
}

impl Problem for ThreeLevel<'_> {
    fn n_params(&self) -> usize {
        self.layout.free.len() + 2 * self.series.len()
    }

    fn residuals(&self, theta: &[f64], out: &mut Vec<f64>) {
        let r = self.layout.rates(theta);
        let rates = RateSet {
            ge: r[0],
            eg: r[1],
            ef: r[2],
            fe: r[3],
        };
        let nf = self.layout.free.len();
        out.clear();
        for (k, s) in self.series.iter().enumerate() {
            let (pg, pe) = (theta[nf + 2 * k], theta[nf + 2 * k + 1]);
            let p0 = [pg, pe, 1.0 - pg - pe];
            for (t, p) in s.times.iter().zip(&s.populations) {
                let m = propagate_3level(&rates, p0, *t);
                for l in 0..3 {
                    out.push(m[l] - p[l]);
                }
            }
        }
    }
}

/// Joint fit of the three-level rate equations over one or more
/// trajectories, each with its own initial populations.
pub fn fit_rates_3level(
    series: &[PopulationSeries],
    fixed: &FixedRates,
    opts: &FitOptions,
) -> Result<FitResult> {
    if series.is_empty() {
        return Err(Error::InvalidData("no trajectories to fit".into()));
    }
    for s in series {
        validate_series(s, 5)?;
    }
    fixed.validate()?;
    let layout = Layout::new(fixed, 4);
    let problem = ThreeLevel {
        series,
        layout: Layout::new(fixed, 4),
    };
    let t0 = series
        .iter()
        .map(|s| s.times[0])
        .fold(f64::INFINITY, f64::min);
    let t1 = series
        .iter()
        .map(|s| *s.times.last().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let span = t1 - t0;
    let starts = [0.3, 1.0, 3.0, 10.0]
        .iter()
        .map(|k| {
            let rate = k / (2.0 * PI * span);
            let mut theta: Vec<f64> = layout.free.iter().map(|_| rate.ln()).collect();
            for s in series {
                theta.push(s.populations[0][0]);
                theta.push(s.populations[0][1]);
            }
            theta
        })
        .collect();
    let outcome = best_of(&problem, starts, opts);
    let names = (0..series.len())
        .flat_map(|k| [format!("p_g0[{k}]"), format!("p_e0[{k}]")])
        .collect();
    Ok(assemble(outcome, &layout, 4, names))
}

/// Objective `½Σr²` of the three-level fit at optimizer coordinates `theta`.
pub fn objective_3level(series: &[PopulationSeries], fixed: &FixedRates, theta: &[f64]) -> f64 {
    let problem = ThreeLevel {
        series,
        layout: Layout::new(fixed, 4),
    };
    let mut r = Vec::new();
    problem.residuals(theta, &mut r);
    half_ssq(&r)
}

/// `rate = a·V² + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub coefficient: f64,
    pub offset: f64,
    pub r_squared: f64,
}

pub fn quadratic_scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InvalidData(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(v, r)| !v.is_finite() || !r.is_finite()) {
        return Err(Error::InvalidData("non-finite scaling point".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(v, _)| v * v).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|(_, r)| r).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(points)
        .map(|(x, (_, y))| (x - mx) * (y - my))
        .sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidData(
            "all drive amplitudes have the same magnitude".into(),
        ));
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(ScalingFit {
        coefficient: a,
        offset: b,
        r_squared,
    })
}

/// Additive Gaussian noise on every populated level, then renormalization.
/// Levels that are identically zero across the series stay zero.
pub fn add_population_noise(
    series: &PopulationSeries,
    sigma: f64,
    seed: u64,
) -> Result<PopulationSeries> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter {
        name: "noise_sigma".into(),
        reason: e.to_string(),
    })?;
    let mut rng = StdRng::seed_from_u64(seed);
    let active: Vec<bool> = (0..3)
        .map(|l| series.populations.iter().any(|p| p[l] != 0.0))
        .collect();
    let populations = series
        .populations
        .iter()
        .map(|p| {
            let mut q = *p;
            for l in 0..3 {
                if active[l] {
                    q[l] += normal.sample(&mut rng);
                }
            }
            let sum: f64 = q.iter().sum();
            q.map(|x| x / sum)
        })
        .collect();
    Ok(PopulationSeries {
        times: series.times.clone(),
        populations,
    })
}

/// Rate-equation trajectory sampled at `times`.
pub fn synthetic_series(rates: &RateSet, p0: [f64; 3], times: &[f64]) -> Result<PopulationSeries> {
    rates.validate()?;
    Ok(PopulationSeries {
        times: times.to_vec(),
        populations: times
            .iter()
            .map(|&t| propagate_3level(rates, p0, t))
            .collect(),
    })
}

/// Drive strengths realising a target qubit distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpDesign {
    pub drives: Vec<DriveSpec>,
    /// Two-level designs: `g_Σ/g_δ`.
    pub ratio: Option<f64>,
    /// Forward steady-state populations over the target levels.
    pub achieved: Vec<f64>,
    pub max_error: f64,
}

/// `g_Σ/g_δ = √(((1+N̄)P_e − N̄P_g)/((1+N̄)P_g − N̄P_e))`.
pub fn two_level_pump_ratio(p_g: f64, p_e: f64, nbar: f64) -> Result<f64> {
    check_target(&[p_g, p_e])?;
    let num = (1.0 + nbar) * p_e - nbar * p_g;
    let den = (1.0 + nbar) * p_g - nbar * p_e;
    if !(num >= 0.0 && den > 0.0) {
        return Err(Error::Infeasible(format!(
            "target ({p_g}, {p_e}) is hotter than the bath allows at N̄ = {nbar}"
        )));
    }
    Ok((num / den).sqrt())
}

fn check_target(target: &[f64]) -> Result<()> {
    if !(2..=3).contains(&target.len()) {
        return Err(Error::InvalidParameter {
            name: "target".into(),
            reason: format!("expected 2 or 3 populations, got {}", target.len()),
        });
    }
    if target.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Infeasible(format!(
            "target entries must lie strictly inside (0, 1): {target:?}"
        )));
    }
    let sum: f64 = target.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "target".into(),
            reason: format!("populations sum to {sum}"),
        });
    }
    Ok(())
}

const DESIGN_TOL: f64 = 1e-4;
const BISECTION_STEPS: usize = 100;

fn design_opts() -> SteadyStateOptions {
    SteadyStateOptions {
        co_rotating: true,
        ..Default::default()
    }
}

fn forward(spec: &SystemSpec, drives: &[DriveSpec]) -> Result<[f64; 3]> {
    Ok(qubit_populations(&steady_state(
        spec,
        drives,
        &design_opts(),
    )?))
}

/// Bisects `f(x) = 0` on `[lo, hi]` for increasing `f`.
fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo.abs() <= tol {
        return Ok(lo);
    }
    if f_hi.abs() <= tol {
        return Ok(hi);
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::Infeasible(
            "target is outside the reachable range for this budget".into(),
        ));
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if v.abs() <= tol {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        iterations: BISECTION_STEPS,
    })
}

/// Secant iteration on `f(x) = 0` from `x0`, assuming unit slope for the
/// first step and staying inside `[lo, hi]`.
fn secant<F>(mut f: F, x0: f64, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x_prev = x0;
    let mut f_prev = f(x0)?;
    if f_prev.abs() <= tol {
        return Ok(x0);
    }
    let mut x = (x0 - f_prev).clamp(lo, hi);
    for _ in 0..30 {
        let fx = f(x)?;
        if fx.abs() <= tol {
            return Ok(x);
        }
        let slope = (fx - f_prev) / (x - x_prev);
        if !(slope > 0.0) || !slope.is_finite() {
            break;
        }
        x_prev = x;
        f_prev = fx;
        x = (x - fx / slope).clamp(lo, hi);
    }
    Err(Error::NoConvergence { iterations: 30 })
}

fn two_level_drives(kappa_s: f64, budget: f64, sigma_fraction: f64) -> Vec<DriveSpec> {
    vec![
        DriveSpec::new(
            DriveKind::SigmaGe,
            coupling_for_rate(sigma_fraction * budget, kappa_s),
        ),
        DriveSpec::new(
            DriveKind::DeltaGe,
            coupling_for_rate((1.0 - sigma_fraction) * budget, kappa_s),
        ),
    ]
}

/// Inverse design of pump strengths for a target qubit distribution, with
/// the summed effective pump rate `Γ_Σ + Γ_δ = 4(g_Σ² + g_δ²)/κ_s` bounded by
/// `budget` (MHz).
///
/// Two-entry targets act on the g–e manifold (qubit truncated to two
/// levels). Three-entry targets need nonzero intrinsic qubit rates and pick
/// one pump per link.
pub fn design_pumps(target: &[f64], spec: &SystemSpec, budget: f64) -> Result<PumpDesign> {
    check_target(target)?;
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidParameter {
            name: "budget".into(),
            reason: format!("{budget} must be finite and > 0"),
        });
    }
    spec.validate()?;
    if target.len() == 2 {
        design_two_level(target[0], target[1], spec, budget)
    } else {
        design_three_level([target[0], target[1], target[2]], spec, budget)
    }
}

fn design_two_level(p_g: f64, p_e: f64, spec: &SystemSpec, budget: f64) -> Result<PumpDesign> {
    let spec = SystemSpec {
        qubit_dim: 2,
        ..spec.clone()
    };
    let nbar = spec.nbar_s;
    let ratio = two_level_pump_ratio(p_g, p_e, nbar)?;
    // Rate-balance guess including intrinsic qubit rates.
    let r = p_e / p_g;
    let sigma_rate =
        (r * (budget * (1.0 + nbar) + spec.kappa_q_down) - budget * nbar - spec.kappa_q_up)
            / (1.0 + r);
    let guess = if spec.kappa_q_down == 0.0 && spec.kappa_q_up == 0.0 {
        ratio * ratio / (1.0 + ratio * ratio)
    } else {
        (sigma_rate / budget).clamp(0.0, 1.0)
    };
    let error = |fraction: f64| -> Result<f64> {
        Ok(forward(&spec, &two_level_drives(spec.kappa_s, budget, fraction))?[1] - p_e)
    };
    // Without intrinsic qubit rates a lone pump, or two equal pumps, has a
    // degenerate fixed point, so the search starts at the rate-model guess
    // and stays inside (0, 1).
    let fraction = match secant(
        error,
        guess.clamp(1e-6, 1.0 - 1e-6),
        1e-6,
        1.0 - 1e-6,
        0.5 * DESIGN_TOL,
    ) {
        Ok(x) => x,
        Err(_) => bisect(error, 1e-6, 1.0 - 3e-6, 0.5 * DESIGN_TOL)?,
    };
    let drives = two_level_drives(spec.kappa_s, budget, fraction);
    let achieved = forward(&spec, &drives)?;
    let max_error = (achieved[0] - p_g).abs().max((achieved[1] - p_e).abs());
    Ok(PumpDesign {
        ratio: Some(drives[0].g_eff / drives[1].g_eff),
        drives,
        achieved: achieved[..2].to_vec(),
        max_error,
    })
}

fn design_three_level(target: [f64; 3], spec: &SystemSpec, budget: f64) -> Result<PumpDesign> {
    if spec.qubit_dim < 3 {
        return Err(Error::InvalidParameter {
            name: "qubit_dim".into(),
            reason: "three-level targets need qubit_dim >= 3".into(),
        });
    }
    if spec.kappa_q_down == 0.0 || spec.kappa_q_up == 0.0 {
        return Err(Error::Infeasible(
            "three-level design needs nonzero intrinsic qubit rates".into(),
        ));
    }
    let intrinsic = spec.kappa_q_up / spec.kappa_q_down;
    let ge_kind = if target[1] / target[0] > intrinsic {
        DriveKind::SigmaGe
    } else {
        DriveKind::DeltaGe
    };
    let ef_kind = if target[2] / target[1] > intrinsic {
        DriveKind::SigmaEf
    } else {
        DriveKind::DeltaEf
    };
    let drives_for = |ge: f64, ef: f64| {
        vec![
            DriveSpec::new(ge_kind, coupling_for_rate(ge, spec.kappa_s)),
            DriveSpec::new(ef_kind, coupling_for_rate(ef, spec.kappa_s)),
        ]
    };
    // Pump direction signs: raising a heating pump increases the upper
    // population ratio, raising a cooling pump decreases it.
    let s_ge = if ge_kind == DriveKind::SigmaGe {
        1.0
    } else {
        -1.0
    };
    let s_ef = if ef_kind == DriveKind::SigmaEf {
        1.0
    } else {
        -1.0
    };
    let ln_ratio = |a: f64, b: f64| (a / b).ln();
    let target_eg = ln_ratio(target[1], target[0]);
    let target_fe = ln_ratio(target[2], target[1]);
    let tol = 0.25 * DESIGN_TOL;

    let inner = |ge: f64| -> Result<f64> {
        bisect(
            |ef| {
                let p = forward(spec, &drives_for(ge, ef))?;
                Ok(s_ef * (ln_ratio(p[2], p[1]) - target_fe))
            },
            0.0,
            budget,
            tol,
        )
    };
    let ge = bisect(
        |ge| {
            let ef = inner(ge)?;
            let p = forward(spec, &drives_for(ge, ef))?;
            Ok(s_ge * (ln_ratio(p[1], p[0]) - target_eg))
        },
        0.0,
        budget,
        tol,
    )?;
    let ef = inner(ge)?;
    let drives = drives_for(ge, ef);
    let achieved = forward(spec, &drives)?;
    let max_error = (0..3)
        .map(|k| (achieved[k] - target[k]).abs())
        .fold(0.0, f64::max);
    Ok(PumpDesign {
        drives,
        ratio: None,
        achieved: achieved.to_vec(),
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::effective_rate;
    use crate::dynamics::{evolve, EvolveOptions, InitialState};

    fn times(n: usize, t_end: f64) -> Vec<f64> {
        (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn two_level_round_trip_noiseless() {
        let rates = RateSet::two_level(0.05, 0.02);
        let series = synthetic_series(&rates, [1.0, 0.0, 0.0], &times(80, 15.0)).unwrap();
        let fit =
            fit_rates_2level(&series, &FixedRates::default(), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(
            rel(fit.params.ge, 0.05) < 1e-6 && rel(fit.params.eg, 0.02) < 1e-6,
            "{fit:?}"
        );
        assert!((fit.initial_conditions[0] - 1.0).abs() < 1e-6);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn two_level_fit_is_deterministic() {
        let rates = RateSet::two_level(0.03, 0.04);
        let clean = synthetic_series(&rates, [0.0, 1.0, 0.0], &times(60, 20.0)).unwrap();
        let noisy = add_population_noise(&clean, 0.01, 7).unwrap();
        let a = fit_rates_2level(&noisy, &FixedRates::default(), &FitOptions::default()).unwrap();
        let b = fit_rates_2level(&noisy, &FixedRates::default(), &FitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(
            rel(a.params.ge, 0.03) < 0.05 && rel(a.params.eg, 0.04) < 0.05,
            "{a:?}"
        );
    }

    #[test]
    fn fixed_rate_is_respected() {
        let rates = RateSet::two_level(0.05, 0.02);
        let series = synthetic_series(&rates, [1.0, 0.0, 0.0], &times(40, 15.0)).unwrap();
        let fixed = FixedRates {
            eg: Some(0.02),
            ..Default::default()
        };
        let fit = fit_rates_2level(&series, &fixed, &FitOptions::default()).unwrap();
        assert_eq!(fit.params.eg, 0.02);
        assert_eq!(fit.covariance_diag[1], 0.0);
        assert!(rel(fit.params.ge, 0.05) < 1e-6);
    }

    #[test]
    fn flat_trajectory_is_unidentifiable() {
        let series = PopulationSeries::new(times(20, 10.0), vec![[0.3, 0.7, 0.0]; 20]).unwrap();
        let fit =
            fit_rates_2level(&series, &FixedRates::default(), &FitOptions::default()).unwrap();
        let p = fit.params.eg / (fit.params.ge + fit.params.eg);
        assert!((p - 0.3).abs() < 1e-9);
        assert!(fit.covariance_diag[0] > 1e10 && fit.covariance_diag[1] > 1e10);
    }

    #[test]
    fn fit_rejects_bad_series() {
        let opts = FitOptions::default();
        let few = PopulationSeries::new(times(4, 1.0), vec![[1.0, 0.0, 0.0]; 4]).unwrap();
        assert!(fit_rates_2level(&few, &FixedRates::default(), &opts).is_err());
        let zeros = PopulationSeries::new(times(10, 1.0), vec![[0.0; 3]; 10]).unwrap();
        assert!(fit_rates_3level(&[zeros], &FixedRates::default(), &opts).is_err());
        assert!(fit_rates_3level(&[], &FixedRates::default(), &opts).is_err());
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let rates = RateSet::two_level(0.04, 0.01);
        let clean = synthetic_series(&rates, [1.0, 0.0, 0.0], &times(50, 20.0)).unwrap();
        let noisy = add_population_noise(&clean, 0.01, 3).unwrap();
        let fixed = FixedRates::default();
        let fit = fit_rates_2level(&noisy, &fixed, &FitOptions::default()).unwrap();
        let theta = &fit.optimizer_params;
        let h = 1e-6;
        let mut g2 = 0.0;
        for k in 0..theta.len() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[k] += h;
            m[k] -= h;
            let d = (objective_2level(&noisy, &fixed, &p) - objective_2level(&noisy, &fixed, &m))
                / (2.0 * h);
            g2 += d * d;
        }
        assert!(g2.sqrt() <= 1e-6, "{}", g2.sqrt());
    }

    #[test]
    fn three_level_round_trip() {
        let rates = RateSet {
            ge: 0.01,
            eg: 0.04,
            ef: 0.02,
            fe: 0.06,
        };
        let t = times(60, 40.0);
        let data: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
            .iter()
            .map(|p0| synthetic_series(&rates, *p0, &t).unwrap())
            .collect();
        let fit = fit_rates_3level(&data, &FixedRates::default(), &FitOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        for (a, b) in [
            (fit.params.ge, rates.ge),
            (fit.params.eg, rates.eg),
            (fit.params.ef, rates.ef),
            (fit.params.fe, rates.fe),
        ] {
            assert!(rel(a, b) < 1e-5, "{a} vs {b}");
        }
        assert_eq!(fit.parameter_names.len(), 4 + 6);
    }

    #[test]
    fn heating_simulation_matches_effective_rate() {
        let spec = SystemSpec::two_level(12.98);
        let g = 0.01 * spec.kappa_s;
        let gamma = effective_rate(g, spec.kappa_s);
        let t_end = 4.0 / (2.0 * PI * gamma);
        let rho0 = InitialState::new(0, 0).density_matrix(&spec).unwrap();
        let traj = evolve(
            &spec,
            &[DriveSpec::new(DriveKind::SigmaGe, g)],
            &rho0,
            t_end,
            t_end / 60.0,
            &EvolveOptions::default(),
        )
        .unwrap();
        let fixed = FixedRates {
            eg: Some(1e-9),
            ..Default::default()
        };
        let fit = fit_rates_2level(&traj.qubit_series(), &fixed, &FitOptions::default()).unwrap();
        assert!(
            rel(fit.params.ge, gamma) < 0.02,
            "{} vs {gamma}",
            fit.params.ge
        );
    }

    #[test]
    fn scaling_fit_cases() {
        let pts: Vec<_> = [0.1, 0.2, 0.3, 0.5]
            .iter()
            .map(|v| (*v, 2.0 * v * v + 0.1))
            .collect();
        let fit = quadratic_scaling_fit(&pts).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.coefficient - 2.0).abs() < 1e-12 && (fit.offset - 0.1).abs() < 1e-12);

        let mut rev = pts.clone();
        rev.reverse();
        let back = quadratic_scaling_fit(&rev).unwrap();
        assert!((back.coefficient - fit.coefficient).abs() < 1e-12);

        let flat = quadratic_scaling_fit(&[(0.1, 3.0), (0.2, 3.0), (0.3, 3.0)]).unwrap();
        assert!(flat.coefficient.abs() < 1e-12 && flat.r_squared < 1e-12);
        assert!(quadratic_scaling_fit(&pts[..2]).is_err());
    }

    #[test]
    fn noise_is_seeded_and_normalized() {
        let rates = RateSet::two_level(0.05, 0.02);
        let clean = synthetic_series(&rates, [1.0, 0.0, 0.0], &times(10, 5.0)).unwrap();
        let a = add_population_noise(&clean, 0.01, 11).unwrap();
        let b = add_population_noise(&clean, 0.01, 11).unwrap();
        assert_eq!(a, b);
        for p in &a.populations {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn pump_ratio_examples() {
        assert!((two_level_pump_ratio(0.5, 0.5, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((two_level_pump_ratio(0.2, 0.8, 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(two_level_pump_ratio(1.0, 0.0, 0.0).is_err());
        // Colder than the bath is always reachable; hotter than infinite
        // temperature is not.
        assert!(two_level_pump_ratio(0.4, 0.6, 0.0).is_ok());
        assert!(design_pumps(&[1.0, 0.0], &SystemSpec::two_level(12.98), 0.01).is_err());
        assert!(design_pumps(&[0.3, 0.3], &SystemSpec::two_level(12.98), 0.01).is_err());
    }

    #[test]
    fn two_level_design_round_trip() {
        let spec = SystemSpec::two_level(12.98);
        for target in [[0.2, 0.8], [0.9, 0.1]] {
            let design = design_pumps(&target, &spec, 0.01).unwrap();
            assert!(design.max_error <= 1e-3, "{target:?}: {design:?}");
        }
        // Equal pumps on a lossless qubit conserve σx: no unique fixed point.
        assert!(matches!(
            design_pumps(&[0.5, 0.5], &spec, 0.01),
            Err(Error::DegenerateSteadyState(_))
        ));
        let natural = SystemSpec::device_defaults();
        for target in [[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]] {
            let design = design_pumps(&target, &natural, 0.5).unwrap();
            assert!(design.max_error <= 1e-4, "{target:?}: {design:?}");
        }
    }

    #[test]
    fn three_level_design_round_trip() {
        let spec = SystemSpec {
            snail_dim: 2,
            ..SystemSpec::device_defaults()
        };
        let target = [0.4, 0.2, 0.4];
        let design = design_pumps(&target, &spec, 1.0).unwrap();
        assert_eq!(design.drives[0].kind, DriveKind::SigmaGe);
        assert_eq!(design.drives[1].kind, DriveKind::SigmaEf);
        assert!(design.max_error <= 1e-2, "{design:?}");
        let cold = SystemSpec {
            kappa_q_up: 0.0,
            ..spec
        };
        assert!(matches!(
            design_pumps(&target, &cold, 1.0),
            Err(Error::Infeasible(_))
        ));
    }
}
