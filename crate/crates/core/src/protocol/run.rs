//! Executes a resolved configuration: trajectories, steady states, fits and
//! the JSON report.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analytic::{chemical_potential, ChemicalPotential};
use crate::dynamics::{
    evolve, par_map, qubit_populations, run_sequence, settling_time, steady_state, InitialState,
    PopulationSeries, Trajectory,
};
use crate::error::{Error, Result};
use crate::estimation::{
    add_population_noise, fit_rates_2level, fit_rates_3level, quadratic_scaling_fit, FitResult,
    ScalingFit,
};
use crate::model::{DriveKind, DriveSpec};

use super::config::{Config, FitModel};
use super::table::{emit_csv, write_atomic};

/// Settling threshold on qubit populations.
pub const SETTLING_TOL: f64 = 0.01;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyRecord {
    /// `[P_g, P_e, P_f⁺]` of the pumped fixed point.
    pub populations: [f64; 3],
    /// After free decay through the measurement window.
    pub measured: [f64; 3],
    /// Present for pure g–e pumping with `T > 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chemical_potential: Option<ChemicalPotential>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub label: String,
    pub csv: String,
    pub initial_state: InitialState,
    pub drives: Vec<DriveSpec>,
    pub drive_set: usize,
    pub final_populations: [f64; 3],
    /// Qubit populations at the end of the pump segments.
    pub pumped_populations: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady: Option<SteadyRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_error: Option<String>,
    /// Time to enter and stay within the settling tolerance of the steady
    /// populations during the pump.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settling_time_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: FitModel,
    pub trajectories: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub config_echo: Config,
    pub trajectories: Vec<TrajectoryRecord>,
    pub fits: Vec<FitRecord>,
    /// `rate = a·g² + b` over a `g_eff` sweep of a g–e pump.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingFit>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Worker cap from `BATHFORGE_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("BATHFORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

fn drive_label(drives: &[DriveSpec]) -> String {
    if drives.is_empty() {
        return "free".into();
    }
    drives
        .iter()
        .map(|d| format!("{}={}", d.kind, d.g_eff))
        .collect::<Vec<_>>()
        .join("+")
}

/// Pumped fixed point of `drives` under `config`, plus what a measurement
/// after the window would see.
pub fn steady_record(config: &Config, drives: &[DriveSpec]) -> Result<SteadyRecord> {
    let spec = config.system_spec();
    let rho = steady_state(&spec, drives, &config.steady_options())?;
    let populations = qubit_populations(&rho);
    let window = config.sequence.measure_window;
    let measured = if window > 0.0 {
        evolve(&spec, &[], &rho, window, window, &config.evolve_options())?
            .last()
            .qubit
    } else {
        populations
    };
    let ge_only = drives
        .iter()
        .all(|d| matches!(d.kind, DriveKind::SigmaGe | DriveKind::DeltaGe));
    let g = |kind| -> f64 {
        drives
            .iter()
            .filter(|d| d.kind == kind)
            .map(|d| d.g_eff * d.g_eff)
            .sum::<f64>()
            .sqrt()
    };
    let chemical_potential = match config.bath() {
        Ok(bath) if ge_only && bath.temperature > 0.0 && !drives.is_empty() => {
            chemical_potential(g(DriveKind::SigmaGe), g(DriveKind::DeltaGe), &bath).ok()
        }
        _ => None,
    };
    Ok(SteadyRecord {
        populations,
        measured,
        chemical_potential,
    })
}

fn pump_series(traj: &Trajectory, pump_end: f64) -> PopulationSeries {
    let samples: Vec<_> = traj
        .samples
        .iter()
        .filter(|s| s.time <= pump_end + 1e-9)
        .collect();
    PopulationSeries {
        times: samples.iter().map(|s| s.time).collect(),
        populations: samples.iter().map(|s| s.qubit).collect(),
    }
}

fn noisy(config: &Config, series: PopulationSeries, k: usize) -> Result<PopulationSeries> {
    if config.fit.noise_sigma > 0.0 {
        add_population_noise(
            &series,
            config.fit.noise_sigma,
            config.fit.seed.wrapping_add(k as u64),
        )
    } else {
        Ok(series)
    }
}

fn fit_record(model: FitModel, labels: Vec<String>, res: Result<FitResult>) -> FitRecord {
    match res {
        Ok(r) => FitRecord {
            model,
            trajectories: labels,
            result: Some(r),
            error: None,
        },
        Err(e) => FitRecord {
            model,
            trajectories: labels,
            result: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every (drive set × initial state) sequence, then steady states,
/// fits and, when `out_dir` is given, writes one CSV per trajectory plus
/// `report.json`.
pub fn run_config(
    config: &Config,
    preset: Option<&str>,
    out_dir: Option<&Path>,
) -> Result<RunReport> {
    let started = now();
    let spec = config.system_spec();
    let grid = config.drive_grid();
    let states = config.initial_states();
    let plan: Vec<(usize, InitialState)> = (0..grid.len())
        .flat_map(|k| states.iter().map(move |s| (k, *s)))
        .collect();
    let threads = thread_cap();
    let opts = config.evolve_options();
    let dt = config.sequence.sample_dt;

    let trajectories = par_map(&plan, threads, |(k, state)| {
        run_sequence(&spec, &config.pulse_sequence(&grid[*k], *state), dt, &opts)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let steadies = par_map(&grid, threads, |drives| steady_record(config, drives))?;

    let pump_end = config.pulse_sequence(&[], states[0]).pump_duration();
    let width = plan.len().to_string().len().max(2);
    let mut records = Vec::new();
    for (i, ((k, state), traj)) in plan.iter().zip(&trajectories).enumerate() {
        let drives = &grid[*k];
        let pumped = traj
            .samples
            .iter()
            .rfind(|s| s.time <= pump_end + 1e-9)
            .map(|s| s.qubit)
            .unwrap_or(traj.samples[0].qubit);
        let (steady, steady_error) = match &steadies[*k] {
            Ok(r) => (Some(r.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let settling = steady
            .as_ref()
            .and_then(|s| settling_time(traj, s.populations, SETTLING_TOL, pump_end));
        records.push(TrajectoryRecord {
            label: format!("{state}|{}", drive_label(drives)),
            csv: format!("trajectory_{i:0width$}.csv"),
            initial_state: *state,
            drives: drives.clone(),
            drive_set: *k,
            final_populations: traj.last().qubit,
            pumped_populations: pumped,
            steady,
            steady_error,
            settling_time_us: settling,
        });
    }

    let fit_opts = config.fit_options();
    let fixed = config.fit.fixed;
    let mut fits = Vec::new();
    match config.fit.model {
        FitModel::None => {}
        FitModel::TwoLevel => {
            let results = par_map(&(0..plan.len()).collect::<Vec<_>>(), threads, |&i| {
                noisy(config, pump_series(&trajectories[i], pump_end), i)
                    .and_then(|s| fit_rates_2level(&s, &fixed, &fit_opts))
            })?;
            for (rec, res) in records.iter().zip(results) {
                fits.push(fit_record(FitModel::TwoLevel, vec![rec.label.clone()], res));
            }
        }
        FitModel::ThreeLevel => {
            let results = par_map(&(0..grid.len()).collect::<Vec<_>>(), threads, |&k| {
                let members: Vec<usize> = (0..plan.len()).filter(|&i| plan[i].0 == k).collect();
                let series = members
                    .iter()
                    .map(|&i| noisy(config, pump_series(&trajectories[i], pump_end), i))
                    .collect::<Result<Vec<_>>>();
                (
                    members,
                    series.and_then(|s| fit_rates_3level(&s, &fixed, &fit_opts)),
                )
            })?;
            for (members, res) in results {
                let labels = members.iter().map(|&i| records[i].label.clone()).collect();
                fits.push(fit_record(FitModel::ThreeLevel, labels, res));
            }
        }
    }

    let scaling = scaling_fit(config, &grid, &records, &fits);

    let report = RunReport {
        preset: preset.map(str::to_string),
        config_echo: config.clone(),
        trajectories: records,
        fits,
        scaling,
        provenance: Provenance {
            tool: "bathforge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.fit.seed,
            started_unix: started,
            finished_unix: now(),
        },
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for (rec, traj) in report.trajectories.iter().zip(&trajectories) {
            emit_csv(traj, &dir.join(&rec.csv))?;
        }
        write_atomic(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
    }
    Ok(report)
}

/// Extracted pump rate versus swept `g_eff` for a g–e pump: `Γ_ge` for Σ,
/// `Γ_eg` for δ.
fn scaling_fit(
    config: &Config,
    grid: &[Vec<DriveSpec>],
    records: &[TrajectoryRecord],
    fits: &[FitRecord],
) -> Option<ScalingFit> {
    let sweep = config.sweep.as_ref()?;
    let k = sweep.drive?;
    if sweep.g_eff.len() < 3 || config.fit.model != FitModel::TwoLevel {
        return None;
    }
    let kind = config.drives[k].kind;
    let mut points = Vec::new();
    for (rec, fit) in records.iter().zip(fits) {
        let r = fit.result.as_ref()?;
        let rate = match kind {
            DriveKind::SigmaGe => r.params.ge,
            DriveKind::DeltaGe => r.params.eg,
            _ => return None,
        };
        points.push((grid[rec.drive_set][k].g_eff, rate));
    }
    quadratic_scaling_fit(&points).ok()
}

/// Loads `report.json` from a run directory.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let path = if path.is_dir() {
        path.join(REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))
}
