//! JSON run configuration.
//!
//! Units: frequencies and rates in MHz (`f = ω/2π`), times in µs,
//! temperatures in mK, phases in radians. Top-level keys are `system`,
//! `drives`, `sequence`, `sweep`, `fit` and `output`; every key is optional
//! and unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analytic::{thermal_nbar, BathSpec};
use crate::dynamics::{EvolveOptions, InitialState, PulseSequence, Segment, SteadyStateOptions};
use crate::error::{Error, Result};
use crate::estimation::{FitOptions, FixedRates};
use crate::integrator::IntegratorOptions;
use crate::model::{DriveSpec, HamiltonianOptions, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub f_q: f64,
    pub f_s: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c4_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c3_s: Option<f64>,
    pub g_over_delta: f64,
    pub kappa_s: f64,
    pub kappa_q_down: f64,
    pub kappa_q_up: f64,
    pub temperature_mk: f64,
    /// Thermal SNAIL occupation; filled from `temperature_mk` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nbar_s: Option<f64>,
    pub snail_dim: usize,
    pub qubit_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stark_shift: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let d = SystemSpec::device_defaults();
        Self {
            f_q: d.f_q,
            f_s: d.f_s,
            alpha: d.alpha,
            c4_q: None,
            c3_s: None,
            g_over_delta: d.g_over_delta,
            kappa_s: d.kappa_s,
            kappa_q_down: d.kappa_q_down,
            kappa_q_up: d.kappa_q_up,
            temperature_mk: 20.0,
            nbar_s: None,
            snail_dim: d.snail_dim,
            qubit_dim: d.qubit_dim,
            stark_shift: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub duration: f64,
    /// Defaults to the top-level `drives`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drives: Option<Vec<DriveSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub initial_state: InitialState,
    pub segments: Vec<SegmentConfig>,
    pub measure_window: f64,
    pub sample_dt: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        let integ = IntegratorOptions::default();
        Self {
            initial_state: InitialState::new(0, 0),
            segments: vec![SegmentConfig {
                duration: 10.0,
                drives: None,
            }],
            measure_window: 1.2,
            sample_dt: 0.05,
            rtol: integ.rtol,
            atol: integ.atol,
        }
    }
}

/// Grid of runs. `drive_sets` lists whole drive configurations; otherwise
/// `g_eff` values are substituted into `drives[drive]`. Every drive set is
/// run from every entry of `initial_states`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drive: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub g_eff: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub drive_sets: Vec<Vec<DriveSpec>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub initial_states: Vec<InitialState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    #[default]
    TwoLevel,
    ThreeLevel,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub model: FitModel,
    #[serde(skip_serializing_if = "is_default_fixed")]
    pub fixed: FixedRates,
    pub seed: u64,
    /// Gaussian noise added to simulated populations before fitting.
    pub noise_sigma: f64,
    pub max_iterations: usize,
}

fn is_default_fixed(f: &FixedRates) -> bool {
    *f == FixedRates::default()
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: FitModel::TwoLevel,
            fixed: FixedRates::default(),
            seed: 0,
            noise_sigma: 0.0,
            max_iterations: FitOptions::default().max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub system: SystemConfig,
    pub drives: Vec<DriveSpec>,
    pub sequence: SequenceConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    pub fit: FitConfig,
    pub output: OutputConfig,
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses, fills defaults and validates. Errors carry the offending path.
pub fn parse_config(text: &str) -> Result<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    config.resolve()
}

/// Parses a JSON value (e.g. a preset merged with overrides).
pub fn parse_config_value(value: &Value) -> Result<Config> {
    parse_config(&value.to_string())
}

/// Recursively merges `patch` into `base`; objects merge key by key, every
/// other value replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn check_nonneg(path: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(config_error(path, format!("{v} must be finite and >= 0")));
    }
    Ok(())
}

fn check_positive(path: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(config_error(path, format!("{v} must be finite and > 0")));
    }
    Ok(())
}

fn check_drives(path: &str, drives: &[DriveSpec], qubit_dim: usize) -> Result<()> {
    for (i, d) in drives.iter().enumerate() {
        let p = format!("{path}[{i}]");
        check_nonneg(&format!("{p}.g_eff"), d.g_eff)?;
        if !d.phase.is_finite() {
            return Err(config_error(format!("{p}.phase"), "must be finite"));
        }
        if !d.detuning.is_finite() {
            return Err(config_error(format!("{p}.detuning"), "must be finite"));
        }
        let (to, from) = d.kind.qubit_transition();
        if to.max(from) >= qubit_dim {
            return Err(config_error(
                format!("{p}.kind"),
                format!("{} needs qubit_dim > {}", d.kind, to.max(from)),
            ));
        }
    }
    Ok(())
}

impl Config {
    /// Fills derived defaults and validates every field.
    pub fn resolve(mut self) -> Result<Self> {
        let s = &mut self.system;
        check_positive("system.f_q", s.f_q)?;
        check_positive("system.f_s", s.f_s)?;
        for (name, v) in [
            ("alpha", s.alpha),
            ("g_over_delta", s.g_over_delta),
            ("kappa_s", s.kappa_s),
            ("kappa_q_down", s.kappa_q_down),
            ("kappa_q_up", s.kappa_q_up),
            ("temperature_mk", s.temperature_mk),
        ] {
            check_nonneg(&format!("system.{name}"), v)?;
        }
        if s.snail_dim < 2 {
            return Err(config_error("system.snail_dim", "must be >= 2"));
        }
        if s.qubit_dim < 2 {
            return Err(config_error("system.qubit_dim", "must be >= 2"));
        }
        if s.nbar_s.is_none() {
            let bath = BathSpec::new(s.temperature_mk * 1e-3, s.f_s)?;
            s.nbar_s = Some(thermal_nbar(&bath));
        }
        check_nonneg("system.nbar_s", s.nbar_s.unwrap())?;
        self.system_spec()
            .validate()
            .map_err(|e| config_error("system", e.to_string()))?;

        let qd = self.system.qubit_dim;
        check_drives("drives", &self.drives, qd)?;
        let q = &self.sequence;
        for (i, seg) in q.segments.iter().enumerate() {
            check_nonneg(&format!("sequence.segments[{i}].duration"), seg.duration)?;
            if let Some(d) = &seg.drives {
                check_drives(&format!("sequence.segments[{i}].drives"), d, qd)?;
            }
        }
        check_nonneg("sequence.measure_window", q.measure_window)?;
        check_positive("sequence.sample_dt", q.sample_dt)?;
        check_positive("sequence.rtol", q.rtol)?;
        check_positive("sequence.atol", q.atol)?;
        let check_state = |path: &str, st: &InitialState| -> Result<()> {
            if st.snail >= self.system.snail_dim || st.qubit >= qd {
                return Err(config_error(
                    path,
                    format!("state {st} outside the truncation"),
                ));
            }
            Ok(())
        };
        check_state("sequence.initial_state", &q.initial_state)?;

        if let Some(sw) = &self.sweep {
            if !sw.g_eff.is_empty() && !sw.drive_sets.is_empty() {
                return Err(config_error(
                    "sweep",
                    "give either g_eff or drive_sets, not both",
                ));
            }
            if !sw.g_eff.is_empty() {
                match sw.drive {
                    Some(k) if k < self.drives.len() => {}
                    Some(k) => {
                        return Err(config_error(
                            "sweep.drive",
                            format!("index {k} but only {} drives", self.drives.len()),
                        ))
                    }
                    None => return Err(config_error("sweep.drive", "required with g_eff")),
                }
            }
            for (i, g) in sw.g_eff.iter().enumerate() {
                check_nonneg(&format!("sweep.g_eff[{i}]"), *g)?;
            }
            for (i, set) in sw.drive_sets.iter().enumerate() {
                check_drives(&format!("sweep.drive_sets[{i}]"), set, qd)?;
            }
            for (i, st) in sw.initial_states.iter().enumerate() {
                check_state(&format!("sweep.initial_states[{i}]"), st)?;
            }
        }
        check_nonneg("fit.noise_sigma", self.fit.noise_sigma)?;
        for (name, v) in [
            ("ge", self.fit.fixed.ge),
            ("eg", self.fit.fixed.eg),
            ("ef", self.fit.fixed.ef),
            ("fe", self.fit.fixed.fe),
        ] {
            if let Some(v) = v {
                check_positive(&format!("fit.fixed.{name}"), v)?;
            }
        }
        Ok(self)
    }

    pub fn system_spec(&self) -> SystemSpec {
        let s = &self.system;
        SystemSpec {
            f_q: s.f_q,
            f_s: s.f_s,
            alpha: s.alpha,
            c4_q: s.c4_q,
            c3_s: s.c3_s,
            g_over_delta: s.g_over_delta,
            kappa_s: s.kappa_s,
            kappa_q_down: s.kappa_q_down,
            kappa_q_up: s.kappa_q_up,
            nbar_s: s.nbar_s.unwrap_or(0.0),
            snail_dim: s.snail_dim,
            qubit_dim: s.qubit_dim,
        }
    }

    pub fn bath(&self) -> Result<BathSpec> {
        BathSpec::new(self.system.temperature_mk * 1e-3, self.system.f_s)
    }

    pub fn hamiltonian_options(&self) -> HamiltonianOptions {
        HamiltonianOptions {
            stark_shift: self.system.stark_shift,
        }
    }

    pub fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions {
            integrator: IntegratorOptions {
                rtol: self.sequence.rtol,
                atol: self.sequence.atol,
                ..Default::default()
            },
            hamiltonian: self.hamiltonian_options(),
        }
    }

    pub fn steady_options(&self) -> SteadyStateOptions {
        SteadyStateOptions {
            co_rotating: true,
            hamiltonian: self.hamiltonian_options(),
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.fit.max_iterations,
            ..Default::default()
        }
    }

    /// Sequence with segment drives defaulted to `drives`.
    pub fn pulse_sequence(&self, drives: &[DriveSpec], initial: InitialState) -> PulseSequence {
        PulseSequence {
            initial_state: initial,
            segments: self
                .sequence
                .segments
                .iter()
                .map(|seg| Segment {
                    duration: seg.duration,
                    drives: seg.drives.clone().unwrap_or_else(|| drives.to_vec()),
                })
                .collect(),
            measure_window: self.sequence.measure_window,
        }
    }

    /// Drive configurations to run: the sweep grid, or just `drives`.
    pub fn drive_grid(&self) -> Vec<Vec<DriveSpec>> {
        match &self.sweep {
            Some(sw) if !sw.drive_sets.is_empty() => sw.drive_sets.clone(),
            Some(sw) if !sw.g_eff.is_empty() => {
                let k = sw.drive.expect("validated");
                sw.g_eff
                    .iter()
                    .map(|&g| {
                        let mut d = self.drives.clone();
                        d[k].g_eff = g;
                        d
                    })
                    .collect()
            }
            _ => vec![self.drives.clone()],
        }
    }

    pub fn initial_states(&self) -> Vec<InitialState> {
        match &self.sweep {
            Some(sw) if !sw.initial_states.is_empty() => sw.initial_states.clone(),
            _ => vec![self.sequence.initial_state],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriveKind;

    #[test]
    fn empty_object_gives_device_defaults() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c.system.kappa_s, 12.98);
        assert_eq!(c.system.alpha, 197.0);
        assert_eq!(c.system.kappa_q_down, 0.029);
        assert_eq!(c.system.kappa_q_up, 0.006);
        assert_eq!(c.sequence.measure_window, 1.2);
        let nbar = c.system.nbar_s.unwrap();
        assert!((nbar - 4.5e-9).abs() < 0.1e-9);
    }

    #[test]
    fn round_trip_is_identical() {
        let text = r#"{
            "system": {"kappa_s": 10.0, "qubit_dim": 3, "stark_shift": 0.1},
            "drives": [{"kind": "delta_ge", "g_eff": 0.3}, {"kind": "sigma_ef", "g_eff": 1.0, "phase": 0.5}],
            "sequence": {"initial_state": "0,e", "segments": [{"duration": 2.0}, {"duration": 1.0, "drives": []}]},
            "sweep": {"drive": 0, "g_eff": [0.1, 0.2]},
            "fit": {"model": "three_level", "fixed": {"ge": 0.001}, "seed": 3}
        }"#;
        let a = parse_config(text).unwrap();
        let b = parse_config(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn errors_name_the_path() {
        let err = parse_config(r#"{"system": {"kappa_s": -1.0}}"#).unwrap_err();
        assert!(
            matches!(&err, Error::Config { path, .. } if path == "system.kappa_s"),
            "{err}"
        );
        let err = parse_config(r#"{"system": {"kappa_z": 1.0}}"#).unwrap_err();
        assert!(err.to_string().contains("kappa_z"), "{err}");
        let err = parse_config(r#"{"drives": [{"kind": "sigma_ge", "g_eff": "x"}]}"#).unwrap_err();
        assert!(
            matches!(&err, Error::Config { path, .. } if path.starts_with("drives[0]")),
            "{err}"
        );
        let err = parse_config(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = parse_config(
            r#"{"system": {"qubit_dim": 2}, "drives": [{"kind": "sigma_ef", "g_eff": 1}]}"#,
        )
        .unwrap_err();
        assert!(
            matches!(&err, Error::Config { path, .. } if path == "drives[0].kind"),
            "{err}"
        );
        let err = parse_config(r#"{"fit": {"fixed": {"eg": -0.1}}}"#).unwrap_err();
        assert!(
            matches!(&err, Error::Config { path, .. } if path == "fit.fixed.eg"),
            "{err}"
        );
        assert!(parse_config("not json").is_err());
    }

    #[test]
    fn explicit_nbar_wins() {
        let c = parse_config(r#"{"system": {"nbar_s": 0.25, "temperature_mk": 100}}"#).unwrap();
        assert_eq!(c.system_spec().nbar_s, 0.25);
    }

    #[test]
    fn grids_and_merge() {
        let mut base = serde_json::to_value(Config {
            drives: vec![DriveSpec::new(DriveKind::SigmaGe, 0.1)],
            ..Default::default()
        })
        .unwrap();
        merge_json(
            &mut base,
            &serde_json::json!({"system": {"kappa_s": 5.0}, "sweep": {"drive": 0, "g_eff": [0.1, 0.2, 0.4]}}),
        );
        let c = parse_config_value(&base).unwrap();
        assert_eq!(c.system.kappa_s, 5.0);
        assert_eq!(c.system.alpha, 197.0);
        let grid = c.drive_grid();
        assert_eq!(grid.len(), 3);
        assert_eq!(grid[2][0].g_eff, 0.4);
        assert_eq!(c.initial_states(), vec![InitialState::new(0, 0)]);
        let seq = c.pulse_sequence(&grid[1], InitialState::new(0, 1));
        assert_eq!(seq.segments[0].drives[0].g_eff, 0.2);
    }
}
