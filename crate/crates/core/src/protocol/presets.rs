//! Named experiment templates.
//!
//! Pump strengths are backed out of quoted rate ratios with `Γ = 4g²/κ_s`;
//! the absolute couplings are not measured values.

use std::path::Path;

use serde_json::Value;

use crate::analytic::coupling_for_rate;
use crate::dynamics::InitialState;
use crate::error::{Error, Result};
use crate::model::{DriveKind, DriveSpec};

use super::config::{
    merge_json, parse_config_value, Config, FitModel, SegmentConfig, SequenceConfig, SweepConfig,
    SystemConfig,
};
use super::run::{run_config, RunReport};

pub const PRESET_NAMES: [&str; 5] = [
    "heating_ge",
    "cooling_ge",
    "balanced_ge",
    "gf_mix",
    "natural_decay",
];

/// Natural transmon rates (MHz) for the g–e pump experiments.
pub const NATURAL_GE: f64 = 0.00122;
pub const NATURAL_EG: f64 = 0.00828;
/// SNAIL linewidth, MHz.
pub const KAPPA_S: f64 = 12.98;

/// `Γᵖ_ge/Γᴺ_ge` settings of the heating series.
pub const HEATING_RATIOS: [f64; 3] = [9.9, 29.6, 205.4];
/// `Γᵖ_eg/Γᴺ_eg` settings of the cooling series.
pub const COOLING_RATIOS: [f64; 3] = [1.6, 3.9, 10.6];
/// Total (pumped + natural) `(Γ_ge, Γ_eg)` of the two balanced settings, MHz.
pub const BALANCED_TOTALS: [(f64, f64); 2] = [(0.054, 0.054), (0.024, 0.022)];
/// g–f mixture pumps `(g_δ,ge, g_Σ,ef)`, MHz: chosen so the populations
/// seen after the measurement window have `P_g ≈ P_f⁺`.
pub const GF_MIX_COUPLINGS: (f64, f64) = (0.4, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: Config,
}

fn ge_system() -> SystemConfig {
    SystemConfig {
        qubit_dim: 2,
        kappa_s: KAPPA_S,
        kappa_q_down: NATURAL_EG,
        kappa_q_up: NATURAL_GE,
        ..Default::default()
    }
}

fn sequence(initial: InitialState, duration: f64, window: f64, dt: f64) -> SequenceConfig {
    SequenceConfig {
        initial_state: initial,
        segments: vec![SegmentConfig {
            duration,
            drives: None,
        }],
        measure_window: window,
        sample_dt: dt,
        ..Default::default()
    }
}

fn g_for(rate: f64) -> f64 {
    coupling_for_rate(rate, KAPPA_S)
}

fn ratio_sweep(kind: DriveKind, natural: f64, ratios: &[f64], initial: InitialState) -> Config {
    let g: Vec<f64> = ratios.iter().map(|r| g_for(r * natural)).collect();
    Config {
        system: ge_system(),
        drives: vec![DriveSpec::new(kind, *g.last().unwrap())],
        sequence: sequence(initial, 30.0, 0.0, 0.1),
        sweep: Some(SweepConfig {
            drive: Some(0),
            g_eff: g,
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn balanced_drives(total_ge: f64, total_eg: f64) -> Vec<DriveSpec> {
    vec![
        DriveSpec::new(DriveKind::SigmaGe, g_for(total_ge - NATURAL_GE)),
        DriveSpec::new(DriveKind::DeltaGe, g_for(total_eg - NATURAL_EG)),
    ]
}

impl ExperimentPreset {
    pub fn get(name: &str) -> Result<Self> {
        let (name, description, config) = match name {
            "heating_ge" => (
                "heating_ge",
                "Σ pump on g–e from |0,g⟩ at three heating strengths",
                ratio_sweep(
                    DriveKind::SigmaGe,
                    NATURAL_GE,
                    &HEATING_RATIOS,
                    InitialState::new(0, 0),
                ),
            ),
            "cooling_ge" => (
                "cooling_ge",
                "δ pump on g–e from |0,e⟩ at three cooling strengths",
                ratio_sweep(
                    DriveKind::DeltaGe,
                    NATURAL_EG,
                    &COOLING_RATIOS,
                    InitialState::new(0, 1),
                ),
            ),
            "balanced_ge" => {
                let sets: Vec<_> = BALANCED_TOTALS
                    .iter()
                    .map(|(a, b)| balanced_drives(*a, *b))
                    .collect();
                (
                    "balanced_ge",
                    "simultaneous Σ and δ pumps on g–e with matched total rates",
                    Config {
                        system: ge_system(),
                        drives: sets[0].clone(),
                        sequence: sequence(InitialState::new(0, 0), 30.0, 0.0, 0.1),
                        sweep: Some(SweepConfig {
                            drive_sets: sets,
                            ..Default::default()
                        }),
                        ..Default::default()
                    },
                )
            }
            "gf_mix" => (
                "gf_mix",
                "δ on g–e with Σ on e–f, emptying |e⟩ into a g–f mixture",
                Config {
                    system: SystemConfig {
                        snail_dim: 2,
                        qubit_dim: 3,
                        ..Default::default()
                    },
                    drives: vec![
                        DriveSpec::new(DriveKind::DeltaGe, GF_MIX_COUPLINGS.0),
                        DriveSpec::new(DriveKind::SigmaEf, GF_MIX_COUPLINGS.1),
                    ],
                    sequence: sequence(InitialState::new(0, 0), 40.0, 1.2, 0.25),
                    fit: super::config::FitConfig {
                        model: FitModel::ThreeLevel,
                        ..Default::default()
                    },
                    ..Default::default()
                },
            ),
            "natural_decay" => (
                "natural_decay",
                "free thermalization from |g⟩, |e⟩ and |f⟩",
                Config {
                    system: SystemConfig {
                        qubit_dim: 3,
                        ..ge_system()
                    },
                    drives: vec![],
                    sequence: sequence(InitialState::new(0, 0), 100.0, 0.0, 1.0),
                    sweep: Some(SweepConfig {
                        initial_states: vec![
                            InitialState::new(0, 0),
                            InitialState::new(0, 1),
                            InitialState::new(0, 2),
                        ],
                        ..Default::default()
                    }),
                    fit: super::config::FitConfig {
                        model: FitModel::ThreeLevel,
                        ..Default::default()
                    },
                    ..Default::default()
                },
            ),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            name,
            description,
            config: config.resolve()?,
        })
    }

    /// Preset configuration with `overrides` merged in and re-validated.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Config> {
        let mut base = serde_json::to_value(&self.config).expect("config serializes");
        merge_json(&mut base, overrides);
        parse_config_value(&base)
    }
}

/// Runs a named preset. The resolved configuration, overrides included, is
/// echoed in the report.
pub fn run_preset(name: &str, overrides: &Value, out_dir: Option<&Path>) -> Result<RunReport> {
    let preset = ExperimentPreset::get(name)?;
    let config = preset.with_overrides(overrides)?;
    run_config(&config, Some(preset.name), out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::effective_rate;

    #[test]
    fn all_presets_resolve() {
        for name in PRESET_NAMES {
            let p = ExperimentPreset::get(name).unwrap();
            assert_eq!(p.name, name);
            assert!(!p.config.drive_grid().is_empty());
        }
        assert!(matches!(
            ExperimentPreset::get("nope"),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn heating_couplings_reproduce_ratios() {
        let p = ExperimentPreset::get("heating_ge").unwrap();
        let g = &p.config.sweep.as_ref().unwrap().g_eff;
        for (g, r) in g.iter().zip(HEATING_RATIOS) {
            assert!((effective_rate(*g, KAPPA_S) / NATURAL_GE - r).abs() < 1e-9);
        }
        assert!((g[2] - 0.9018).abs() < 1e-3);
    }

    #[test]
    fn overrides_are_echoed() {
        let p = ExperimentPreset::get("gf_mix").unwrap();
        let c = p
            .with_overrides(&serde_json::json!({"sequence": {"measure_window": 0.5}}))
            .unwrap();
        assert_eq!(c.sequence.measure_window, 0.5);
        assert_eq!(c.system.kappa_s, KAPPA_S);
        assert!(p
            .with_overrides(&serde_json::json!({"system": {"kappa_s": -2}}))
            .is_err());
    }

    #[test]
    fn natural_decay_recovers_model_rates() {
        let report = run_preset("natural_decay", &Value::Null, None);
        // Null overrides replace the whole config and must be rejected.
        assert!(report.is_err());
        let report = run_preset("natural_decay", &serde_json::json!({}), None).unwrap();
        assert_eq!(report.trajectories.len(), 3);
        let fit = report.fits[0].result.as_ref().unwrap();
        assert_eq!(report.fits[0].trajectories.len(), 3);
        // Ladder matrix elements: Γ_ef = 2κ↑, Γ_fe = 2κ↓.
        let expect = [NATURAL_GE, NATURAL_EG, 2.0 * NATURAL_GE, 2.0 * NATURAL_EG];
        let got = [fit.params.ge, fit.params.eg, fit.params.ef, fit.params.fe];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() / e < 1e-3, "{got:?} vs {expect:?}");
        }
    }
}
