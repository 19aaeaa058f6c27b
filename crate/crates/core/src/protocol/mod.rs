//! Configuration, experiment presets, runs and their on-disk artefacts.

pub mod config;
pub mod presets;
pub mod run;
pub mod table;

pub use config::{parse_config, Config, FitModel};
pub use presets::{run_preset, ExperimentPreset, PRESET_NAMES};
pub use run::{load_report, run_config, RunReport};
pub use table::{emit_csv, parse_csv, read_csv, CSV_COLUMNS};
