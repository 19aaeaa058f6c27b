//! `bathforge` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use bathforge::analytic::{effective_rate, fermi_dirac_populations, two_level_steady_state};
use bathforge::dynamics::{run_sequence, PopulationSeries};
use bathforge::estimation::{
    design_pumps, fit_rates_2level, fit_rates_3level, FitOptions, FixedRates,
};
use bathforge::model::DriveKind;
use bathforge::protocol::config::{merge_json, parse_config_value};
use bathforge::protocol::run::steady_record;
use bathforge::protocol::table::samples_to_csv;
use bathforge::protocol::{
    emit_csv, load_report, read_csv, run_config, run_preset, Config, ExperimentPreset, PRESET_NAMES,
};

#[derive(Parser)]
#[command(
    name = "bathforge",
    version,
    about = "Engineered-bath transmon simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON configuration file; omitted keys take device defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set system.kappa_s=10` or
    /// `--set drives='[{"kind":"sigma_ge","g_eff":0.5}]'`.
    #[arg(long = "set", value_name = "PATH=JSON")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Steady state of the configured drives, with chemical-potential diagnostics.
    Steady {
        #[command(flatten)]
        config: ConfigArgs,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Time evolution of the configured sequence as CSV.
    Evolve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output file; CSV goes to stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment preset.
    Preset {
        /// One of heating_ge, cooling_ge, balanced_ge, gf_mix, natural_decay.
        name: Option<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "PATH=JSON")]
        overrides: Vec<String>,
        /// List presets and exit.
        #[arg(long)]
        list: bool,
    },
    /// Run the configured sweep (or single sequence) and write a report.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to `output.dir` of the configuration.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Fit rate models to trajectory CSV files.
    Fit {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Model::TwoLevel)]
        model: Model,
        /// Hold rates fixed, e.g. `--fixed eg=0.00828`.
        #[arg(long, value_name = "RATE=MHZ")]
        fixed: Vec<String>,
        /// Only fit samples with `time_us` up to this value.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long, default_value_t = 500)]
        max_iterations: usize,
    },
    /// Pump strengths realising a target qubit distribution.
    Design {
        /// Comma-separated populations, e.g. `0.2,0.8` or `0.4,0.2,0.4`.
        #[arg(long, value_delimiter = ',', required = true)]
        target: Vec<f64>,
        /// Bound on the summed pump rate, MHz.
        #[arg(long, default_value_t = 0.5)]
        budget: f64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summarise a run directory or report file.
    Report {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    TwoLevel,
    ThreeLevel,
}

enum Failure {
    Usage(String),
    Domain(bathforge::Error),
}

impl From<bathforge::Error> for Failure {
    fn from(e: bathforge::Error) -> Self {
        match e {
            bathforge::Error::Config { .. } | bathforge::Error::UnknownPreset(_) => {
                Failure::Usage(e.to_string())
            }
            e => Failure::Domain(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn parse_overrides(items: &[String]) -> CliResult<Value> {
    let mut patch = Value::Object(Default::default());
    for item in items {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("`{item}`: expected PATH=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        let mut node = value;
        for key in path.split('.').rev() {
            if key.is_empty() {
                return Err(Failure::Usage(format!("`{item}`: empty key in path")));
            }
            let mut obj = serde_json::Map::new();
            obj.insert(key.to_string(), node);
            node = Value::Object(obj);
        }
        merge_json(&mut patch, &node);
    }
    Ok(patch)
}

fn load_config(args: &ConfigArgs) -> CliResult<Config> {
    let mut base = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    merge_json(&mut base, &parse_overrides(&args.overrides)?);
    Ok(parse_config_value(&base)?)
}

fn fmt_pops(p: &[f64; 3], dim: usize) -> String {
    let names = ["P_g", "P_e", "P_f+"];
    (0..dim.min(3))
        .map(|k| format!("{} = {:.6}", names[k], p[k]))
        .collect::<Vec<_>>()
        .join("  ")
}

fn cmd_steady(args: &ConfigArgs, json: bool) -> CliResult {
    let config = load_config(args)?;
    let rec = steady_record(&config, &config.drives)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&rec).expect("serializes")
        );
        return Ok(());
    }
    let dim = config.system.qubit_dim;
    println!("steady      {}", fmt_pops(&rec.populations, dim));
    if config.sequence.measure_window > 0.0 {
        println!(
            "measured    {}  (after {} us)",
            fmt_pops(&rec.measured, dim),
            config.sequence.measure_window
        );
    }
    let nbar = config.system.nbar_s.unwrap_or(0.0);
    println!("nbar_s      {nbar:.6e}");
    let kappa = config.system.kappa_s;
    for d in &config.drives {
        println!(
            "pump        {} g = {} MHz -> rate {:.6e} MHz",
            d.kind,
            d.g_eff,
            effective_rate(d.g_eff, kappa)
        );
    }
    let g = |kind| {
        config
            .drives
            .iter()
            .filter(|d| d.kind == kind)
            .map(|d| d.g_eff * d.g_eff)
            .sum::<f64>()
            .sqrt()
    };
    match rec.chemical_potential {
        Some(mu) => {
            let bath = config.bath()?;
            println!(
                "mu          {:.6} MHz  (mu/hf_s = {:.9})",
                mu.mhz, mu.relative
            );
            let (pg, pe) = fermi_dirac_populations(mu.mhz, &bath)?;
            println!("fermi-dirac P_g = {pg:.6}  P_e = {pe:.6}");
            let (gs, gd) = (g(DriveKind::SigmaGe), g(DriveKind::DeltaGe));
            if let Ok((cg, ce)) = two_level_steady_state(gs, gd, nbar) {
                println!(
                    "closed form P_g = {cg:.6}  P_e = {ce:.6}  |fd - closed| = {:.3e}",
                    (pg - cg).abs().max((pe - ce).abs())
                );
            }
            println!(
                "deviation   |sim - fd| = {:.3e}",
                (rec.populations[0] - pg)
                    .abs()
                    .max((rec.populations[1] - pe).abs())
            );
        }
        None => println!("mu          n/a (needs g-e pumps only and T > 0)"),
    }
    Ok(())
}

fn cmd_evolve(args: &ConfigArgs, out: Option<&Path>) -> CliResult {
    let config = load_config(args)?;
    let seq = config.pulse_sequence(&config.drives, config.sequence.initial_state);
    let traj = run_sequence(
        &config.system_spec(),
        &seq,
        config.sequence.sample_dt,
        &config.evolve_options(),
    )?;
    match out {
        Some(path) => {
            emit_csv(&traj, path)?;
            let last = traj.last();
            println!(
                "{} samples to {}; final {}",
                traj.samples.len(),
                path.display(),
                fmt_pops(&last.qubit, config.system.qubit_dim)
            );
        }
        None => {
            traj.check_invariants()?;
            print!(
                "{}",
                String::from_utf8(samples_to_csv(&traj.samples)).expect("ascii")
            );
        }
    }
    Ok(())
}

fn print_run(report: &bathforge::protocol::RunReport, dir: Option<&Path>) {
    if let Some(name) = &report.preset {
        println!("preset {name}");
    }
    for t in &report.trajectories {
        print!(
            "{:<40} final [{:.4}, {:.4}, {:.4}]",
            t.label, t.final_populations[0], t.final_populations[1], t.final_populations[2]
        );
        if let Some(s) = &t.steady {
            print!(
                "  steady [{:.4}, {:.4}, {:.4}]",
                s.measured[0], s.measured[1], s.measured[2]
            );
        }
        println!();
    }
    for f in &report.fits {
        match (&f.result, &f.error) {
            (Some(r), _) => println!(
                "fit {:?} {}: ge={:.4e} eg={:.4e} ef={:.4e} fe={:.4e} rms={:.2e}{}",
                f.model,
                f.trajectories.join(";"),
                r.params.ge,
                r.params.eg,
                r.params.ef,
                r.params.fe,
                r.residual_rms,
                if r.converged { "" } else { " (not converged)" }
            ),
            (None, Some(e)) => println!(
                "fit {:?} {}: failed: {e}",
                f.model,
                f.trajectories.join(";")
            ),
            _ => {}
        }
    }
    if let Some(s) = &report.scaling {
        println!(
            "scaling rate = {:.6e}*g^2 + {:.3e}  r^2 = {:.6}",
            s.coefficient, s.offset, s.r_squared
        );
    }
    if let Some(dir) = dir {
        println!(
            "wrote {} CSV files and report.json to {}",
            report.trajectories.len(),
            dir.display()
        );
    }
}

fn cmd_preset(
    name: Option<&str>,
    out: Option<&Path>,
    overrides: &[String],
    list: bool,
) -> CliResult {
    if list {
        for n in PRESET_NAMES {
            println!("{n:<14} {}", ExperimentPreset::get(n)?.description);
        }
        return Ok(());
    }
    let name = name.ok_or_else(|| Failure::Usage("preset name required (see --list)".into()))?;
    let report = run_preset(name, &parse_overrides(overrides)?, out)?;
    print_run(&report, out);
    Ok(())
}

fn cmd_sweep(args: &ConfigArgs, out: Option<&Path>) -> CliResult {
    let config = load_config(args)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output.dir.clone());
    let report = run_config(&config, None, Some(&dir))?;
    print_run(&report, Some(&dir));
    Ok(())
}

fn parse_fixed(items: &[String]) -> CliResult<FixedRates> {
    let mut fixed = FixedRates::default();
    for item in items {
        let bad = || {
            Failure::Usage(format!(
                "`{item}`: expected RATE=VALUE with RATE in ge, eg, ef, fe"
            ))
        };
        let (k, v) = item.split_once('=').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        match k.trim() {
            "ge" => fixed.ge = Some(v),
            "eg" => fixed.eg = Some(v),
            "ef" => fixed.ef = Some(v),
            "fe" => fixed.fe = Some(v),
            _ => return Err(bad()),
        }
    }
    Ok(fixed)
}

fn cmd_fit(
    files: &[PathBuf],
    model: Model,
    fixed: &[String],
    until: Option<f64>,
    max_iterations: usize,
) -> CliResult {
    let fixed = parse_fixed(fixed)?;
    let opts = FitOptions {
        max_iterations,
        ..Default::default()
    };
    let mut series = Vec::new();
    for path in files {
        let samples = read_csv(path).map_err(|e| match e {
            bathforge::Error::InvalidData(m) => Failure::Domain(bathforge::Error::InvalidData(
                format!("{}: {m}", path.display()),
            )),
            e => e.into(),
        })?;
        let kept: Vec<_> = samples
            .iter()
            .filter(|s| until.is_none_or(|t| s.time <= t + 1e-9))
            .collect();
        series.push(PopulationSeries::new(
            kept.iter().map(|s| s.time).collect(),
            kept.iter().map(|s| s.qubit).collect(),
        )?);
    }
    let results = match model {
        Model::TwoLevel => series
            .iter()
            .map(|s| fit_rates_2level(s, &fixed, &opts))
            .collect::<bathforge::Result<Vec<_>>>()?,
        Model::ThreeLevel => vec![fit_rates_3level(&series, &fixed, &opts)?],
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&results).expect("serializes")
    );
    Ok(())
}

fn cmd_design(target: &[f64], budget: f64, args: &ConfigArgs) -> CliResult {
    let config = load_config(args)?;
    let design = design_pumps(target, &config.system_spec(), budget)?;
    for d in &design.drives {
        println!("{} g_eff = {:.9} MHz", d.kind, d.g_eff);
    }
    if let Some(r) = design.ratio {
        println!("ratio g_sigma/g_delta = {r:.9}");
    }
    let achieved: Vec<String> = design.achieved.iter().map(|p| format!("{p:.6}")).collect();
    println!(
        "forward check [{}]  max error {:.2e}",
        achieved.join(", "),
        design.max_error
    );
    Ok(())
}

fn cmd_report(path: &Path, json: bool) -> CliResult {
    let report = load_report(path)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print_run(&report, None);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Steady { config, json } => cmd_steady(config, *json),
        Command::Evolve { config, out } => cmd_evolve(config, out.as_deref()),
        Command::Preset {
            name,
            out,
            overrides,
            list,
        } => cmd_preset(name.as_deref(), out.as_deref(), overrides, *list),
        Command::Sweep { config, out } => cmd_sweep(config, out.as_deref()),
        Command::Fit {
            files,
            model,
            fixed,
            until,
            max_iterations,
        } => cmd_fit(files, *model, fixed, *until, *max_iterations),
        Command::Design {
            target,
            budget,
            config,
        } => cmd_design(target, *budget, config),
        Command::Report { path, json } => cmd_report(path, *json),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
