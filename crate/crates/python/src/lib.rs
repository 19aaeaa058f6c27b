use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use bathforge::analytic::{self, BathSpec, RateSet};
use bathforge::dynamics::{
    self, EvolveOptions, InitialState, PopulationSeries, SteadyStateOptions,
};
use bathforge::estimation::{self, FitOptions, FixedRates};
use bathforge::model::{self, DriveKind};
use bathforge::protocol::{self, table};

fn err(e: bathforge::Error) -> PyErr {
    match e {
        bathforge::Error::Io(e) => PyOSError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_json(text: &str) -> PyResult<serde_json::Value> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("invalid JSON: {e}")))
}

/// Device and truncation parameters. Frequencies and rates in MHz.
#[pyclass(name = "SystemSpec", module = "bathforge", from_py_object)]
#[derive(Clone)]
struct PySystemSpec {
    inner: model::SystemSpec,
}

#[pymethods]
impl PySystemSpec {
    /// Keyword arguments override the device defaults.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(model::SystemSpec::device_defaults()).unwrap();
        if let Some(kw) = kwargs {
            let py = kw.py();
            let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
            let patch = parse_json(&text)?;
            for (k, v) in patch.as_object().unwrap() {
                if value.get(k).is_none() {
                    return Err(PyValueError::new_err(format!("unknown field `{k}`")));
                }
                value[k] = v.clone();
            }
        }
        let inner: model::SystemSpec =
            serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn two_level(kappa_s: f64) -> Self {
        Self {
            inner: model::SystemSpec::two_level(kappa_s),
        }
    }

    #[getter]
    fn kappa_s(&self) -> f64 {
        self.inner.kappa_s
    }

    #[getter]
    fn nbar_s(&self) -> f64 {
        self.inner.nbar_s
    }

    #[getter]
    fn qubit_dim(&self) -> usize {
        self.inner.qubit_dim
    }

    #[getter]
    fn snail_dim(&self) -> usize {
        self.inner.snail_dim
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemSpec({})",
            serde_json::to_string(&self.inner).unwrap()
        )
    }
}

/// One parametric pump: `kind` is sigma_ge, delta_ge, sigma_ef or delta_ef.
#[pyclass(name = "DriveSpec", module = "bathforge", from_py_object)]
#[derive(Clone)]
struct PyDriveSpec {
    inner: model::DriveSpec,
}

#[pymethods]
impl PyDriveSpec {
    #[new]
    #[pyo3(signature = (kind, g_eff, phase = 0.0, detuning = 0.0))]
    fn new(kind: &str, g_eff: f64, phase: f64, detuning: f64) -> PyResult<Self> {
        let kind: DriveKind = serde_json::from_value(serde_json::Value::String(kind.into()))
            .map_err(|_| PyValueError::new_err(format!("unknown drive kind `{kind}`")))?;
        let inner = model::DriveSpec {
            phase,
            detuning,
            ..model::DriveSpec::new(kind, g_eff)
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn g_eff(&self) -> f64 {
        self.inner.g_eff
    }

    fn __repr__(&self) -> String {
        format!("DriveSpec({}, {})", self.inner.kind, self.inner.g_eff)
    }
}

/// Semiclassical transition rates in MHz.
#[pyclass(
    name = "RateSet",
    module = "bathforge",
    get_all,
    set_all,
    from_py_object
)]
#[derive(Clone)]
struct PyRateSet {
    ge: f64,
    eg: f64,
    ef: f64,
    fe: f64,
}

impl PyRateSet {
    fn inner(&self) -> RateSet {
        RateSet {
            ge: self.ge,
            eg: self.eg,
            ef: self.ef,
            fe: self.fe,
        }
    }
}

#[pymethods]
impl PyRateSet {
    #[new]
    #[pyo3(signature = (ge, eg, ef = 0.0, fe = 0.0))]
    fn new(ge: f64, eg: f64, ef: f64, fe: f64) -> PyResult<Self> {
        let r = Self { ge, eg, ef, fe };
        r.inner().validate().map_err(err)?;
        Ok(r)
    }

    fn __repr__(&self) -> String {
        format!(
            "RateSet(ge={}, eg={}, ef={}, fe={})",
            self.ge, self.eg, self.ef, self.fe
        )
    }
}

fn drives_of(drives: &[PyDriveSpec]) -> Vec<model::DriveSpec> {
    drives.iter().map(|d| d.inner).collect()
}

/// Steady state; returns qubit populations and the joint distribution.
#[pyfunction]
#[pyo3(signature = (spec, drives, co_rotating = false))]
fn steady_state(
    py: Python<'_>,
    spec: &PySystemSpec,
    drives: Vec<PyDriveSpec>,
    co_rotating: bool,
) -> PyResult<Py<PyAny>> {
    let opts = SteadyStateOptions {
        co_rotating,
        ..Default::default()
    };
    let rho = dynamics::steady_state(&spec.inner, &drives_of(&drives), &opts).map_err(err)?;
    #[derive(Serialize)]
    struct Out {
        qubit: [f64; 3],
        joint: std::collections::BTreeMap<String, f64>,
    }
    to_py(
        py,
        &Out {
            qubit: dynamics::qubit_populations(&rho),
            joint: dynamics::joint_populations(&rho),
        },
    )
}

/// Master-equation evolution from a basis state such as "0,g"; returns
/// columns keyed like the CSV header.
#[pyfunction]
#[pyo3(signature = (spec, drives, t_final, sample_dt, initial = "0,g"))]
fn evolve(
    py: Python<'_>,
    spec: &PySystemSpec,
    drives: Vec<PyDriveSpec>,
    t_final: f64,
    sample_dt: f64,
    initial: &str,
) -> PyResult<Py<PyAny>> {
    let state: InitialState = initial.parse().map_err(err)?;
    let rho0 = state.density_matrix(&spec.inner).map_err(err)?;
    let traj = py
        .detach(|| {
            dynamics::evolve(
                &spec.inner,
                &drives_of(&drives),
                &rho0,
                t_final,
                sample_dt,
                &EvolveOptions::default(),
            )
        })
        .map_err(err)?;
    let mut cols: serde_json::Map<String, serde_json::Value> = Default::default();
    let s = &traj.samples;
    let col = |f: &dyn Fn(&dynamics::PopulationSample) -> f64| {
        serde_json::json!(s.iter().map(f).collect::<Vec<_>>())
    };
    cols.insert("time_us".into(), col(&|x| x.time));
    cols.insert("P_g".into(), col(&|x| x.qubit[0]));
    cols.insert("P_e".into(), col(&|x| x.qubit[1]));
    cols.insert("P_fplus".into(), col(&|x| x.qubit[2]));
    cols.insert("P_snail0".into(), col(&|x| x.snail[0]));
    cols.insert("P_snail1".into(), col(&|x| x.snail[1]));
    cols.insert("trace_err".into(), col(&|x| x.trace_err));
    to_py(py, &cols)
}

/// `(P_g, P_e)` of the pumped two-level steady state.
#[pyfunction]
fn two_level_steady_state(g_sigma: f64, g_delta: f64, nbar: f64) -> PyResult<(f64, f64)> {
    analytic::two_level_steady_state(g_sigma, g_delta, nbar).map_err(err)
}

/// Chemical potential `(μ/h in MHz, μ/ħω_s)` for a bath at `temperature` kelvin.
#[pyfunction]
#[pyo3(signature = (g_sigma, g_delta, temperature, f_s = 8010.0))]
fn chemical_potential(
    g_sigma: f64,
    g_delta: f64,
    temperature: f64,
    f_s: f64,
) -> PyResult<(f64, f64)> {
    let bath = BathSpec::new(temperature, f_s).map_err(err)?;
    let mu = analytic::chemical_potential(g_sigma, g_delta, &bath).map_err(err)?;
    Ok((mu.mhz, mu.relative))
}

#[pyfunction]
#[pyo3(signature = (mu_mhz, temperature, f_s = 8010.0))]
fn fermi_dirac_populations(mu_mhz: f64, temperature: f64, f_s: f64) -> PyResult<(f64, f64)> {
    let bath = BathSpec::new(temperature, f_s).map_err(err)?;
    analytic::fermi_dirac_populations(mu_mhz, &bath).map_err(err)
}

/// Exact `P_g(t)` under a Σ pump from `|0,g⟩` with a two-level SNAIL.
#[pyfunction]
fn heating_population(g_sigma: f64, kappa_s: f64, t: f64) -> f64 {
    analytic::heating_population_analytic(g_sigma, kappa_s, t)
}

#[pyfunction]
fn semiclassical_3level(rates: &PyRateSet, p0: [f64; 3], t: f64) -> PyResult<[f64; 3]> {
    analytic::semiclassical_3level(&rates.inner(), p0, t).map_err(err)
}

fn fixed_of(fixed: Option<&str>) -> PyResult<FixedRates> {
    match fixed {
        None => Ok(FixedRates::default()),
        Some(text) => {
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("fixed: {e}")))
        }
    }
}

fn series_of(times: Vec<f64>, pops: Vec<Vec<f64>>) -> PyResult<PopulationSeries> {
    let rows = pops
        .into_iter()
        .map(|p| match p.len() {
            2 => Ok([p[0], p[1], 0.0]),
            3 => Ok([p[0], p[1], p[2]]),
            n => Err(PyValueError::new_err(format!(
                "population rows need 2 or 3 entries, got {n}"
            ))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    PopulationSeries::new(times, rows).map_err(err)
}

/// Two-level rate fit. `fixed` is JSON such as `{"eg": 0.00828}`.
#[pyfunction]
#[pyo3(signature = (times, populations, fixed = None))]
fn fit_rates_2level(
    py: Python<'_>,
    times: Vec<f64>,
    populations: Vec<Vec<f64>>,
    fixed: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let s = series_of(times, populations)?;
    let r =
        estimation::fit_rates_2level(&s, &fixed_of(fixed)?, &FitOptions::default()).map_err(err)?;
    to_py(py, &r)
}

/// Joint three-level fit over `[(times, populations), ...]`.
#[pyfunction]
#[pyo3(signature = (trajectories, fixed = None))]
fn fit_rates_3level(
    py: Python<'_>,
    trajectories: Vec<(Vec<f64>, Vec<Vec<f64>>)>,
    fixed: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let series = trajectories
        .into_iter()
        .map(|(t, p)| series_of(t, p))
        .collect::<PyResult<Vec<_>>>()?;
    let fixed = fixed_of(fixed)?;
    let r = py
        .detach(|| estimation::fit_rates_3level(&series, &fixed, &FitOptions::default()))
        .map_err(err)?;
    to_py(py, &r)
}

/// Pump strengths for a target distribution, forward-checked.
#[pyfunction]
#[pyo3(signature = (target, spec = None, budget = 0.5))]
fn design_pumps(
    py: Python<'_>,
    target: Vec<f64>,
    spec: Option<PySystemSpec>,
    budget: f64,
) -> PyResult<Py<PyAny>> {
    let spec = spec
        .map(|s| s.inner)
        .unwrap_or_else(model::SystemSpec::device_defaults);
    let d = py
        .detach(|| estimation::design_pumps(&target, &spec, budget))
        .map_err(err)?;
    to_py(py, &d)
}

/// Resolved configuration for JSON `text`, with defaults filled in.
#[pyfunction]
fn parse_config(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let c = protocol::parse_config(text).map_err(err)?;
    to_py(py, &c)
}

/// Runs a preset; `overrides` is a JSON object merged into its configuration.
#[pyfunction]
#[pyo3(signature = (name, overrides = "{}", out_dir = None))]
fn run_preset(
    py: Python<'_>,
    name: &str,
    overrides: &str,
    out_dir: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let patch = parse_json(overrides)?;
    let report = py
        .detach(|| protocol::run_preset(name, &patch, out_dir.as_deref()))
        .map_err(err)?;
    to_py(py, &report)
}

/// Runs a full configuration (JSON text).
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn run_config(py: Python<'_>, config: &str, out_dir: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let c = protocol::parse_config(config).map_err(err)?;
    let report = py
        .detach(|| protocol::run_config(&c, None, out_dir.as_deref()))
        .map_err(err)?;
    to_py(py, &report)
}

/// Trajectory CSV as a list of row dicts.
#[pyfunction]
fn read_csv(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let rows = table::read_csv(&path).map_err(err)?;
    to_py(py, &rows)
}

#[pymodule]
fn _bathforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemSpec>()?;
    m.add_class::<PyDriveSpec>()?;
    m.add_class::<PyRateSet>()?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(two_level_steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(chemical_potential, m)?)?;
    m.add_function(wrap_pyfunction!(fermi_dirac_populations, m)?)?;
    m.add_function(wrap_pyfunction!(heating_population, m)?)?;
    m.add_function(wrap_pyfunction!(semiclassical_3level, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rates_2level, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rates_3level, m)?)?;
    m.add_function(wrap_pyfunction!(design_pumps, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(read_csv, m)?)?;
    m.add("PRESET_NAMES", protocol::PRESET_NAMES.to_vec())?;
    Ok(())
}
