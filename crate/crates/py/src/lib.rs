//! Python bindings: `import tlsloss`.
//!
//! Traces are passed as a list of frequencies plus a list of complex S21
//! values. Geometry and material overrides are plain dicts keyed like the
//! Rust structs; omitted keys keep their defaults.

use std::collections::BTreeMap;

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tlsloss_core::participation::{self as part, CpwGeometry, MaterialTable, MeshSettings};
use tlsloss_core::qubit::{self, DecayTrace};
use tlsloss_core::resonator::{self, NotchModelParams};
use tlsloss_core::tls::{self, ResonatorSweepRecord};
use tlsloss_core::units::NANOMETER;
use tlsloss_core::{ComplexTrace, PowerSweepPoint, ResonatorFitResult, ResonatorUncertainties, TlsFitResult};

create_exception!(tlsloss, TlsLossError, PyException, "Raised when an analysis step fails.");

fn err(e: impl std::fmt::Display) -> PyErr {
    TlsLossError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Overlays a Python dict onto the serialised defaults of `T`.
fn with_overrides<T: Serialize + DeserializeOwned + Default>(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(d) = overrides else { return Ok(T::default()) };
    let text: String = d.py().import("json")?.call_method1("dumps", (d,))?.extract()?;
    let patch: serde_json::Value = serde_json::from_str(&text).map_err(err)?;
    let mut base = serde_json::to_value(T::default()).map_err(err)?;
    merge(&mut base, patch)?;
    serde_json::from_value(base).map_err(err)
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) -> PyResult<()> {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let slot = b.get_mut(&k).ok_or_else(|| err(format!("unknown key `{k}`")))?;
                merge(slot, v)?;
            }
        }
        (slot, v) => *slot = v,
    }
    Ok(())
}

#[pyclass(frozen, get_all, module = "tlsloss", skip_from_py_object)]
#[derive(Clone)]
pub struct ResonatorFit {
    pub fr: f64,
    pub ql: f64,
    pub qc_mag: f64,
    pub phi: f64,
    pub qi: f64,
    pub tau: f64,
    pub a: f64,
    pub alpha: f64,
    pub qi_stderr: f64,
    pub residual_rms: f64,
}

impl From<ResonatorFitResult> for ResonatorFit {
    fn from(r: ResonatorFitResult) -> Self {
        Self {
            fr: r.fr,
            ql: r.ql,
            qc_mag: r.qc_mag,
            phi: r.phi,
            qi: r.qi,
            tau: r.tau,
            a: r.a,
            alpha: r.alpha,
            qi_stderr: r.uncertainties.qi,
            residual_rms: r.residual_rms,
        }
    }
}

#[pymethods]
impl ResonatorFit {
    fn __repr__(&self) -> String {
        format!(
            "ResonatorFit(fr={:.6e}, Ql={:.4e}, Qc_mag={:.4e}, phi={:.4}, Qi={:.4e})",
            self.fr, self.ql, self.qc_mag, self.phi, self.qi
        )
    }
}

#[pyclass(frozen, get_all, module = "tlsloss", skip_from_py_object)]
#[derive(Clone)]
pub struct TlsFit {
    pub f_delta_tls: f64,
    pub n_c: f64,
    pub beta: f64,
    pub delta0: f64,
    pub temperature: f64,
    pub f_delta_tls_stderr: f64,
}

#[pymethods]
impl TlsFit {
    #[new]
    #[pyo3(signature = (f_delta_tls, n_c, beta, delta0, temperature = 0.01))]
    fn new(f_delta_tls: f64, n_c: f64, beta: f64, delta0: f64, temperature: f64) -> PyResult<Self> {
        TlsFitResult::new(f_delta_tls, n_c, beta, delta0, temperature)
            .map(Self::from)
            .map_err(err)
    }

    /// Total internal loss 1/Qi at photon number `n`.
    fn loss(&self, n: f64, fr: f64) -> PyResult<f64> {
        Ok(tls::tls_loss_model(&self.core()?, n, fr))
    }

    fn __repr__(&self) -> String {
        format!(
            "TlsFit(f_delta_tls={:.4e}, n_c={:.4e}, beta={:.4}, delta0={:.4e})",
            self.f_delta_tls, self.n_c, self.beta, self.delta0
        )
    }
}

impl TlsFit {
    fn core(&self) -> PyResult<TlsFitResult> {
        TlsFitResult::new(self.f_delta_tls, self.n_c, self.beta, self.delta0, self.temperature).map_err(err)
    }
}

impl From<TlsFitResult> for TlsFit {
    fn from(r: TlsFitResult) -> Self {
        Self {
            f_delta_tls: r.f_delta_tls,
            n_c: r.n_c,
            beta: r.beta,
            delta0: r.delta0,
            temperature: r.temperature,
            f_delta_tls_stderr: r.uncertainties.f_delta_tls,
        }
    }
}

#[pyclass(frozen, get_all, module = "tlsloss", skip_from_py_object)]
#[derive(Clone)]
pub struct T1Fit {
    pub t1: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub t1_stderr: f64,
}

#[pymethods]
impl T1Fit {
    fn __repr__(&self) -> String {
        format!("T1Fit(t1={:.4e}, amplitude={:.4}, offset={:.4})", self.t1, self.amplitude, self.offset)
    }
}

#[pyclass(frozen, get_all, module = "tlsloss", skip_from_py_object)]
#[derive(Clone)]
pub struct Participation {
    /// Region name to energy participation ratio.
    pub p: BTreeMap<String, f64>,
    pub q_tls: Option<f64>,
    pub elements: usize,
    pub level_changes: Vec<f64>,
}

impl From<part::ParticipationResult> for Participation {
    fn from(r: part::ParticipationResult) -> Self {
        Self {
            p: r.p.iter().map(|(k, v)| (k.name().to_string(), *v)).collect(),
            q_tls: r.q_tls,
            elements: r.mesh_stats.elements,
            level_changes: r.mesh_stats.level_changes,
        }
    }
}

#[pymethods]
impl Participation {
    fn __repr__(&self) -> String {
        format!("Participation(p={:?}, q_tls={:?})", self.p, self.q_tls)
    }
}

/// Noisy notch-resonator trace over `fr ± half_widths` linewidths.
#[pyfunction]
#[pyo3(signature = (fr, qi, qc_mag, phi = 0.0, a = 1.0, alpha = 0.0, tau = 0.0, points = 401, half_widths = 5.0, noise = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synthesize_notch(
    fr: f64,
    qi: f64,
    qc_mag: f64,
    phi: f64,
    a: f64,
    alpha: f64,
    tau: f64,
    points: usize,
    half_widths: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<Complex64>)> {
    let p = NotchModelParams::from_qi(fr, qi, qc_mag, phi, a, alpha, tau);
    let f = resonator::linewidth_grid(fr, p.ql, half_widths, points);
    let t = resonator::synthesize_notch(&p, &f, noise, seed).map_err(err)?;
    Ok((t.frequencies, t.s21))
}

#[pyfunction]
fn fit_resonator(py: Python<'_>, frequencies: Vec<f64>, s21: Vec<Complex64>) -> PyResult<ResonatorFit> {
    if frequencies.len() != s21.len() {
        return Err(err("frequencies and s21 differ in length"));
    }
    let trace = ComplexTrace::new(frequencies, s21);
    py.detach(|| resonator::fit_resonator(&trace))
        .map(Into::into)
        .map_err(err)
}

/// Reads a CSV or Touchstone trace; returns `(frequencies, s21)`.
#[pyfunction]
fn read_trace(path: std::path::PathBuf) -> PyResult<(Vec<f64>, Vec<Complex64>)> {
    let t = tlsloss_core::io::read_trace(&path).map_err(err)?;
    Ok((t.frequencies, t.s21))
}

#[pyfunction]
#[pyo3(signature = (p_in, fr, ql, qc, z0 = 50.0, zr = 50.0))]
fn photon_number(p_in: f64, fr: f64, ql: f64, qc: f64, z0: f64, zr: f64) -> f64 {
    let ctx = tls::CalibrationContext {
        z0,
        zr,
        ..Default::default()
    };
    tls::photon_number(p_in, fr, ql, qc, &ctx)
}

/// Fits the TLS model to internal Q versus photon number for one resonator.
#[pyfunction]
#[pyo3(signature = (n_photons, qi, fr, temperature = 0.01, qc = 1e9))]
fn fit_tls(py: Python<'_>, n_photons: Vec<f64>, qi: Vec<f64>, fr: f64, temperature: f64, qc: f64) -> PyResult<TlsFit> {
    if n_photons.len() != qi.len() {
        return Err(err("n_photons and qi differ in length"));
    }
    let points = n_photons
        .iter()
        .zip(&qi)
        .map(|(n, q)| {
            let ql = 1.0 / (1.0 / q + 1.0 / qc);
            let fit = ResonatorFitResult::new(fr, ql, qc, 0.0, 0.0, 1.0, 0.0, ResonatorUncertainties::default(), 0.0)?;
            PowerSweepPoint::new(fit, *n, 1.0)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let record = ResonatorSweepRecord::new("python", f64::NAN, points);
    py.detach(|| tls::fit_tls(&record, fr, temperature)).map(Into::into).map_err(err)
}

#[pyfunction]
fn fit_t1(py: Python<'_>, delays: Vec<f64>, population: Vec<f64>) -> PyResult<T1Fit> {
    let trace = DecayTrace::new(delays, population);
    let f = py.detach(|| qubit::fit_t1(&trace)).map_err(err)?;
    Ok(T1Fit {
        t1: f.t1,
        amplitude: f.amplitude,
        offset: f.offset,
        t1_stderr: f.t1_stderr,
    })
}

/// Screening and group means for a qubit table (the bundled one by default).
#[pyfunction]
#[pyo3(signature = (path = None))]
fn qubit_report<'py>(py: Python<'py>, path: Option<std::path::PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let records = match path {
        Some(p) => qubit::read_qubit_table(std::fs::File::open(&p).map_err(err)?).map_err(err)?,
        None => qubit::bundled_qubits(),
    };
    let excluded: Vec<&str> = records
        .iter()
        .filter(|r| !qubit::screen_qubit(r).included)
        .map(|r| r.label.as_str())
        .collect();
    let summary = qubit::aggregate_fig1b(&records).map_err(err)?;
    #[derive(Serialize)]
    struct Report<'a> {
        records: usize,
        excluded: Vec<&'a str>,
        summary: qubit::Fig1bSummary,
    }
    to_py(
        py,
        &Report {
            records: records.len(),
            excluded,
            summary,
        },
    )
}

#[pyfunction]
#[pyo3(signature = (geometry = None, materials = None))]
fn solve_cross_section(
    py: Python<'_>,
    geometry: Option<&Bound<'_, PyDict>>,
    materials: Option<&Bound<'_, PyDict>>,
) -> PyResult<Participation> {
    let g: CpwGeometry = with_overrides(geometry)?;
    let m: MaterialTable = with_overrides(materials)?;
    py.detach(|| part::solve_cross_section(&g, &m)).map(Into::into).map_err(err)
}

/// Participation sweep over SM thickness (`kind="sm"`) or metal thickness
/// (`kind="metal"`); thicknesses in nm. Returns the sweep as a dict.
#[pyfunction]
#[pyo3(signature = (kind, thickness_nm, geometry = None, materials = None))]
fn sweep<'py>(
    py: Python<'py>,
    kind: &str,
    thickness_nm: Vec<f64>,
    geometry: Option<&Bound<'py, PyDict>>,
    materials: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let g: CpwGeometry = with_overrides(geometry)?;
    let m: MaterialTable = with_overrides(materials)?;
    let t: Vec<f64> = thickness_nm.iter().map(|v| v * NANOMETER).collect();
    let s = MeshSettings::default();
    match kind {
        "sm" => {
            let r = py.detach(|| part::sweep_sm_thickness(&g, &m, &t, &s)).map_err(err)?;
            to_py(py, &r)
        }
        "metal" => {
            let r = py.detach(|| part::sweep_metal_thickness(&g, &m, &t, &s)).map_err(err)?;
            to_py(py, &r)
        }
        other => Err(err(format!("unknown sweep kind `{other}`; use \"sm\" or \"metal\""))),
    }
}

#[pymodule]
fn tlsloss(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TlsLossError", m.py().get_type::<TlsLossError>())?;
    m.add_class::<ResonatorFit>()?;
    m.add_class::<TlsFit>()?;
    m.add_class::<T1Fit>()?;
    m.add_class::<Participation>()?;
    m.add_function(wrap_pyfunction!(synthesize_notch, m)?)?;
    m.add_function(wrap_pyfunction!(fit_resonator, m)?)?;
    m.add_function(wrap_pyfunction!(read_trace, m)?)?;
    m.add_function(wrap_pyfunction!(photon_number, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tls, m)?)?;
    m.add_function(wrap_pyfunction!(fit_t1, m)?)?;
    m.add_function(wrap_pyfunction!(qubit_report, m)?)?;
    m.add_function(wrap_pyfunction!(solve_cross_section, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
