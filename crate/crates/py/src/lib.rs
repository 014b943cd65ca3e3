// SPDX-License-Identifier: Apache-2.0

//! Python bindings.
//!
//! ```python
//! import pydamq
//! cfg = pydamq.SimConfig(scheme="DAMQS", injection_rate=0.2, measure_cycles=5000)
//! report = pydamq.run(cfg)
//! print(report.throughput, report.avg_latency)
//! ```

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use damq_noc::buffers::{BufferLayoutSpec, SharedBufferState, VcKey};
use damq_noc::config::{apply, build_config, parse_settings, to_config_string, Setting};
use damq_noc::engine::{self, MetricsReport, RunStatus};
use damq_noc::model::{self, column_parity, Coord, Direction, Flit, Scheme, SimConfig};
use damq_noc::report::{cmd_sweep, records_to_csv, SweepSpec};
use damq_noc::routing::is_turn_legal as turn_legal;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Text form of a keyword value as the config parser expects it.
fn setting_value(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if v.is_none() {
        return Ok("auto".to_string());
    }
    if let Ok(items) = v.extract::<Vec<Bound<'_, PyAny>>>() {
        let parts = items
            .iter()
            .map(|i| i.str().map(|s| s.to_string()))
            .collect::<PyResult<Vec<_>>>()?;
        return Ok(parts.join(","));
    }
    Ok(v.str()?.to_string())
}

fn kwargs_settings(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<Setting>> {
    let mut out = Vec::new();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            out.push(Setting::new(k.extract::<String>()?, setting_value(&v)?));
        }
    }
    Ok(out)
}

fn with_settings(base: &SimConfig, settings: &[Setting]) -> PyResult<SimConfig> {
    let mut cfg = base.clone();
    for s in settings {
        apply(&mut cfg, s).map_err(value_err)?;
    }
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

#[pyclass(name = "SimConfig", module = "pydamq")]
pub struct PySimConfig {
    inner: SimConfig,
}

#[pymethods]
impl PySimConfig {
    /// Defaults overridden by keyword arguments named like the config keys.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let inner = with_settings(&SimConfig::default(), &kwargs_settings(kwargs)?)?;
        Ok(PySimConfig { inner })
    }

    /// Copy with some keys changed.
    #[pyo3(signature = (**kwargs))]
    fn replace(&self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let inner = with_settings(&self.inner, &kwargs_settings(kwargs)?)?;
        Ok(PySimConfig { inner })
    }

    #[staticmethod]
    fn from_config_string(text: &str) -> PyResult<Self> {
        let settings = parse_settings(text).map_err(value_err)?;
        let inner = build_config(&settings, &[]).map_err(value_err)?;
        Ok(PySimConfig { inner })
    }

    fn to_config_string(&self) -> String {
        to_config_string(&self.inner)
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme.name()
    }
    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }
    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }
    #[getter]
    fn vc_count(&self) -> usize {
        self.inner.vc_count
    }
    #[getter]
    fn packet_len(&self) -> usize {
        self.inner.packet_len
    }
    #[getter]
    fn vb(&self) -> usize {
        self.inner.vb
    }
    #[getter]
    fn shared_size(&self) -> usize {
        self.inner.shared_size
    }
    #[getter]
    fn injection_rate(&self) -> f64 {
        self.inner.injection_rate
    }
    #[getter]
    fn fault_rate(&self) -> f64 {
        self.inner.fault_rate
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn warmup_cycles(&self) -> u64 {
        self.inner.warmup_cycles
    }
    #[getter]
    fn measure_cycles(&self) -> u64 {
        self.inner.measure_cycles
    }
    #[getter]
    fn drain_limit_cycles(&self) -> u64 {
        self.inner.drain_limit_cycles
    }
    #[getter]
    fn traffic(&self) -> String {
        self.inner.traffic.to_string()
    }
    #[getter]
    fn misroute_budget(&self) -> u32 {
        self.inner.effective_misroute_budget()
    }

    fn __repr__(&self) -> String {
        format!(
            "SimConfig(scheme={:?}, width={}, height={}, injection_rate={}, fault_rate={}, seed={})",
            self.inner.scheme.name(),
            self.inner.width,
            self.inner.height,
            self.inner.injection_rate,
            self.inner.fault_rate,
            self.inner.seed
        )
    }

    fn __eq__(&self, other: PyRef<'_, PySimConfig>) -> bool {
        self.inner == other.inner
    }
}

#[pyclass(name = "MetricsReport", module = "pydamq", frozen)]
pub struct PyMetricsReport {
    inner: MetricsReport,
}

#[pymethods]
impl PyMetricsReport {
    #[getter]
    fn avg_latency(&self) -> f64 {
        self.inner.avg_latency
    }
    #[getter]
    fn latency_histogram(&self) -> Vec<u64> {
        self.inner.latency_histogram.clone()
    }
    #[getter]
    fn throughput(&self) -> f64 {
        self.inner.throughput
    }
    #[getter]
    fn offered_load(&self) -> f64 {
        self.inner.offered_load
    }
    #[getter]
    fn buffer_usage_rate(&self) -> f64 {
        self.inner.buffer_usage_rate
    }
    #[getter]
    fn injected_flits(&self) -> u64 {
        self.inner.injected_flits
    }
    #[getter]
    fn delivered_flits(&self) -> u64 {
        self.inner.delivered_flits
    }
    #[getter]
    fn dropped_packets(&self) -> u64 {
        self.inner.dropped_packets
    }
    #[getter]
    fn purged_flits(&self) -> u64 {
        self.inner.purged_flits
    }
    #[getter]
    fn shift_ops_total(&self) -> u64 {
        self.inner.shift_ops_total
    }
    #[getter]
    fn saturated(&self) -> bool {
        self.inner.saturated
    }
    #[getter]
    fn drained(&self) -> bool {
        self.inner.status == RunStatus::Completed
    }
    #[getter]
    fn cycles(&self) -> u64 {
        self.inner.cycles
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner;
        let d = PyDict::new(py);
        d.set_item("avg_latency", m.avg_latency)?;
        d.set_item("latency_histogram", m.latency_histogram.clone())?;
        d.set_item("measured_packets", m.measured_packets)?;
        d.set_item("throughput", m.throughput)?;
        d.set_item("offered_load", m.offered_load)?;
        d.set_item("buffer_usage_rate", m.buffer_usage_rate)?;
        d.set_item("injected_flits", m.injected_flits)?;
        d.set_item("delivered_flits", m.delivered_flits)?;
        d.set_item("dropped_packets", m.dropped_packets)?;
        d.set_item("purged_flits", m.purged_flits)?;
        d.set_item("shift_ops_total", m.shift_ops_total)?;
        d.set_item("saturated", m.saturated)?;
        d.set_item("drained", m.status == RunStatus::Completed)?;
        d.set_item("cycles", m.cycles)?;
        d.set_item("failed_links", m.failed_links)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "MetricsReport(throughput={:.4}, avg_latency={:.2}, saturated={})",
            self.inner.throughput, self.inner.avg_latency, self.inner.saturated
        )
    }
}

#[pyfunction]
fn run(cfg: PyRef<'_, PySimConfig>) -> PyResult<PyMetricsReport> {
    engine::run(&cfg.inner)
        .map(|inner| PyMetricsReport { inner })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn saturation_sweep(cfg: PyRef<'_, PySimConfig>, rates: Vec<f64>) -> PyResult<Vec<(f64, PyMetricsReport)>> {
    let sweep = engine::saturation_sweep(&cfg.inner, &rates).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(sweep
        .into_iter()
        .map(|(r, inner)| (r, PyMetricsReport { inner }))
        .collect())
}

/// Runs the cartesian product of the list-valued keywords and returns the CSV.
#[pyfunction]
#[pyo3(signature = (template, jobs = 0, **lists))]
fn sweep(template: PyRef<'_, PySimConfig>, jobs: usize, lists: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let mut spec = SweepSpec::default();
    let mut overrides = Vec::new();
    for s in kwargs_settings(lists)? {
        if let Some(plain) = spec.add(&s.key, &s.value).map_err(value_err)? {
            overrides.push(plain);
        }
    }
    let base = with_settings(&template.inner, &overrides)?;
    let configs = spec.expand(&base).map_err(value_err)?;
    let rows = cmd_sweep(&configs, jobs)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(PyRuntimeError::new_err)?;
    Ok(records_to_csv(&rows))
}

#[pyfunction]
fn buf_total(cfg: PyRef<'_, PySimConfig>) -> PyResult<u64> {
    model::buf_total(&cfg.inner).map_err(value_err)
}

/// Failed links as `((x, y), (x, y))` pairs.
#[pyfunction]
fn generate_faults(cfg: PyRef<'_, PySimConfig>) -> PyResult<Vec<((usize, usize), (usize, usize))>> {
    let faults = model::generate_faults(&cfg.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(faults
        .failed_links()
        .map(|(a, b)| ((a.x, a.y), (b.x, b.y)))
        .collect())
}

/// Whether a packet travelling `from` may continue `to` in column `column`.
#[pyfunction]
fn is_turn_legal(from: &str, to: &str, column: usize) -> PyResult<bool> {
    let from: Direction = from.parse().map_err(value_err)?;
    let to: Direction = to.parse().map_err(value_err)?;
    Ok(turn_legal(from, to, column_parity(Coord::new(column, 0))))
}

#[pyclass(name = "SharedBuffer", module = "pydamq")]
pub struct PySharedBuffer {
    inner: SharedBufferState,
}

fn key(port: &str, vc: usize) -> PyResult<VcKey> {
    Ok(VcKey::new(port.parse().map_err(value_err)?, vc))
}

#[pymethods]
impl PySharedBuffer {
    /// SAMQ and DAMQA take one port and use `vb` slots per VC; DAMQS and
    /// DAMQAS use `shared_size` slots per member port.
    #[new]
    #[pyo3(signature = (scheme, ports, vc_count = 4, vb = 4, shared_size = 16))]
    fn new(scheme: &str, ports: Vec<String>, vc_count: usize, vb: usize, shared_size: usize) -> PyResult<Self> {
        let scheme: Scheme = scheme.parse().map_err(value_err)?;
        let ports = ports
            .iter()
            .map(|p| p.parse::<Direction>().map_err(value_err))
            .collect::<PyResult<Vec<_>>>()?;
        let spec = match scheme {
            Scheme::Samq | Scheme::Damqa => match ports.as_slice() {
                [p] => BufferLayoutSpec::per_port(scheme, *p, vc_count, vb),
                _ => return Err(PyValueError::new_err(format!("{scheme} serves exactly one port"))),
            },
            Scheme::Damqs | Scheme::Damqas => BufferLayoutSpec::shared(scheme, &ports, vc_count, shared_size),
        };
        let inner = SharedBufferState::new(spec).map_err(value_err)?;
        Ok(PySharedBuffer { inner })
    }

    /// Appends a body flit of `packet_id`; false if the VC cannot accept.
    #[pyo3(signature = (port, vc, packet_id = 0))]
    fn push(&mut self, port: &str, vc: usize, packet_id: u64) -> PyResult<bool> {
        let k = key(port, vc)?;
        if !self.inner.can_accept(k).map_err(value_err)? {
            return Ok(false);
        }
        let origin = Coord::new(0, 0);
        self.inner
            .push(k, Flit::of_packet(packet_id, origin, origin, 1, 3, 0))
            .map_err(value_err)?;
        Ok(true)
    }

    /// Packet id of the popped flit, or None if the VC is empty.
    fn pop(&mut self, port: &str, vc: usize) -> PyResult<Option<u64>> {
        let k = key(port, vc)?;
        if self.inner.occupancy(k).map_err(value_err)? == 0 {
            return Ok(None);
        }
        Ok(Some(self.inner.pop(k).map_err(value_err)?.packet_id))
    }

    fn can_accept(&self, port: &str, vc: usize) -> PyResult<bool> {
        self.inner.can_accept(key(port, vc)?).map_err(value_err)
    }

    fn occupancy(&self, port: &str, vc: usize) -> PyResult<usize> {
        self.inner.occupancy(key(port, vc)?).map_err(value_err)
    }

    /// Removes every flit of `packet_id`; returns how many.
    fn reclaim_packet(&mut self, packet_id: u64) -> usize {
        self.inner.reclaim(|_, f| f.packet_id == packet_id)
    }

    fn check_invariants(&self) -> PyResult<()> {
        self.inner.check_invariants().map_err(PyRuntimeError::new_err)
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }
    #[getter]
    fn occupancy_total(&self) -> usize {
        self.inner.occupancy_total()
    }
    #[getter]
    fn free_unreserved(&self) -> usize {
        self.inner.free_unreserved()
    }
    #[getter]
    fn reserved(&self) -> usize {
        self.inner.reserved()
    }
    #[getter]
    fn shift_ops(&self) -> u64 {
        self.inner.shift_ops()
    }
    #[getter]
    fn usage(&self) -> f64 {
        self.inner.usage()
    }
}

#[pymodule]
fn pydamq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyMetricsReport>()?;
    m.add_class::<PySharedBuffer>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(saturation_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(buf_total, m)?)?;
    m.add_function(wrap_pyfunction!(generate_faults, m)?)?;
    m.add_function(wrap_pyfunction!(is_turn_legal, m)?)?;
    Ok(())
}
