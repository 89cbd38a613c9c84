//! Python bindings: `import wssp`.
//!
//! Structured results (summaries, reports, outcomes) are returned as plain
//! dicts with the same shape as the CLI's JSON output.

use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use wssp_core::audit::audit;
use wssp_core::corpus::{self, Guest};
use wssp_core::eval::evaluate;
use wssp_core::harness::{self, RandomMode, RunSpec};
use wssp_core::layout::{classify_layout, detect_frames, Layout};
use wssp_core::model::{self, WasmModule};
use wssp_core::ssp::{self, Flavor, SelectionMode, SspConfig};

create_exception!(wssp, WsspError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    WsspError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_layout(s: &str) -> PyResult<Layout> {
    match s {
        "stack_first" => Ok(Layout::StackFirst),
        "no_stack_first" => Ok(Layout::NoStackFirst),
        _ => Err(PyValueError::new_err(format!("layout must be stack_first or no_stack_first, got {s:?}"))),
    }
}

fn parse_random(obj: &Bound<'_, PyAny>) -> PyResult<RandomMode> {
    if let Ok(b) = obj.cast::<PyBytes>() {
        let bytes = b.as_bytes().to_vec();
        if bytes.len() < 4 {
            return Err(PyValueError::new_err("fixed entropy needs at least 4 bytes"));
        }
        return Ok(RandomMode::Fixed(bytes));
    }
    let s: String = obj.extract()?;
    s.parse().map_err(PyValueError::new_err)
}

/// A decoded WebAssembly module.
#[pyclass(name = "Module", module = "wssp", skip_from_py_object)]
#[derive(Clone)]
struct PyModuleHandle {
    inner: WasmModule,
}

#[pymethods]
impl PyModuleHandle {
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: model::decode(data).map_err(err)? })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let data = std::fs::read(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&data)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &model::encode(&self.inner).map_err(err)?))
    }

    #[getter]
    fn function_count(&self) -> u32 {
        self.inner.total_funcs()
    }

    #[getter]
    fn imports(&self) -> Vec<(String, String)> {
        self.inner.imports.iter().map(|i| (i.module.clone(), i.field.clone())).collect()
    }

    #[getter]
    fn exports(&self) -> Vec<String> {
        self.inner.exports.iter().map(|e| e.name.clone()).collect()
    }

    /// Structural problems found by the built-in validator.
    fn validate(&self) -> Vec<String> {
        model::validate(&self.inner).iter().map(ToString::to_string).collect()
    }

    /// Stack pointer, memory layout, and per-function frames.
    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        #[derive(Serialize)]
        struct Analysis {
            layout: wssp_core::layout::LayoutReport,
            frames: Vec<wssp_core::layout::FrameInfo>,
        }
        let layout = classify_layout(&self.inner);
        let frames = layout.sp_global.map(|sp| detect_frames(&self.inner, sp)).unwrap_or_default();
        to_py(py, &Analysis { layout, frames })
    }

    /// Robustness report with verdicts for P1, P2a, P2b and P3.
    fn audit<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &audit(&self.inner))
    }

    /// Returns `(instrumented_module, summary)`.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (flavor = "hardened", mode = "all", threshold = 8, sp_global = None, debug_export = false, guard_addr = None))]
    fn instrument<'py>(
        &self,
        py: Python<'py>,
        flavor: &str,
        mode: &str,
        threshold: u32,
        sp_global: Option<u32>,
        debug_export: bool,
        guard_addr: Option<u32>,
    ) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let flavor: Flavor = flavor.parse().map_err(PyValueError::new_err)?;
        if flavor == Flavor::None {
            return Err(PyValueError::new_err("flavor must be hardened or legacy"));
        }
        let mode = match mode {
            "all" => SelectionMode::All,
            "heuristic" => SelectionMode::Heuristic,
            _ => return Err(PyValueError::new_err(format!("mode must be all or heuristic, got {mode:?}"))),
        };
        let cfg = SspConfig {
            mode,
            heuristic_threshold: threshold,
            sp_global,
            debug_export,
            legacy_guard_addr: guard_addr,
            ..SspConfig::default()
        };
        let (out, summary) = ssp::build_flavor(&self.inner, flavor, &cfg).map_err(err)?;
        Ok((Self { inner: out }, to_py(py, &summary)?))
    }

    /// Copy whose `random_get` import is replaced by a stub that always fails.
    fn fault_inject(&self) -> PyResult<Self> {
        Ok(Self { inner: ssp::inject_fault_random(&self.inner).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("<wssp.Module functions={} exports={:?}>", self.inner.total_funcs(), self.exports())
    }
}

/// Runs a module. `random` is "host", "fail", "fixed:HEX", or a bytes
/// object used cyclically. The result dict carries `stdout` and `stderr` as
/// bytes in addition to the JSON fields.
#[pyfunction]
#[pyo3(signature = (module, random = None, timeout_ms = 20_000, stdin = None, args = None))]
fn run<'py>(
    py: Python<'py>,
    module: &Bound<'py, PyAny>,
    random: Option<&Bound<'py, PyAny>>,
    timeout_ms: u64,
    stdin: Option<Vec<u8>>,
    args: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let bytes = match module.cast::<PyModuleHandle>() {
        Ok(m) => model::encode(&m.borrow().inner).map_err(err)?,
        Err(_) => module.extract::<Vec<u8>>()?,
    };
    let mode = match random {
        Some(r) => parse_random(r)?,
        None => RandomMode::Host,
    };
    let mut spec = RunSpec::new(bytes, mode).with_timeout(Duration::from_millis(timeout_ms));
    spec.stdin = stdin.unwrap_or_default();
    if let Some(a) = args {
        spec.argv = std::iter::once("guest".to_string()).chain(a).collect();
    }
    let report = py.detach(|| harness::run(&spec)).map_err(err)?;
    let d = to_py(py, &report)?;
    d.set_item("stdout", PyBytes::new(py, &report.stdout))?;
    d.set_item("stderr", PyBytes::new(py, &report.stderr))?;
    Ok(d)
}

fn guest_pair<'py>(py: Python<'py>, g: Guest) -> PyResult<(PyModuleHandle, Bound<'py, PyAny>)> {
    Ok((PyModuleHandle { inner: g.0 }, to_py(py, &g.1)?))
}

/// Guest A: ascending overflow of `overflow_len` bytes from a `buffer`-byte
/// stack array. Returns `(module, template)`.
#[pyfunction]
#[pyo3(signature = (buffer, overflow_len, layout = "stack_first"))]
fn gen_guest_a<'py>(
    py: Python<'py>,
    buffer: u32,
    overflow_len: u32,
    layout: &str,
) -> PyResult<(PyModuleHandle, Bound<'py, PyAny>)> {
    guest_pair(py, corpus::gen_guest_a(buffer, overflow_len, parse_layout(layout)?).map_err(err)?)
}

/// Guest B: overwrites the canary and the legacy guard slot with
/// `attack_value`. Returns `(module, template)`.
#[pyfunction]
#[pyo3(signature = (attack_value = corpus::DEFAULT_ATTACK, layout = "stack_first"))]
fn gen_guest_b_bypass<'py>(
    py: Python<'py>,
    attack_value: u32,
    layout: &str,
) -> PyResult<(PyModuleHandle, Bound<'py, PyAny>)> {
    guest_pair(py, corpus::gen_guest_b_bypass(attack_value, parse_layout(layout)?).map_err(err)?)
}

/// The benign suite as a list of `(module, template)`.
#[pyfunction]
fn gen_benign_suite<'py>(py: Python<'py>) -> PyResult<Vec<(PyModuleHandle, Bound<'py, PyAny>)>> {
    corpus::gen_benign_suite().into_iter().map(|g| guest_pair(py, g)).collect()
}

/// Writes the built-in corpus (modules plus manifest) to `dir`.
#[pyfunction]
fn write_corpus(dir: PathBuf) -> PyResult<()> {
    corpus::write_corpus(&dir, &corpus::default_corpus()).map_err(err)
}

/// Builds every flavor of a corpus, runs it, and compares with the
/// expectations. Uses the built-in corpus when `corpus_dir` is None.
#[pyfunction]
#[pyo3(signature = (corpus_dir = None, jobs = 1, timeout_ms = 20_000))]
fn eval<'py>(
    py: Python<'py>,
    corpus_dir: Option<PathBuf>,
    jobs: usize,
    timeout_ms: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let guests = match corpus_dir {
        Some(d) => corpus::load_corpus(&d).map_err(err)?,
        None => corpus::default_corpus(),
    };
    let e = py.detach(|| evaluate(&guests, jobs.max(1), Duration::from_millis(timeout_ms)));
    let d = to_py(py, &e.report)?;
    d.set_item("mismatches", to_py(py, &e.mismatches)?)?;
    Ok(d)
}

#[pymodule]
fn wssp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WsspError", m.py().get_type::<WsspError>())?;
    m.add("FIXED_ENTROPY", PyBytes::new(m.py(), &corpus::FIXED_ENTROPY))?;
    m.add("LEGACY_FALLBACK_MULTIPLIER", ssp::LEGACY_FALLBACK_MULTIPLIER as u32)?;
    m.add_class::<PyModuleHandle>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(gen_guest_a, m)?)?;
    m.add_function(wrap_pyfunction!(gen_guest_b_bypass, m)?)?;
    m.add_function(wrap_pyfunction!(gen_benign_suite, m)?)?;
    m.add_function(wrap_pyfunction!(write_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(eval, m)?)?;
    Ok(())
}
