//! Python bindings: configuration, offline synthesis, controllers, the
//! closed-loop simulator and the numerical kernels underneath.

use lanekeep::config::Config as CoreConfig;
use lanekeep::optim::{solve_qp as core_solve_qp, QpProblem, QpStatus};
use lanekeep::polytope::{HPolytope as CoreH, Support};
use lanekeep::sim::{compute_metrics, write_csv, Metrics, SimLog as CoreLog, Simulator};
use lanekeep::synthesis::{self as syn, Artifact as CoreArtifact, SynthesisOptions};
use lanekeep::tube_mpc::{build_scheduling_tube, DeltaMode, LateralController as CoreLateral};
use lanekeep::Error;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        e @ (Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidProblem(_)
        | Error::DimensionMismatch { .. }
        | Error::Artifact(_)
        | Error::HashMismatch { .. }) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> PyResult<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what}: row of length {} where {ncols} expected", bad.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::Unbounded => "unbounded",
        QpStatus::MaxIter => "max_iter",
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("steps", m.steps)?;
    d.set_item("speed_settling_time", m.speed_settling_time)?;
    d.set_item("max_abs_e_y", m.max_abs_e_y)?;
    d.set_item("centering_time", m.centering_time)?;
    d.set_item("state_violations", m.state_violations)?;
    d.set_item("input_violations", m.input_violations)?;
    d.set_item("accel_violations", m.accel_violations)?;
    d.set_item("speed_violations", m.speed_violations)?;
    d.set_item("infeasible_steps", m.infeasible_steps)?;
    d.set_item("nested_fraction", m.nested_fraction)?;
    Ok(d)
}

/// Scenario configuration. `Config()` gives the built-in lane-keeping defaults.
#[pyclass(module = "pylanekeep", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: CoreConfig,
}

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Self {
            inner: CoreConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CoreConfig::load(path).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    /// Raises `ValueError` naming the offending key.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.scenario.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.scenario.seed = v;
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.scenario.steps
    }
    #[setter]
    fn set_steps(&mut self, v: usize) {
        self.inner.scenario.steps = v;
    }

    #[getter]
    fn x0(&self) -> [f64; 4] {
        self.inner.scenario.x0
    }
    #[setter]
    fn set_x0(&mut self, v: [f64; 4]) {
        self.inner.scenario.x0 = v;
    }

    #[getter]
    fn v0(&self) -> f64 {
        self.inner.scenario.v0
    }
    #[setter]
    fn set_v0(&mut self, v: f64) {
        self.inner.scenario.v0 = v;
    }

    #[getter]
    fn v_ref(&self) -> f64 {
        self.inner.scenario.v_ref
    }
    #[setter]
    fn set_v_ref(&mut self, v: f64) {
        self.inner.scenario.v_ref = v;
    }

    #[getter]
    fn disturbance(&self) -> bool {
        self.inner.scenario.disturbance
    }
    #[setter]
    fn set_disturbance(&mut self, v: bool) {
        self.inner.scenario.disturbance = v;
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.mpc.horizon
    }
    #[setter]
    fn set_horizon(&mut self, v: usize) {
        self.inner.mpc.horizon = v;
    }

    #[getter]
    fn delta_unc(&self) -> f64 {
        self.inner.mpc.delta_unc
    }
    #[setter]
    fn set_delta_unc(&mut self, v: f64) {
        self.inner.mpc.delta_unc = v;
    }

    /// `"speed"`, `"relative"` or `"additive"`.
    #[getter]
    fn delta_mode(&self) -> &'static str {
        match self.inner.mpc.delta_mode {
            DeltaMode::Relative => "relative",
            DeltaMode::Additive => "additive",
            DeltaMode::Speed => "speed",
        }
    }
    #[setter]
    fn set_delta_mode(&mut self, v: &str) -> PyResult<()> {
        self.inner.mpc.delta_mode = v.parse().map_err(err)?;
        Ok(())
    }

    #[getter]
    fn tighten_w(&self) -> bool {
        self.inner.mpc.tighten_w
    }
    #[setter]
    fn set_tighten_w(&mut self, v: bool) {
        self.inner.mpc.tighten_w = v;
    }

    #[getter]
    fn delta_max(&self) -> f64 {
        self.inner.mpc.delta_max
    }

    /// Hash of the lateral model an artifact must have been built for.
    fn model_hash(&self) -> PyResult<String> {
        Ok(self.inner.lateral_model().map_err(err)?.hash())
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(v0={}, v_ref={}, steps={}, seed={}, delta_unc={}, delta_mode={:?})",
            self.inner.scenario.v0,
            self.inner.scenario.v_ref,
            self.inner.scenario.steps,
            self.inner.scenario.seed,
            self.inner.mpc.delta_unc,
            self.delta_mode()
        )
    }
}

/// Gain schedule plus robust invariant set, integrity-checked on load.
#[pyclass(module = "pylanekeep", skip_from_py_object)]
#[derive(Clone)]
struct Artifact {
    inner: CoreArtifact,
}

#[pymethods]
impl Artifact {
    /// Runs the offline design for `config`; `check` Monte-Carlo samples are
    /// validated before returning (0 skips).
    #[staticmethod]
    #[pyo3(signature = (config, check = 1000))]
    fn synthesize(py: Python<'_>, config: &Config, check: usize) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let out = py
            .detach(move || {
                let model = cfg.lateral_model()?;
                let (q, r) = cfg.synthesis_weights();
                let opts = SynthesisOptions {
                    rpi_max_iter: cfg.mpc.rpi_max_iter,
                    validation_samples: check,
                    seed: cfg.scenario.seed,
                };
                syn::synthesize(&model, &q, &r, &opts)
            })
            .map_err(err)?;
        if let Some(rep) = out.validation.as_ref().filter(|r| !r.passed()) {
            return Err(PyRuntimeError::new_err(format!(
                "invariance check failed: {} violations, worst margin {:e}",
                rep.violations, rep.worst_margin
            )));
        }
        Ok(Self { inner: out.artifact })
    }

    /// Loads and verifies a file; with `config` the model hash must match too.
    #[staticmethod]
    #[pyo3(signature = (path, config = None))]
    fn load(path: &str, config: Option<&Config>) -> PyResult<Self> {
        let hash = config.map(|c| c.model_hash()).transpose()?;
        syn::load_artifact(path, hash.as_deref()).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CoreArtifact::from_json(text, None).map(|inner| Self { inner }).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        syn::save_artifact(path, &self.inner).map_err(err)
    }

    #[getter]
    fn model_hash(&self) -> String {
        self.inner.model_hash.clone()
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.inner.rpi.n_vertices()
    }

    #[getter]
    fn n_facets(&self) -> usize {
        self.inner.rpi.n_facets()
    }

    /// Vertex gains `[K_0, K_1]`, each a 1 x 4 row.
    fn gains(&self) -> Vec<Vec<f64>> {
        (0..2).map(|j| self.inner.gains.k(j).iter().copied().collect()).collect()
    }

    /// Gain and terminal matrix interpolated at scheduling parameter `p`.
    fn gain_at(&self, p: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let ip = self.inner.gains.interpolate(p);
        (ip.k.iter().copied().collect(), rows_of(&ip.p))
    }

    /// The invariant set as an H-polytope.
    fn invariant_set(&self) -> HPolytope {
        HPolytope {
            inner: self.inner.rpi.h.clone(),
        }
    }

    fn vertices(&self) -> Vec<Vec<f64>> {
        self.inner.rpi.v.vertices().iter().map(|v| v.iter().copied().collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Artifact(n_vertices={}, n_facets={}, model_hash={:?})",
            self.n_vertices(),
            self.n_facets(),
            &self.inner.model_hash[..12.min(self.inner.model_hash.len())]
        )
    }
}

/// Halfspace polytope `{x : G x <= h}`.
#[pyclass(module = "pylanekeep", skip_from_py_object)]
#[derive(Clone)]
struct HPolytope {
    inner: CoreH,
}

#[pymethods]
impl HPolytope {
    #[new]
    fn new(g: Vec<Vec<f64>>, h: Vec<f64>) -> PyResult<Self> {
        let n = g.first().map_or(0, Vec::len);
        let gm = matrix(&g, n, "G")?;
        CoreH::new(gm, DVector::from_vec(h)).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_box(lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Self> {
        CoreH::from_box(&lo, &hi).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn g(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.g())
    }

    fn h(&self) -> Vec<f64> {
        self.inner.h().iter().copied().collect()
    }

    #[pyo3(signature = (x, tol = 1e-9))]
    fn contains(&self, x: Vec<f64>, tol: f64) -> PyResult<bool> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err("point has the wrong dimension"));
        }
        Ok(self.inner.contains(&DVector::from_vec(x), tol))
    }

    /// `max over the set of d'x`.
    fn support(&self, d: Vec<f64>) -> PyResult<f64> {
        self.inner.support(&DVector::from_vec(d)).map_err(err)
    }

    fn vertices(&self) -> PyResult<Vec<Vec<f64>>> {
        let v = self.inner.vertex_enumeration().map_err(err)?;
        Ok(v.vertices().iter().map(|p| p.iter().copied().collect()).collect())
    }

    fn remove_redundant(&self) -> PyResult<Self> {
        self.inner.remove_redundant().map(|inner| Self { inner }).map_err(err)
    }
}

/// Tube MPC for the lateral error dynamics.
#[pyclass(module = "pylanekeep")]
struct LateralController {
    inner: CoreLateral,
    cfg: CoreConfig,
}

#[pymethods]
impl LateralController {
    #[new]
    fn new(config: &Config, artifact: &Artifact) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let model = cfg.lateral_model().map_err(err)?;
        let inner = CoreLateral::new(&model, &artifact.inner, cfg.tube_config()).map_err(err)?;
        Ok(Self { inner, cfg })
    }

    /// One step at state `x` and speed `v`, with `v_pred` the predicted
    /// speeds `v_1 .. v_N` from the longitudinal controller.
    fn solve<'py>(&self, py: Python<'py>, x: [f64; 4], v: f64, v_pred: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let model = self.inner.model();
        let m = &self.cfg.mpc;
        let tube = build_scheduling_tube(v, &v_pred, m.delta_unc, m.delta_mode, model).map_err(err)?;
        let sol = self.inner.solve(&DVector::from_row_slice(&x), &tube).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("status", status_name(sol.status))?;
        d.set_item("delta_cmd", sol.delta_cmd)?;
        d.set_item("objective", sol.objective)?;
        d.set_item("alpha", sol.alpha.iter().copied().collect::<Vec<_>>())?;
        d.set_item("z", rows_of(&sol.z))?;
        d.set_item("g", sol.g.iter().copied().collect::<Vec<_>>())?;
        d.set_item("n_inequalities", sol.count.inequalities)?;
        d.set_item("n_inequalities_full", sol.count.inequalities_full)?;
        Ok(d)
    }
}

/// Closed-loop log; columns are exposed as lists.
#[pyclass(module = "pylanekeep")]
struct SimLog {
    inner: CoreLog,
    cfg: CoreConfig,
}

impl SimLog {
    fn col(&self, f: impl Fn(&lanekeep::sim::StepRecord) -> f64) -> Vec<f64> {
        self.inner.records.iter().map(f).collect()
    }
}

#[pymethods]
impl SimLog {
    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.col(|r| r.t)
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.col(|r| r.v)
    }

    #[getter]
    fn a_cmd(&self) -> Vec<f64> {
        self.col(|r| r.a_cmd)
    }

    #[getter]
    fn delta_cmd(&self) -> Vec<f64> {
        self.col(|r| r.delta_cmd)
    }

    #[getter]
    fn e_y(&self) -> Vec<f64> {
        self.col(|r| r.x[0])
    }

    /// Lateral state per step, `[e_y, e_y rate, e_psi, e_psi rate]`.
    #[getter]
    fn x(&self) -> Vec<[f64; 4]> {
        self.inner.records.iter().map(|r| r.x).collect()
    }

    #[getter]
    fn p_nominal(&self) -> Vec<f64> {
        self.col(|r| r.p_nominal)
    }

    #[getter]
    fn p_actual(&self) -> Vec<f64> {
        self.col(|r| r.p_actual)
    }

    #[getter]
    fn lateral_status(&self) -> Vec<&'static str> {
        self.inner.records.iter().map(|r| status_name(r.lat_status)).collect()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = compute_metrics(&self.inner, &self.cfg).map_err(err)?;
        metrics_dict(py, &m)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_csv(&self.inner, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        lanekeep::sim::write_csv_file(&self.inner, path).map_err(err)
    }
}

/// Runs the cascade for `seed` (the configured seed when omitted).
#[pyfunction]
#[pyo3(signature = (config, artifact, seed = None))]
fn simulate(py: Python<'_>, config: &Config, artifact: &Artifact, seed: Option<u64>) -> PyResult<SimLog> {
    let cfg = config.inner.clone();
    cfg.validate().map_err(err)?;
    let sim = Simulator::new(&cfg, &artifact.inner).map_err(err)?;
    let seed = seed.unwrap_or(cfg.scenario.seed);
    let log = py.detach(|| sim.run(seed)).map_err(err)?;
    Ok(SimLog { inner: log, cfg })
}

/// Independent runs in parallel, one per seed.
#[pyfunction]
fn simulate_batch(py: Python<'_>, config: &Config, artifact: &Artifact, seeds: Vec<u64>) -> PyResult<Vec<SimLog>> {
    let cfg = config.inner.clone();
    cfg.validate().map_err(err)?;
    let sim = Simulator::new(&cfg, &artifact.inner).map_err(err)?;
    let logs = py.detach(|| sim.run_batch(&seeds));
    logs.into_iter()
        .map(|l| {
            l.map(|inner| SimLog { inner, cfg: cfg.clone() }).map_err(err)
        })
        .collect()
}

/// Monte-Carlo invariance check of the artifact's set.
#[pyfunction]
#[pyo3(signature = (artifact, config = None, n = 10_000, seed = 0))]
fn validate<'py>(
    py: Python<'py>,
    artifact: &Artifact,
    config: Option<&Config>,
    n: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let model = cfg.lateral_model().map_err(err)?;
    let art = &artifact.inner;
    let rep = py
        .detach(|| syn::validate_invariance(&art.rpi, &model, &art.gains, n, seed))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("passed", rep.passed())?;
    d.set_item("n_samples", rep.n_samples)?;
    d.set_item("n_checks", rep.n_checks)?;
    d.set_item("violations", rep.violations)?;
    d.set_item("worst_margin", rep.worst_margin)?;
    Ok(d)
}

/// One longitudinal MPC step from speed `v` toward `v_ref` (one per step).
#[pyfunction]
#[pyo3(signature = (v, v_ref, config = None))]
fn longitudinal_step<'py>(
    py: Python<'py>,
    v: f64,
    v_ref: Vec<f64>,
    config: Option<&Config>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let model = cfg.longitudinal_model().map_err(err)?;
    let c = lanekeep::longitudinal::solve_longitudinal_step(0.0, v, &v_ref, &model, cfg.mpc.eta, cfg.mpc.zeta)
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("status", status_name(c.status))?;
    d.set_item("a_cmd", c.a_cmd)?;
    d.set_item("a_seq", c.a_seq.iter().copied().collect::<Vec<_>>())?;
    d.set_item("v_pred", c.v_pred.iter().copied().collect::<Vec<_>>())?;
    d.set_item("objective", c.objective)?;
    Ok(d)
}

/// `min 1/2 x'Px + q'x  s.t.  Gx <= h, Ax = b`.
#[pyfunction]
#[pyo3(signature = (p, q, g = None, h = None, a = None, b = None))]
fn solve_qp<'py>(
    py: Python<'py>,
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    g: Option<Vec<Vec<f64>>>,
    h: Option<Vec<f64>>,
    a: Option<Vec<Vec<f64>>>,
    b: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let n = q.len();
    let problem = QpProblem {
        p: matrix(&p, n, "P")?,
        q: DVector::from_vec(q),
        g: matrix(&g.unwrap_or_default(), n, "G")?,
        h: DVector::from_vec(h.unwrap_or_default()),
        a: matrix(&a.unwrap_or_default(), n, "A")?,
        b: DVector::from_vec(b.unwrap_or_default()),
    };
    let sol = core_solve_qp(&problem).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("status", status_name(sol.status))?;
    d.set_item("x", sol.x.iter().copied().collect::<Vec<_>>())?;
    d.set_item("objective", sol.objective)?;
    d.set_item("iterations", sol.iterations)?;
    Ok(d)
}

#[pymodule]
fn pylanekeep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Artifact>()?;
    m.add_class::<HPolytope>()?;
    m.add_class::<LateralController>()?;
    m.add_class::<SimLog>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_batch, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(longitudinal_step, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    Ok(())
}
