//! Python bindings for the core geometric types, the planar-scene
//! simulator, and trial execution. Built as `subgoal_servo_py`; see
//! `python/smoke_test.py` for usage.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use subgoal_servo::executor::{run_trial, Controller, RunConfig};
use subgoal_servo::experiment::{cam_axis_baseline, rtvs_final_baseline};
use subgoal_servo::foresight::KeyframeOracle;
use subgoal_servo::geometry;
use subgoal_servo::scenario;
use subgoal_servo::scene;

fn runtime_err(e: subgoal_servo::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Rigid camera-in-world transform.
#[pyclass(name = "Pose")]
#[derive(Clone)]
struct PyPose {
    inner: geometry::Pose,
}

#[pymethods]
impl PyPose {
    /// From `[qw, qx, qy, qz, tx, ty, tz]`.
    #[new]
    fn new(coeffs: [f64; 7]) -> Self {
        PyPose { inner: geometry::Pose::from_array(coeffs) }
    }

    #[staticmethod]
    fn identity() -> Self {
        PyPose { inner: geometry::Pose::identity() }
    }

    fn to_list(&self) -> [f64; 7] {
        self.inner.to_array()
    }

    fn compose(&self, other: &PyPose) -> PyPose {
        PyPose { inner: self.inner.compose(&other.inner) }
    }

    fn inverse(&self) -> PyPose {
        PyPose { inner: self.inner.inverse() }
    }

    fn translation(&self) -> [f64; 3] {
        self.inner.translation.into()
    }

    fn __repr__(&self) -> String {
        let a = self.inner.to_array();
        format!(
            "Pose(q=[{:.4}, {:.4}, {:.4}, {:.4}], t=[{:.4}, {:.4}, {:.4}])",
            a[0], a[1], a[2], a[3], a[4], a[5], a[6]
        )
    }
}

/// Body-frame camera velocity `[vx, vy, vz, wx, wy, wz]`.
#[pyclass(name = "Twist")]
#[derive(Clone)]
struct PyTwist {
    inner: geometry::Twist,
}

#[pymethods]
impl PyTwist {
    #[new]
    fn new(coeffs: [f64; 6]) -> Self {
        PyTwist { inner: geometry::Twist::from_slice(&coeffs) }
    }

    fn to_list(&self) -> [f64; 6] {
        self.inner.to_array()
    }

    fn linear_speed(&self) -> f64 {
        self.inner.linear_speed()
    }

    fn angular_speed(&self) -> f64 {
        self.inner.angular_speed()
    }
}

/// Scene + start pose + reference trajectory; the unit of experimentation.
#[pyclass(name = "Scenario")]
#[derive(Clone)]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task.to_string()
    }

    #[getter]
    fn prompt(&self) -> String {
        self.inner.prompt.clone()
    }

    fn start_pose(&self) -> PyPose {
        PyPose { inner: self.inner.start_pose }
    }

    fn target_pose(&self) -> PyPose {
        PyPose { inner: self.inner.target_pose() }
    }

    fn keyframes(&self) -> Vec<PyPose> {
        self.inner.keyframes.iter().map(|&p| PyPose { inner: p }).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(runtime_err)
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<PyScenario> {
        Ok(PyScenario { inner: scenario::Scenario::from_json(json).map_err(runtime_err)? })
    }

    /// Renders the scene from a pose: `(pixels, width, height)` with pixels
    /// row-major in [0, 1].
    fn render(&self, pose: &PyPose) -> (Vec<f64>, usize, usize) {
        let (img, _) = scene::render(&self.inner.scene, &pose.inner, &self.inner.intrinsics);
        let w = img.width();
        let h = img.height();
        (img.pixels().to_vec(), w, h)
    }
}

/// Outcome summary of one executed trial.
#[pyclass(name = "TrialReport")]
#[derive(Clone)]
struct PyTrialReport {
    #[pyo3(get)]
    outcome: String,
    #[pyo3(get)]
    trans_err: f64,
    #[pyo3(get)]
    rot_err: f64,
    #[pyo3(get)]
    steps: usize,
}

#[pymethods]
impl PyTrialReport {
    fn is_success(&self) -> bool {
        self.outcome == "success"
    }

    fn __repr__(&self) -> String {
        format!(
            "TrialReport(outcome={}, trans_err={:.4}, rot_err={:.4}, steps={})",
            self.outcome, self.trans_err, self.rot_err, self.steps
        )
    }
}

#[pyfunction]
fn make_door_scenario(seed: u64) -> PyScenario {
    PyScenario { inner: scenario::make_door_scenario(seed) }
}

#[pyfunction]
fn make_reach_scenario(seed: u64) -> PyScenario {
    PyScenario { inner: scenario::make_reach_scenario(seed) }
}

#[pyfunction]
fn pose_error(a: &PyPose, b: &PyPose) -> (f64, f64) {
    geometry::pose_error(&a.inner, &b.inner)
}

#[pyfunction]
fn integrate_twist(pose: &PyPose, twist: &PyTwist, dt: f64) -> PyResult<PyPose> {
    if dt <= 0.0 {
        return Err(PyValueError::new_err("dt must be > 0"));
    }
    Ok(PyPose { inner: geometry::integrate_twist(&pose.inner, &twist.inner, dt) })
}

/// The two interaction-matrix rows at normalized coordinates `(x, y)` and
/// depth `z`.
#[pyfunction]
fn interaction_row(x: f64, y: f64, z: f64) -> PyResult<([f64; 6], [f64; 6])> {
    let rows = subgoal_servo::ibvs::interaction_row(x, y, z).map_err(runtime_err)?;
    Ok((rows.x_row, rows.y_row))
}

/// Mean absolute intensity difference in 0-255 units between two renders.
#[pyfunction]
fn photometric_error(a: Vec<f64>, b: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    // Only the dimensions matter for the comparison; use unit focal lengths.
    let intr = subgoal_servo::Intrinsics::new(1.0, 1.0, 0.0, 0.0, width, height)
        .map_err(runtime_err)?;
    let ia = subgoal_servo::ImageBuffer::from_pixels(intr, a).map_err(runtime_err)?;
    let ib = subgoal_servo::ImageBuffer::from_pixels(intr, b).map_err(runtime_err)?;
    subgoal_servo::flow::photometric_error(&ia, &ib).map_err(runtime_err)
}

/// Executes one trial of a method on the scenario.
///
/// `method`: imagine2servo | rtvs-final | cam-axis.
/// `config_json`: optional JSON object overriding fields of the run
/// configuration (same schema as the CLI config file's `run` section).
#[pyfunction]
#[pyo3(signature = (scenario, method = "imagine2servo", config_json = None))]
fn run_method(scenario: &PyScenario, method: &str, config_json: Option<&str>) -> PyResult<PyTrialReport> {
    let mut cfg = RunConfig::default();
    if let Some(text) = config_json {
        let mut value = serde_json::to_value(cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let patch: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        merge(&mut value, patch);
        cfg = serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    let result = match method {
        "imagine2servo" => {
            let controller = Controller::from_config(&cfg);
            let mut oracle = KeyframeOracle::new(&scenario.inner, &cfg.oracle).map_err(runtime_err)?;
            run_trial(&scenario.inner, &cfg, &mut oracle, &controller).map_err(runtime_err)?
        }
        "rtvs-final" => rtvs_final_baseline(&scenario.inner, &cfg).map_err(runtime_err)?,
        "cam-axis" => cam_axis_baseline(&scenario.inner, &cfg).map_err(runtime_err)?,
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    Ok(PyTrialReport {
        outcome: result.outcome.to_string(),
        trans_err: result.trans_err,
        rot_err: result.rot_err,
        steps: result.steps,
    })
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

#[pymodule]
fn subgoal_servo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyTwist>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrialReport>()?;
    m.add_function(wrap_pyfunction!(make_door_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(make_reach_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(pose_error, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_twist, m)?)?;
    m.add_function(wrap_pyfunction!(interaction_row, m)?)?;
    m.add_function(wrap_pyfunction!(photometric_error, m)?)?;
    m.add_function(wrap_pyfunction!(run_method, m)?)?;
    Ok(())
}
