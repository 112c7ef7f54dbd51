//! Python bindings: scenes, rendering, dynamics, policies, training and the
//! gradient check.

use flownav::bench::{run_benchmark, BenchConfig};
use flownav::camera::{CameraIntrinsics, CameraPose};
use flownav::checkpoint::Checkpoint;
use flownav::config::Config;
use flownav::dynamics::{self, ControlCommand, DynamicsConfig, QuadState};
use flownav::eval::{evaluate, EvalRequest};
use flownav::flow::{self as fl, FlowNoiseConfig};
use flownav::gradcheck::{grad_check as run_grad_check, GradCheckConfig};
use flownav::math::Vec3;
use flownav::policy::{init_params, PolicyParams};
use flownav::render;
use flownav::scene::{self as sc, Aabb, Primitive};
use flownav::train::{train as run_train, Trainer};
use flownav::{io, Error};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::Path;

type V3 = (f64, f64, f64);

fn v3((x, y, z): V3) -> Vec3 {
    Vec3::new(x, y, z)
}

fn tup(v: Vec3) -> V3 {
    (v.x, v.y, v.z)
}

fn err(e: Error) -> PyErr {
    match e {
        Error::Path { .. } | Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Training(_) | Error::Generation(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Obstacle scene.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Scene {
    inner: sc::Scene,
}

#[pymethods]
impl Scene {
    /// Empty scene with the default 40 x 40 x 5 m bounds.
    #[new]
    fn new() -> Self {
        Scene {
            inner: sc::Scene::empty(sc::GenConfig::default().bounds()),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (seed, density=None))]
    fn generate(seed: u64, density: Option<f64>) -> PyResult<Self> {
        let mut cfg = sc::GenConfig::default();
        if let Some(d) = density {
            cfg.density = d;
        }
        Ok(Scene {
            inner: sc::generate_scene(seed, &cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Scene {
            inner: io::scene_from_str(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        io::scene_to_string(&self.inner).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Scene {
            inner: io::read_scene(Path::new(path)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_scene(Path::new(path), &self.inner).map_err(err)
    }

    fn add_sphere(&mut self, center: V3, radius: f64) -> PyResult<()> {
        self.push(Primitive::Sphere {
            center: v3(center),
            radius,
        })
    }

    fn add_box(&mut self, center: V3, half_extents: V3) -> PyResult<()> {
        self.push(Primitive::Box {
            center: v3(center),
            half_extents: v3(half_extents),
        })
    }

    fn add_cylinder(&mut self, center: V3, radius: f64, height: f64) -> PyResult<()> {
        self.push(Primitive::Cylinder {
            center: v3(center),
            radius,
            height,
        })
    }

    /// Signed distance to the closest surface and the unit direction toward it.
    fn query(&self, point: V3) -> (f64, V3) {
        let q = self.inner.query(v3(point));
        (q.distance, tup(q.direction))
    }

    fn __len__(&self) -> usize {
        self.inner.primitives.len()
    }

    fn __repr__(&self) -> String {
        format!("Scene(primitives={}, ground={:?})", self.inner.primitives.len(), self.inner.ground_plane_z)
    }
}

impl Scene {
    fn push(&mut self, p: Primitive) -> PyResult<()> {
        let mut prims = self.inner.primitives.clone();
        prims.push(p);
        let b: Aabb = self.inner.bounds;
        self.inner = sc::Scene::new(prims, b, self.inner.ground_plane_z).map_err(err)?;
        Ok(())
    }
}

/// Optical-axis depth image (metres, row-major).
#[pyclass(skip_from_py_object)]
struct DepthImage {
    inner: render::DepthImage,
}

#[pymethods]
impl DepthImage {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn values(&self) -> Vec<f32> {
        self.inner.values.clone()
    }

    fn at(&self, row: usize, col: usize) -> PyResult<f32> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err("pixel out of range"));
        }
        Ok(self.inner.at(row, col))
    }

    /// Writes a 16-bit PGM and the exact float sidecar next to it.
    fn save(&self, path: &str) -> PyResult<()> {
        io::write_depth(Path::new(path), &self.inner).map_err(err)
    }
}

/// Per-pixel flow `(u, v)` in pixels.
#[pyclass(skip_from_py_object)]
struct FlowImage {
    inner: fl::FlowImage,
}

#[pymethods]
impl FlowImage {
    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn values(&self) -> Vec<(f32, f32)> {
        self.inner.values.iter().map(|&[u, v]| (u, v)).collect()
    }

    fn at(&self, row: usize, col: usize) -> PyResult<(f32, f32)> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err("pixel out of range"));
        }
        let [u, v] = self.inner.at(row, col);
        Ok((u, v))
    }

    /// Middlebury `.flo`.
    fn save(&self, path: &str) -> PyResult<()> {
        io::write_flo(Path::new(path), &self.inner).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (scene, position, yaw, width=64, height=48, fov=90.0, far=30.0))]
fn render_depth(
    scene: &Scene,
    position: V3,
    yaw: f64,
    width: usize,
    height: usize,
    fov: f64,
    far: f64,
) -> PyResult<DepthImage> {
    let intr = CameraIntrinsics::new(width, height, fov, far).map_err(err)?;
    let inner = render::ray_depth(&scene.inner, CameraPose::new(v3(position), yaw), &intr).map_err(err)?;
    Ok(DepthImage { inner })
}

/// Flow from the previous depth image to a camera at `position`, `yaw`.
#[pyfunction]
fn reprojection_flow(prev: &DepthImage, position: V3, yaw: f64) -> PyResult<FlowImage> {
    let d = &prev.inner;
    let inner = fl::reprojection_flow(d, d.pose, CameraPose::new(v3(position), yaw), &d.intrinsics).map_err(err)?;
    Ok(FlowImage { inner })
}

/// Instantaneous flow (pixels/s) for a camera-frame twist.
#[pyfunction]
fn analytic_flow(depth: &DepthImage, linear: V3, angular: V3) -> PyResult<FlowImage> {
    let twist = fl::BodyTwist {
        v_body: v3(linear),
        omega_body: v3(angular),
    };
    let inner = fl::analytic_flow(&depth.inner, &twist, &depth.inner.intrinsics).map_err(err)?;
    Ok(FlowImage { inner })
}

/// Point-mass quadrotor with the default response lag and command delay.
#[pyclass(skip_from_py_object)]
struct Quad {
    state: QuadState,
    cfg: DynamicsConfig,
}

#[pymethods]
impl Quad {
    #[new]
    #[pyo3(signature = (position, velocity=(0.0, 0.0, 0.0), yaw=0.0))]
    fn new(position: V3, velocity: V3, yaw: f64) -> Self {
        let cfg = DynamicsConfig::default();
        Quad {
            state: QuadState::with_velocity(v3(position), v3(velocity), yaw, &cfg),
            cfg,
        }
    }

    /// Advances one step with commanded acceleration `command` (m/s^2).
    fn step(&mut self, command: V3) -> PyResult<()> {
        self.state = dynamics::step(&self.state, ControlCommand(v3(command)), &self.cfg).map_err(err)?;
        Ok(())
    }

    #[getter]
    fn position(&self) -> V3 {
        tup(self.state.position)
    }

    #[getter]
    fn velocity(&self) -> V3 {
        tup(self.state.velocity)
    }

    #[getter]
    fn acceleration(&self) -> V3 {
        tup(self.state.acceleration)
    }

    #[getter]
    fn time(&self) -> f64 {
        self.state.time
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.cfg.dt
    }
}

/// Policy parameters plus the config they were trained with.
#[pyclass(skip_from_py_object)]
struct Policy {
    params: PolicyParams,
    config: Config,
}

#[pymethods]
impl Policy {
    /// Freshly initialized policy for the default config.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn init(seed: u64) -> PyResult<Self> {
        let config = Config::default();
        Ok(Policy {
            params: init_params(&config.arch, seed).map_err(err)?,
            config,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let c = Checkpoint::load(Path::new(path)).map_err(err)?;
        Ok(Policy {
            params: c.params,
            config: c.config,
        })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Held-out evaluation; returns success/collision rates, mean speed and
    /// tracking error.
    #[pyo3(signature = (episodes=20, speed=3.0, noise_sigma=0.0, threads=0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        episodes: usize,
        speed: f64,
        noise_sigma: f64,
        threads: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let req = EvalRequest {
            episodes,
            speed,
            noise: FlowNoiseConfig {
                gaussian_sigma: noise_sigma,
                ..FlowNoiseConfig::default()
            },
            threads,
            ..EvalRequest::from_config(&self.config)
        };
        let m = py.detach(|| evaluate(&self.params, &self.config, &req)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("success_rate", m.success_rate)?;
        d.set_item("collision_rate", m.collision_rate)?;
        d.set_item("mean_speed", m.mean_speed)?;
        d.set_item("tracking_error", m.tracking_error)?;
        d.set_item("episodes", m.episodes.len())?;
        Ok(d)
    }
}

/// Compares BPTT gradients with central differences on a short rollout.
#[pyfunction]
#[pyo3(signature = (steps=20, collision=false, alpha=0.0, seed=0))]
fn grad_check<'py>(py: Python<'py>, steps: usize, collision: bool, alpha: f64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = GradCheckConfig {
        steps,
        collision,
        alpha,
        seed,
        ..GradCheckConfig::default()
    };
    let r = py.detach(|| run_grad_check(&cfg)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("max_rel_error", r.max_rel_error)?;
    d.set_item("n_params", r.n_params)?;
    d.set_item("loss", r.loss)?;
    Ok(d)
}

/// Trains from a TOML config (or defaults) and returns the final
/// checkpoint path and last total loss.
#[pyfunction]
#[pyo3(signature = (out, config=None, iterations=None))]
fn train(py: Python<'_>, out: &str, config: Option<&str>, iterations: Option<usize>) -> PyResult<(String, f64)> {
    let mut cfg = match config {
        Some(p) => Config::load(Path::new(p)).map_err(err)?,
        None => Config::default(),
    };
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    let summary = py
        .detach(|| {
            let mut t = Trainer::new(cfg)?;
            run_train(&mut t, Path::new(out))
        })
        .map_err(err)?;
    let loss = summary.records.last().map_or(f64::NAN, |r| r.loss.total);
    Ok((summary.checkpoint.display().to_string(), loss))
}

/// Aggregate depth + flow frames per second.
#[pyfunction]
#[pyo3(signature = (height=48, width=64, threads=1, frames_per_thread=500))]
fn benchmark(py: Python<'_>, height: usize, width: usize, threads: usize, frames_per_thread: usize) -> PyResult<f64> {
    let cfg = BenchConfig {
        height,
        width,
        threads,
        frames_per_thread,
        ..BenchConfig::default()
    };
    Ok(py.detach(|| run_benchmark(&cfg)).map_err(err)?.frames_per_sec)
}

#[pymodule(name = "flownav")]
pub fn flownav_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<DepthImage>()?;
    m.add_class::<FlowImage>()?;
    m.add_class::<Quad>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(render_depth, m)?)?;
    m.add_function(wrap_pyfunction!(reprojection_flow, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_flow, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    Ok(())
}
