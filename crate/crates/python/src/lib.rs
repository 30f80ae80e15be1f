//! Python bindings: poses, feature pyramids, alignment, synthetic pairs and
//! evaluation metrics.

use featalign_core::align::{align_coarse_to_fine, read_points_file, DampingMode, LmConfig, SparsePoint};
use featalign_core::error::Error;
use featalign_core::eval::{self, run_benchmark, BenchmarkConfig, InitMode};
use featalign_core::features::{self, FeatureMap, FeaturePyramid};
use featalign_core::geometry::{self, CameraIntrinsics, SE3Pose, Twist};
use featalign_core::init::{corr_pose_init, posenet_loss, CorrInitConfig, EulerPose, POSENET_LAMBDA};
use featalign_core::synth::{generate_pair, DatasetConfig, MagnitudeClass, Manifest, PairSpec, PhotometricParams};
use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Rigid transform from the reference to the target camera frame.
#[pyclass(name = "Pose", module = "featalign", frozen, from_py_object)]
#[derive(Clone)]
struct PyPose(SE3Pose);

#[pymethods]
impl PyPose {
    #[staticmethod]
    fn identity() -> Self {
        PyPose(SE3Pose::identity())
    }

    /// Exponential of a twist `(vx, vy, vz, wx, wy, wz)`.
    #[staticmethod]
    fn exp(twist: [f64; 6]) -> Self {
        PyPose(SE3Pose::exp(&Twist::from_slice(&twist)))
    }

    /// From rows of `[R | t]`.
    #[staticmethod]
    fn from_matrix(rows: [[f64; 4]; 3]) -> PyResult<Self> {
        let r = Matrix3::from_fn(|i, j| rows[i][j]);
        let t = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        SE3Pose::from_parts(r, t, geometry::pose_io::PARSE_ORTHONORMAL_TOL).map(PyPose).map_err(to_py)
    }

    /// Parses the twelve-number text form.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        geometry::parse_pose(text).map(PyPose).map_err(to_py)
    }

    fn to_text(&self) -> String {
        geometry::format_pose(&self.0)
    }

    fn matrix(&self) -> [[f64; 4]; 3] {
        let m = self.0.to_matrix3x4();
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }

    fn log(&self) -> PyResult<[f64; 6]> {
        let t = self.0.log().map_err(to_py)?;
        Ok(std::array::from_fn(|i| t.0[i]))
    }

    fn inverse(&self) -> Self {
        PyPose(self.0.inverse())
    }

    /// `self * other`: apply `other` first.
    fn compose(&self, other: &PyPose) -> Self {
        PyPose(self.0.compose(&other.0))
    }

    fn __mul__(&self, other: &PyPose) -> Self {
        self.compose(other)
    }

    fn transform_point(&self, x: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&Vector3::from(x)).into()
    }

    fn translation(&self) -> [f64; 3] {
        (*self.0.translation()).into()
    }

    /// Intrinsic XYZ Euler angles in radians.
    fn euler(&self) -> [f64; 3] {
        EulerPose::from_pose(&self.0).r_euler.into()
    }

    fn __repr__(&self) -> String {
        format!("Pose({})", self.to_text())
    }
}

#[pyclass(name = "Intrinsics", module = "featalign", frozen, from_py_object)]
#[derive(Clone)]
struct PyIntrinsics(CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> PyResult<Self> {
        CameraIntrinsics::new(fx, fy, cx, cy, width, height).map(PyIntrinsics).map_err(to_py)
    }

    /// Intrinsics of pyramid level `1..=4`.
    fn at_level(&self, level: usize) -> PyResult<Self> {
        if !(1..=geometry::NUM_LEVELS).contains(&level) {
            return Err(PyValueError::new_err(format!("level {level} is not in 1..=4")));
        }
        Ok(PyIntrinsics(self.0.at_level(level)))
    }

    #[getter]
    fn size(&self) -> (usize, usize) {
        (self.0.width, self.0.height)
    }

    fn __repr__(&self) -> String {
        let k = &self.0;
        format!("Intrinsics(fx={}, fy={}, cx={}, cy={}, width={}, height={})", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    }
}

/// Dense `height x width x channels` feature map.
#[pyclass(name = "FeatureMap", module = "featalign", frozen, from_py_object)]
#[derive(Clone)]
struct PyFeatureMap(FeatureMap);

#[pymethods]
impl PyFeatureMap {
    /// `data` is row-major with channels innermost.
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        FeatureMap::new(width, height, channels, data).map(PyFeatureMap).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.height(), self.0.width(), self.0.channels())
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    /// Bilinear sample at column `u`, row `v`.
    fn sample(&self, u: f64, v: f64) -> PyResult<Vec<f64>> {
        self.0.sample_value(&nalgebra::Vector2::new(u, v)).map_err(to_py)
    }
}

#[pyclass(name = "FeaturePyramid", module = "featalign", frozen, from_py_object)]
#[derive(Clone)]
struct PyFeaturePyramid(FeaturePyramid);

#[pymethods]
impl PyFeaturePyramid {
    /// Four maps, coarsest first.
    #[new]
    fn new(levels: Vec<PyFeatureMap>) -> PyResult<Self> {
        FeaturePyramid::new(levels.into_iter().map(|m| m.0).collect()).map(PyFeaturePyramid).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        features::load_feature_pyramid(path).map(PyFeaturePyramid).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        features::save_feature_pyramid(path, &self.0).map_err(to_py)
    }

    fn level(&self, level: usize) -> PyResult<PyFeatureMap> {
        if !(1..=geometry::NUM_LEVELS).contains(&level) {
            return Err(PyValueError::new_err(format!("level {level} is not in 1..=4")));
        }
        Ok(PyFeatureMap(self.0.level(level).clone()))
    }
}

fn to_points(points: &[(f64, f64, f64)]) -> Vec<SparsePoint> {
    points.iter().map(|&(u, v, d)| SparsePoint::new(u, v, d)).collect()
}

/// Reads a points file into `([(u, v, depth)], Intrinsics)`.
#[pyfunction]
fn read_points(path: &str) -> PyResult<(Vec<(f64, f64, f64)>, PyIntrinsics)> {
    let (points, k) = read_points_file(path).map_err(to_py)?;
    Ok((points.iter().map(|p| (p.pixel.x, p.pixel.y, p.depth)).collect(), PyIntrinsics(k)))
}

/// Coarse-to-fine alignment. Returns `(pose, converged, iterations)`.
#[pyfunction]
#[pyo3(signature = (reference, target, points, intrinsics, init = None, init_mode = "identity", damping = "marquardt", levels = None))]
#[allow(clippy::too_many_arguments)]
fn align(
    py: Python<'_>,
    reference: &PyFeaturePyramid,
    target: &PyFeaturePyramid,
    points: Vec<(f64, f64, f64)>,
    intrinsics: &PyIntrinsics,
    init: Option<PyPose>,
    init_mode: &str,
    damping: &str,
    levels: Option<Vec<usize>>,
) -> PyResult<(PyPose, bool, usize)> {
    let mut lm = LmConfig { damping_mode: damping.parse::<DampingMode>().map_err(to_py)?, ..Default::default() };
    if let Some(l) = levels {
        lm.levels = l;
    }
    let mode: InitMode = init_mode.parse().map_err(to_py)?;
    let pts = to_points(&points);
    let (r, t, k) = (&reference.0, &target.0, &intrinsics.0);
    py.detach(|| {
        let start = match (init, mode) {
            (Some(p), _) => p.0,
            (None, InitMode::Identity) => SE3Pose::identity(),
            (None, InitMode::Corr) => corr_pose_init(r, t, &pts, k, &lm, &CorrInitConfig::default()),
        };
        let res = align_coarse_to_fine(r, t, &pts, &start, k, &lm).map_err(to_py)?;
        let iterations = res.total_iterations();
        Ok((PyPose(res.pose), res.converged, iterations))
    })
}

/// A synthetic pair: `(reference, target, points, intrinsics, gt_pose)`.
#[pyfunction]
#[pyo3(signature = (seed, magnitude = "small", num_points = 300))]
fn synthetic_pair(
    seed: u64,
    magnitude: &str,
    num_points: usize,
) -> PyResult<(PyFeaturePyramid, PyFeaturePyramid, Vec<(f64, f64, f64)>, PyIntrinsics, PyPose)> {
    let class: MagnitudeClass = magnitude.parse().map_err(to_py)?;
    let cfg = DatasetConfig { num_points, ..Default::default() };
    let spec = PairSpec { id: format!("pair_{seed}"), seed, class, photometric: PhotometricParams::default() };
    let p = generate_pair(&spec, &cfg).map_err(to_py)?;
    let points = p.points.iter().map(|q| (q.pixel.x, q.pixel.y, q.depth)).collect();
    Ok((PyFeaturePyramid(p.reference), PyFeaturePyramid(p.target), points, PyIntrinsics(p.intrinsics), PyPose(p.gt_pose)))
}

#[pyfunction]
fn translation_error(est: &PyPose, gt: &PyPose) -> f64 {
    geometry::translation_error(est.0.translation(), gt.0.translation())
}

/// Degrees.
#[pyfunction]
fn rotation_error(est: &PyPose, gt: &PyPose) -> f64 {
    geometry::rotation_error(est.0.rotation(), gt.0.rotation())
}

/// Area under the cumulative error curve up to `max_threshold`, percent.
#[pyfunction]
fn auc(errors: Vec<f64>, max_threshold: f64) -> PyResult<f64> {
    eval::auc(&errors, max_threshold).map_err(to_py)
}

/// `(thresholds, fractions)` on the 501-point grid.
#[pyfunction]
fn cumulative_curve(errors: Vec<f64>, max_threshold: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = eval::cumulative_curve(&errors, max_threshold).map_err(to_py)?;
    Ok((c.thresholds, c.fractions))
}

/// Pose regression loss between Euler-angle poses.
#[pyfunction(name = "posenet_loss")]
#[pyo3(signature = (est, gt, lambda_w = POSENET_LAMBDA))]
fn py_posenet_loss(est: &PyPose, gt: &PyPose, lambda_w: f64) -> f64 {
    posenet_loss(&EulerPose::from_pose(&est.0), &EulerPose::from_pose(&gt.0), lambda_w)
}

/// Runs a manifest and returns `{class: (t_auc, r_auc, converged, trials)}`.
#[pyfunction]
#[pyo3(signature = (manifest, init_mode = "identity"))]
fn benchmark(py: Python<'_>, manifest: &str, init_mode: &str) -> PyResult<std::collections::BTreeMap<String, (f64, f64, usize, usize)>> {
    let cfg = BenchmarkConfig { init: init_mode.parse().map_err(to_py)?, ..Default::default() };
    let path = std::path::PathBuf::from(manifest);
    py.detach(|| {
        let m = Manifest::load(&path).map_err(to_py)?;
        let root = path.parent().unwrap_or(std::path::Path::new("."));
        let report = run_benchmark(&m, root, &cfg).map_err(to_py)?;
        Ok(report.summaries.iter().map(|s| (s.class.clone(), (s.t_auc, s.r_auc, s.converged, s.trials))).collect())
    })
}

#[pymodule(name = "featalign")]
fn featalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PyFeaturePyramid>()?;
    m.add_function(wrap_pyfunction!(read_points, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_pair, m)?)?;
    m.add_function(wrap_pyfunction!(translation_error, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_error, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(cumulative_curve, m)?)?;
    m.add_function(wrap_pyfunction!(py_posenet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    Ok(())
}
