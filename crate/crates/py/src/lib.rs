//! Python bindings for the forecasting pipeline.
//!
//! Thin wrappers over the core types plus the file-level entry points,
//! compiled as the `scenecast_py` extension module. Arrays cross the
//! boundary as nested lists; shapes follow the core conventions:
//! motions are `[frames][joints][3]`, scenes `[points][3]`, contact
//! maps `[frames][joints][4]`.

use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scenecast::io::checkpoint;
use scenecast::io::formats;
use scenecast::io::synth::{self, SynthSpec};
use scenecast::stages::{full_pipeline, ContactMode, ModelSpec};
use scenecast::train::{self, TrainingConfig, TrainingMode};
use scenecast::types::{self, ContactSubset};
use scenecast::{eval, geometry, transforms, ForecastConfig};

fn py_err(e: scenecast::Error) -> PyErr {
    use scenecast::Error as E;
    match e {
        E::FileAccess { .. } | E::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn array2_from_nested(
    data: &[Vec<f64>],
    what: &str,
    cols: Option<usize>,
) -> PyResult<Array2<f64>> {
    let rows = data.len();
    let width = match cols.or_else(|| data.first().map(|r| r.len())) {
        Some(w) if w > 0 => w,
        _ => {
            return Err(PyValueError::new_err(format!(
                "{what} must be a non-empty rectangular nested list"
            )))
        }
    };
    if rows == 0 {
        return Err(PyValueError::new_err(format!(
            "{what} must hold at least one row"
        )));
    }
    let mut out = Array2::zeros((rows, width));
    for (i, row) in data.iter().enumerate() {
        if row.len() != width {
            return Err(PyValueError::new_err(format!(
                "{what}: row {i} has {} entries, expected {width}",
                row.len()
            )));
        }
        for (j, &x) in row.iter().enumerate() {
            out[[i, j]] = x;
        }
    }
    Ok(out)
}

fn array3_from_nested(data: &[Vec<Vec<f64>>], what: &str) -> PyResult<Array3<f64>> {
    let outer = data.len();
    let middle = data.first().map_or(0, |f| f.len());
    let inner = data.first().and_then(|f| f.first()).map_or(0, |r| r.len());
    if outer == 0 || middle == 0 || inner == 0 {
        return Err(PyValueError::new_err(format!(
            "{what} must be a non-empty [outer][middle][inner] nested list"
        )));
    }
    let mut out = Array3::zeros((outer, middle, inner));
    for (i, frame) in data.iter().enumerate() {
        if frame.len() != middle {
            return Err(PyValueError::new_err(format!(
                "{what}: element {i} has {} rows, expected {middle}",
                frame.len()
            )));
        }
        for (j, row) in frame.iter().enumerate() {
            if row.len() != inner {
                return Err(PyValueError::new_err(format!(
                    "{what}: element {i},{j} has {} entries, expected {inner}",
                    row.len()
                )));
            }
            for (k, &x) in row.iter().enumerate() {
                out[[i, j, k]] = x;
            }
        }
    }
    Ok(out)
}

fn nested_from_view2(a: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn nested_from_array3(a: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    a.outer_iter()
        .map(|f| f.outer_iter().map(|r| r.to_vec()).collect())
        .collect()
}

/// Joint tree with foot and wrist subsets.
#[pyclass(name = "Skeleton", module = "scenecast_py")]
struct PySkeleton {
    inner: Arc<types::Skeleton>,
}

#[pymethods]
impl PySkeleton {
    #[new]
    fn new(
        joint_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        root_index: usize,
        feet_indices: Vec<usize>,
        wrist_indices: Vec<usize>,
    ) -> PyResult<Self> {
        types::Skeleton::new(joint_names, edges, root_index, feet_indices, wrist_indices)
            .map(|s| Self { inner: Arc::new(s) })
            .map_err(py_err)
    }

    /// The built-in 21-joint humanoid used by the synthetic generator.
    #[staticmethod]
    fn default_humanoid() -> Self {
        Self {
            inner: types::Skeleton::default_humanoid(),
        }
    }

    #[getter]
    fn joint_count(&self) -> usize {
        self.inner.joint_count()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.inner.joint_names.clone()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges.clone()
    }

    #[getter]
    fn root_index(&self) -> usize {
        self.inner.root_index
    }

    #[getter]
    fn feet_indices(&self) -> Vec<usize> {
        self.inner.feet_indices.clone()
    }

    #[getter]
    fn wrist_indices(&self) -> Vec<usize> {
        self.inner.wrist_indices.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Skeleton({} joints, root {})",
            self.inner.joint_count(),
            self.inner.root_index
        )
    }
}

/// Global joint positions over time, `[frames][joints][3]` meters.
#[pyclass(name = "MotionSequence", module = "scenecast_py")]
struct PyMotionSequence {
    inner: types::MotionSequence,
}

#[pymethods]
impl PyMotionSequence {
    #[new]
    fn new(data: Vec<Vec<Vec<f64>>>, skeleton: &PySkeleton) -> PyResult<Self> {
        let array = array3_from_nested(&data, "motion data")?;
        types::MotionSequence::new(array, skeleton.inner.clone())
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    #[getter]
    fn joint_count(&self) -> usize {
        self.inner.joint_count()
    }

    #[getter]
    fn skeleton(&self) -> PySkeleton {
        PySkeleton {
            inner: self.inner.skeleton().clone(),
        }
    }

    fn data(&self) -> Vec<Vec<Vec<f64>>> {
        nested_from_array3(self.inner.data())
    }

    fn joint(&self, frame: usize, joint: usize) -> PyResult<Vec<f64>> {
        if frame >= self.inner.frame_count() || joint >= self.inner.joint_count() {
            return Err(PyIndexError::new_err(format!(
                "joint ({frame}, {joint}) out of range for {}x{}",
                self.inner.frame_count(),
                self.inner.joint_count()
            )));
        }
        Ok(self.inner.joint(frame, joint).to_vec())
    }

    /// Contiguous sub-sequence of `len` frames starting at `start`.
    fn window(&self, start: usize, len: usize) -> PyResult<Self> {
        self.inner
            .window(start, len)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// Root joint positions per frame, `[frames][3]`.
    fn root_trajectory(&self) -> Vec<Vec<f64>> {
        nested_from_view2(self.inner.root_trajectory().positions())
    }

    fn __repr__(&self) -> String {
        format!(
            "MotionSequence({} frames, {} joints)",
            self.inner.frame_count(),
            self.inner.joint_count()
        )
    }
}

/// Static scene geometry as a point cloud, `[points][3]` meters.
#[pyclass(name = "SceneCloud", module = "scenecast_py")]
struct PySceneCloud {
    inner: types::SceneCloud,
}

#[pymethods]
impl PySceneCloud {
    #[new]
    fn new(points: Vec<Vec<f64>>) -> PyResult<Self> {
        let array = array2_from_nested(&points, "scene points", Some(3))?;
        types::SceneCloud::new(array)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn points(&self) -> Vec<Vec<f64>> {
        nested_from_view2(self.inner.points())
    }

    fn point(&self, index: usize) -> PyResult<Vec<f64>> {
        if index >= self.inner.len() {
            return Err(PyIndexError::new_err(format!(
                "point {index} out of range for {} points",
                self.inner.len()
            )));
        }
        Ok(self.inner.point(index).to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SceneCloud({} points)", self.inner.len())
    }
}

/// Per-frame, per-joint contact flags and contact point coordinates.
///
/// Entry layout is `[flag, x, y, z]`; the joint axis covers only the
/// contact subset the producing model was configured with.
#[pyclass(name = "ContactMap", module = "scenecast_py")]
struct PyContactMap {
    inner: types::ContactMap,
}

#[pymethods]
impl PyContactMap {
    #[new]
    fn new(entries: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let array = array3_from_nested(&entries, "contact entries")?;
        types::ContactMap::new(array)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    #[getter]
    fn joint_count(&self) -> usize {
        self.inner.joint_count()
    }

    fn flag(&self, frame: usize, joint: usize) -> PyResult<bool> {
        self.check_index(frame, joint)?;
        Ok(self.inner.flag(frame, joint))
    }

    fn coordinate(&self, frame: usize, joint: usize) -> PyResult<Vec<f64>> {
        self.check_index(frame, joint)?;
        Ok(self.inner.coordinate(frame, joint).to_vec())
    }

    fn entries(&self) -> Vec<Vec<Vec<f64>>> {
        nested_from_array3(self.inner.entries())
    }

    fn __repr__(&self) -> String {
        format!(
            "ContactMap({} frames, {} joints)",
            self.inner.frame_count(),
            self.inner.joint_count()
        )
    }
}

impl PyContactMap {
    fn check_index(&self, frame: usize, joint: usize) -> PyResult<()> {
        if frame >= self.inner.frame_count() || joint >= self.inner.joint_count() {
            return Err(PyIndexError::new_err(format!(
                "contact ({frame}, {joint}) out of range for {}x{}",
                self.inner.frame_count(),
                self.inner.joint_count()
            )));
        }
        Ok(())
    }
}

/// Truncated orthonormal cosine basis over a fixed frame count.
#[pyclass(name = "DctBasis", module = "scenecast_py")]
struct PyDctBasis {
    inner: transforms::DctBasis,
}

#[pymethods]
impl PyDctBasis {
    #[new]
    fn new(coeffs: usize, frames: usize) -> PyResult<Self> {
        transforms::DctBasis::new(coeffs, frames)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn coeff_count(&self) -> usize {
        self.inner.coeff_count()
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    /// Basis matrix rows, `[coeffs][frames]`.
    fn matrix(&self) -> Vec<Vec<f64>> {
        nested_from_view2(self.inner.matrix())
    }

    /// Projects a `[frames][channels]` signal to `[coeffs][channels]`.
    fn encode(&self, signal: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let array = array2_from_nested(&signal, "signal", None)?;
        self.inner
            .encode(array.view())
            .map(|a| nested_from_view2(a.view()))
            .map_err(py_err)
    }

    /// Reconstructs a `[frames][channels]` signal from coefficients.
    fn decode(&self, coeffs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let array = array2_from_nested(&coeffs, "coefficients", None)?;
        self.inner
            .decode(array.view())
            .map(|a| nested_from_view2(a.view()))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "DctBasis({} coeffs over {} frames)",
            self.inner.coeff_count(),
            self.inner.frame_count()
        )
    }
}

/// Forecast geometry and model width settings.
#[pyclass(name = "ForecastConfig", module = "scenecast_py")]
struct PyForecastConfig {
    inner: ForecastConfig,
}

#[pymethods]
impl PyForecastConfig {
    #[new]
    #[pyo3(signature = (
        *,
        observed_frames = 30,
        future_frames = 60,
        joint_count = 21,
        fps = 30.0,
        dct_coeffs = 20,
        contact_threshold = 0.32,
        sample_radius = 2.5,
        sample_count = 5000,
        norm_factor = 0.2,
        hidden_dim = 64,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        observed_frames: usize,
        future_frames: usize,
        joint_count: usize,
        fps: f64,
        dct_coeffs: usize,
        contact_threshold: f64,
        sample_radius: f64,
        sample_count: usize,
        norm_factor: f64,
        hidden_dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = ForecastConfig {
            observed_frames,
            future_frames,
            joint_count,
            fps,
            dct_coeffs,
            contact_threshold,
            sample_radius,
            sample_count,
            norm_factor,
            hidden_dim,
            seed,
        };
        inner.check().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn observed_frames(&self) -> usize {
        self.inner.observed_frames
    }

    #[getter]
    fn future_frames(&self) -> usize {
        self.inner.future_frames
    }

    #[getter]
    fn joint_count(&self) -> usize {
        self.inner.joint_count
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps
    }

    #[getter]
    fn dct_coeffs(&self) -> usize {
        self.inner.dct_coeffs
    }

    #[getter]
    fn contact_threshold(&self) -> f64 {
        self.inner.contact_threshold
    }

    #[getter]
    fn sample_radius(&self) -> f64 {
        self.inner.sample_radius
    }

    #[getter]
    fn sample_count(&self) -> usize {
        self.inner.sample_count
    }

    #[getter]
    fn norm_factor(&self) -> f64 {
        self.inner.norm_factor
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn total_frames(&self) -> usize {
        self.inner.total_frames()
    }

    fn __repr__(&self) -> String {
        format!("ForecastConfig({})", self.inner.canonical_string())
    }
}

/// The three-stage forecaster: contact estimation, root trajectory,
/// and autoregressive pose decoding, with one parameter set.
#[pyclass(name = "Forecaster", module = "scenecast_py")]
struct PyForecaster {
    spec: ModelSpec,
    params: scenecast::nn::Params,
}

fn build_spec(
    config: &PyForecastConfig,
    contact_subset: &str,
    use_time_to_go: bool,
    use_end_goal: bool,
    spatial_first: bool,
) -> PyResult<ModelSpec> {
    let mut spec = ModelSpec::new(config.inner.clone());
    spec.contact_subset = ContactSubset::parse(contact_subset).map_err(py_err)?;
    spec.use_time_to_go = use_time_to_go;
    spec.use_end_goal = use_end_goal;
    spec.spatial_first = spatial_first;
    Ok(spec)
}

#[pymethods]
impl PyForecaster {
    /// Fresh forecaster with parameters drawn from the config seed.
    #[new]
    #[pyo3(signature = (
        config,
        skeleton,
        *,
        contact_subset = "all",
        use_time_to_go = true,
        use_end_goal = true,
        spatial_first = false,
    ))]
    fn new(
        config: &PyForecastConfig,
        skeleton: &PySkeleton,
        contact_subset: &str,
        use_time_to_go: bool,
        use_end_goal: bool,
        spatial_first: bool,
    ) -> PyResult<Self> {
        if skeleton.inner.joint_count() != config.inner.joint_count {
            return Err(PyValueError::new_err(format!(
                "skeleton has {} joints but config expects {}",
                skeleton.inner.joint_count(),
                config.inner.joint_count
            )));
        }
        let spec = build_spec(
            config,
            contact_subset,
            use_time_to_go,
            use_end_goal,
            spatial_first,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.inner.seed);
        let params = spec.init_params(&skeleton.inner, &mut rng);
        Ok(Self { spec, params })
    }

    /// Loads parameters from a checkpoint; the architecture settings
    /// must match the ones the checkpoint was saved with.
    #[staticmethod]
    #[pyo3(signature = (
        path,
        config,
        *,
        contact_subset = "all",
        use_time_to_go = true,
        use_end_goal = true,
        spatial_first = false,
    ))]
    fn load(
        path: PathBuf,
        config: &PyForecastConfig,
        contact_subset: &str,
        use_time_to_go: bool,
        use_end_goal: bool,
        spatial_first: bool,
    ) -> PyResult<Self> {
        let spec = build_spec(
            config,
            contact_subset,
            use_time_to_go,
            use_end_goal,
            spatial_first,
        )?;
        let params = checkpoint::load_checkpoint(&path, &spec).map_err(py_err)?;
        Ok(Self { spec, params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(&path, &self.params, &self.spec).map_err(py_err)
    }

    #[getter]
    fn config(&self) -> PyForecastConfig {
        PyForecastConfig {
            inner: self.spec.config.clone(),
        }
    }

    /// Total learnable scalar count.
    fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Trains on the `split` sequences under `data_dir`, continuing
    /// from the current parameters. Returns the loss log as
    /// `(epoch, phase, loss)` tuples.
    #[pyo3(signature = (
        data_dir,
        *,
        split = "train",
        mode = "three_stage",
        epochs = 50,
        lr_stage1 = 5e-4,
        lr_stage23 = 1e-3,
        batch_size = 8,
        contact_source = "predicted",
        teacher_forcing = true,
        window_stride = 30,
        clip_norm = 1.0,
        loss_weight_stage1 = 1.0,
        loss_weight_stage2 = 1.0,
        loss_weight_stage3 = 1.0,
        seed = None,
        log_path = None,
        checkpoint_dir = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        data_dir: PathBuf,
        split: &str,
        mode: &str,
        epochs: usize,
        lr_stage1: f64,
        lr_stage23: f64,
        batch_size: usize,
        contact_source: &str,
        teacher_forcing: bool,
        window_stride: usize,
        clip_norm: f64,
        loss_weight_stage1: f64,
        loss_weight_stage2: f64,
        loss_weight_stage3: f64,
        seed: Option<u64>,
        log_path: Option<PathBuf>,
        checkpoint_dir: Option<PathBuf>,
    ) -> PyResult<Vec<(usize, String, f64)>> {
        let tc = TrainingConfig {
            mode: TrainingMode::parse(mode).map_err(py_err)?,
            epochs,
            lr_stage1,
            lr_stage23,
            batch_size,
            use_end_goal: self.spec.use_end_goal,
            use_ttg: self.spec.use_time_to_go,
            contact_subset: self.spec.contact_subset,
            contact_source: ContactMode::parse(contact_source).map_err(py_err)?,
            seed: seed.unwrap_or(self.spec.config.seed),
            loss_weight_stage1,
            loss_weight_stage2,
            loss_weight_stage3,
            teacher_forcing,
            window_stride,
            clip_norm,
            spatial_first: self.spec.spatial_first,
        };
        let named = formats::load_dataset(&data_dir, split).map_err(py_err)?;
        let dataset: Vec<formats::Sequence> = named.into_iter().map(|(_, s)| s).collect();
        let outcome = train::train(
            &self.spec.config,
            &tc,
            &dataset,
            Some(self.params.clone()),
            log_path.as_deref(),
            checkpoint_dir.as_deref(),
        )
        .map_err(py_err)?;
        self.params = outcome.params;
        Ok(outcome
            .log
            .into_iter()
            .map(|r| (r.epoch, r.phase.to_string(), r.loss))
            .collect())
    }

    /// Forecasts the future window from an observed motion and a scene.
    ///
    /// `mode` selects the contact conditioning: "predicted" runs stage
    /// 1, "ground_truth" derives contacts from `reference` (a motion
    /// over the full observed+future window), "none" zeroes them.
    /// Returns a dict with contacts, root, poses, distances (only in
    /// predicted mode), and the sampled scene.
    #[pyo3(signature = (m_obs, scene, *, mode = "predicted", reference = None))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        m_obs: &PyMotionSequence,
        scene: &PySceneCloud,
        mode: &str,
        reference: Option<&PyMotionSequence>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode = ContactMode::parse(mode).map_err(py_err)?;
        let out = full_pipeline(
            &self.spec,
            &self.params,
            &m_obs.inner,
            &scene.inner,
            mode,
            reference.map(|r| &r.inner),
        )
        .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item(
            "contacts",
            PyContactMap {
                inner: out.contacts,
            },
        )?;
        d.set_item("root", nested_from_view2(out.root.positions()))?;
        d.set_item("poses", PyMotionSequence { inner: out.poses })?;
        match out.distances {
            Some(t) => d.set_item("distances", nested_from_array3(t.values()))?,
            None => d.set_item("distances", py.None())?,
        }
        d.set_item(
            "scene_sampled",
            PySceneCloud {
                inner: out.scene_sampled,
            },
        )?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Forecaster({} parameters, {})",
            self.params.element_count(),
            self.spec.canonical_string()
        )
    }
}

/// The built-in 21-joint humanoid skeleton.
#[pyfunction]
fn default_humanoid() -> PySkeleton {
    PySkeleton::default_humanoid()
}

/// Euclidean joint-to-point distances, `[frames][joints][points]`.
#[pyfunction]
fn distance_tensor(motion: &PyMotionSequence, scene: &PySceneCloud) -> Vec<Vec<Vec<f64>>> {
    let t = geometry::distance_tensor(&motion.inner, &scene.inner);
    nested_from_array3(t.values())
}

/// Contacts for every joint of a motion against a scene: a joint is in
/// contact when its nearest scene point lies strictly below `threshold`.
#[pyfunction]
fn contacts_for_motion(
    motion: &PyMotionSequence,
    scene: &PySceneCloud,
    threshold: f64,
) -> PyResult<PyContactMap> {
    geometry::contacts_for_motion(&motion.inner, &scene.inner, threshold)
        .map(|(_, inner)| PyContactMap { inner })
        .map_err(py_err)
}

/// Mean coordinate error over entries flagged as contact in either
/// map; None when neither map flags anything.
#[pyfunction]
fn contact_l2_error(
    predicted: &PyContactMap,
    reference: &PyContactMap,
) -> PyResult<Option<f64>> {
    geometry::contact_l2_error(&predicted.inner, &reference.inner).map_err(py_err)
}

/// Uniformly samples up to `count` scene points within `radius` of
/// `center`, deterministically in `seed`.
#[pyfunction]
fn sample_scene_points(
    scene: &PySceneCloud,
    center: Vec<f64>,
    radius: f64,
    count: usize,
    seed: u64,
) -> PyResult<PySceneCloud> {
    if center.len() != 3 {
        return Err(PyValueError::new_err(format!(
            "center must have 3 coordinates, got {}",
            center.len()
        )));
    }
    geometry::sample_scene_points(
        &scene.inner,
        [center[0], center[1], center[2]],
        radius,
        count,
        seed,
    )
    .map(|inner| PySceneCloud { inner })
    .map_err(py_err)
}

/// Square grid of ground points under the motion, for scene-free data.
#[pyfunction]
fn planar_ground_scene(
    motion: &PyMotionSequence,
    extent: f64,
    spacing: f64,
) -> PyResult<PySceneCloud> {
    formats::planar_ground_scene(&motion.inner, extent, spacing)
        .map(|inner| PySceneCloud { inner })
        .map_err(py_err)
}

/// Mean Euclidean root distance over the first `frames` frames.
#[pyfunction]
fn path_error(
    predicted: &PyMotionSequence,
    reference: &PyMotionSequence,
    frames: usize,
) -> PyResult<f64> {
    eval::path_error(
        &predicted.inner.root_trajectory(),
        &reference.inner.root_trajectory(),
        frames,
    )
    .map_err(py_err)
}

/// Mean Euclidean joint distance after root alignment over the first
/// `frames` frames.
#[pyfunction]
fn pose_error(
    predicted: &PyMotionSequence,
    reference: &PyMotionSequence,
    frames: usize,
) -> PyResult<f64> {
    eval::pose_error(&predicted.inner, &reference.inner, frames).map_err(py_err)
}

/// Mean Euclidean joint distance per frame, without alignment.
#[pyfunction]
fn per_frame_mae(
    predicted: &PyMotionSequence,
    reference: &PyMotionSequence,
) -> PyResult<Vec<f64>> {
    eval::per_frame_mae(&predicted.inner, &reference.inner).map_err(py_err)
}

/// Path and pose errors at 0.5 s, 1 s, 2 s, and full horizons, plus
/// the per-frame error curve.
#[pyfunction]
fn evaluate_forecast<'py>(
    py: Python<'py>,
    predicted: &PyMotionSequence,
    reference: &PyMotionSequence,
    fps: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::evaluate_forecast(&predicted.inner, &reference.inner, fps).map_err(py_err)?;
    let horizons = |h: &eval::HorizonMetrics| -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("half_second", h.half_second)?;
        d.set_item("one_second", h.one_second)?;
        d.set_item("two_seconds", h.two_seconds)?;
        d.set_item("full", h.full)?;
        Ok(d)
    };
    let d = PyDict::new(py);
    d.set_item("path", horizons(&m.path)?)?;
    d.set_item("pose", horizons(&m.pose)?)?;
    d.set_item("frame_mae", m.frame_mae)?;
    Ok(d)
}

/// Frame count for a horizon in seconds, at least 1.
#[pyfunction]
fn horizon_frames(fps: f64, seconds: f64) -> usize {
    eval::horizon_frames(fps, seconds)
}

/// All `(start, window)` pairs of `observed + future` frames stepped
/// by `stride`.
#[pyfunction]
fn window_split(
    motion: &PyMotionSequence,
    observed: usize,
    future: usize,
    stride: usize,
) -> PyResult<Vec<(usize, PyMotionSequence)>> {
    formats::window_split(&motion.inner, observed, future, stride)
        .map(|v| {
            v.into_iter()
                .map(|(start, m)| (start, PyMotionSequence { inner: m }))
                .collect()
        })
        .map_err(py_err)
}

#[allow(clippy::too_many_arguments)]
fn build_synth_spec(
    frames: usize,
    extent: f64,
    floor_spacing: f64,
    obstacles_min: usize,
    obstacles_max: usize,
    walk_speed: f64,
    gait_period: usize,
    fps: f64,
    seed: u64,
) -> PyResult<SynthSpec> {
    let spec = SynthSpec {
        frames,
        extent,
        floor_spacing,
        obstacles_min,
        obstacles_max,
        walk_speed,
        gait_period,
        fps,
        seed,
    };
    spec.check().map_err(py_err)?;
    Ok(spec)
}

/// Generates one synthetic walking sequence, returning its scene and
/// motion. `index` varies the sequence under a fixed seed.
#[pyfunction]
#[pyo3(signature = (
    *,
    index = 0,
    frames = 300,
    extent = 8.0,
    floor_spacing = 0.1,
    obstacles_min = 2,
    obstacles_max = 4,
    walk_speed = 0.8,
    gait_period = 30,
    fps = 30.0,
    seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn generate_sequence(
    index: usize,
    frames: usize,
    extent: f64,
    floor_spacing: f64,
    obstacles_min: usize,
    obstacles_max: usize,
    walk_speed: f64,
    gait_period: usize,
    fps: f64,
    seed: u64,
) -> PyResult<(PySceneCloud, PyMotionSequence)> {
    let spec = build_synth_spec(
        frames,
        extent,
        floor_spacing,
        obstacles_min,
        obstacles_max,
        walk_speed,
        gait_period,
        fps,
        seed,
    )?;
    let generated = synth::generate_sequence(&spec, index).map_err(py_err)?;
    Ok((
        PySceneCloud {
            inner: generated.scene,
        },
        PyMotionSequence {
            inner: generated.motion,
        },
    ))
}

/// Writes a synthetic dataset of `train` + `test` sequences under
/// `out_dir`, in the layout `load_dataset` and the CLI read.
#[pyfunction]
#[pyo3(signature = (
    out_dir,
    train,
    test,
    *,
    frames = 300,
    extent = 8.0,
    floor_spacing = 0.1,
    obstacles_min = 2,
    obstacles_max = 4,
    walk_speed = 0.8,
    gait_period = 30,
    fps = 30.0,
    seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    out_dir: PathBuf,
    train: usize,
    test: usize,
    frames: usize,
    extent: f64,
    floor_spacing: f64,
    obstacles_min: usize,
    obstacles_max: usize,
    walk_speed: f64,
    gait_period: usize,
    fps: f64,
    seed: u64,
) -> PyResult<()> {
    let spec = build_synth_spec(
        frames,
        extent,
        floor_spacing,
        obstacles_min,
        obstacles_max,
        walk_speed,
        gait_period,
        fps,
        seed,
    )?;
    synth::generate_dataset(&spec, train, test, &out_dir).map_err(py_err)
}

/// Loads every sequence of a dataset split as `(name, scene, motion)`.
#[pyfunction]
fn load_dataset(
    root: PathBuf,
    split: &str,
) -> PyResult<Vec<(String, PySceneCloud, PyMotionSequence)>> {
    let named = formats::load_dataset(&root, split).map_err(py_err)?;
    Ok(named
        .into_iter()
        .map(|(name, seq)| {
            (
                name,
                PySceneCloud { inner: seq.scene },
                PyMotionSequence { inner: seq.motion },
            )
        })
        .collect())
}

#[pymodule]
fn scenecast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyMotionSequence>()?;
    m.add_class::<PySceneCloud>()?;
    m.add_class::<PyContactMap>()?;
    m.add_class::<PyDctBasis>()?;
    m.add_class::<PyForecastConfig>()?;
    m.add_class::<PyForecaster>()?;
    m.add_function(wrap_pyfunction!(default_humanoid, m)?)?;
    m.add_function(wrap_pyfunction!(distance_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(contacts_for_motion, m)?)?;
    m.add_function(wrap_pyfunction!(contact_l2_error, m)?)?;
    m.add_function(wrap_pyfunction!(sample_scene_points, m)?)?;
    m.add_function(wrap_pyfunction!(planar_ground_scene, m)?)?;
    m.add_function(wrap_pyfunction!(path_error, m)?)?;
    m.add_function(wrap_pyfunction!(pose_error, m)?)?;
    m.add_function(wrap_pyfunction!(per_frame_mae, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(horizon_frames, m)?)?;
    m.add_function(wrap_pyfunction!(window_split, m)?)?;
    m.add_function(wrap_pyfunction!(generate_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    Ok(())
}
