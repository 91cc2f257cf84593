//! Value objects shared by every pipeline stage: scenes, skeletons,
//! motion sequences, trajectories, contact maps, and distance tensors.
//!
//! All types are immutable after construction and safe to share across
//! threads.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::ForecastConfig;

/// A 3D scene as a bag of points, one `(x, y, z)` triple per row (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCloud {
    points: Array2<f64>,
}

impl SceneCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyInput("scene must contain at least one point"));
        }
        if points.ncols() != 3 {
            return Err(Error::ShapeMismatch {
                context: "SceneCloud::new",
                expected: "N x 3".into(),
                got: format!("{} x {}", points.nrows(), points.ncols()),
            });
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "scene contains a non-finite coordinate".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one point
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, index: usize) -> [f64; 3] {
        let row = self.points.row(index);
        [row[0], row[1], row[2]]
    }
}

/// Kinematic tree over `V` joints plus the joint subsets used for
/// contact estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    /// `(parent, child)` joint index pairs forming a tree.
    pub edges: Vec<(usize, usize)>,
    pub root_index: usize,
    pub feet_indices: Vec<usize>,
    pub wrist_indices: Vec<usize>,
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        root_index: usize,
        feet_indices: Vec<usize>,
        wrist_indices: Vec<usize>,
    ) -> Result<Self> {
        let v = joint_names.len();
        if v == 0 {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if root_index >= v {
            return Err(Error::InvalidSkeleton(format!(
                "root index {root_index} out of range for {v} joints"
            )));
        }
        if edges.len() != v - 1 {
            return Err(Error::InvalidSkeleton(format!(
                "a tree over {v} joints needs {} edges, got {}",
                v - 1,
                edges.len()
            )));
        }
        // Union-find connectivity check; a tree has V-1 edges and no cycles.
        let mut parent: Vec<usize> = (0..v).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &edges {
            if a >= v || b >= v {
                return Err(Error::InvalidSkeleton(format!(
                    "edge ({a}, {b}) references a joint outside 0..{v}"
                )));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(Error::InvalidSkeleton(format!(
                    "edge ({a}, {b}) closes a cycle"
                )));
            }
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        if (0..v).any(|i| find(&mut parent, i) != root) {
            return Err(Error::InvalidSkeleton("edges do not connect all joints".into()));
        }
        for &i in feet_indices.iter().chain(wrist_indices.iter()) {
            if i >= v {
                return Err(Error::InvalidSkeleton(format!(
                    "subset index {i} out of range for {v} joints"
                )));
            }
        }
        if feet_indices.iter().any(|i| wrist_indices.contains(i)) {
            return Err(Error::InvalidSkeleton(
                "feet and wrist subsets must be disjoint".into(),
            ));
        }
        Ok(Self {
            joint_names,
            edges,
            root_index,
            feet_indices,
            wrist_indices,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    /// The 21-joint humanoid used by the synthetic benchmark.
    pub fn default_humanoid() -> Arc<Skeleton> {
        let names = [
            "pelvis",
            "spine",
            "chest",
            "neck",
            "head",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
            "l_hip",
            "l_knee",
            "l_ankle",
            "l_foot",
            "l_toe",
            "r_hip",
            "r_knee",
            "r_ankle",
            "r_foot",
            "r_toe",
        ];
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 4),
            (2, 5),
            (5, 6),
            (6, 7),
            (2, 8),
            (8, 9),
            (9, 10),
            (0, 11),
            (11, 12),
            (12, 13),
            (13, 14),
            (14, 15),
            (0, 16),
            (16, 17),
            (17, 18),
            (18, 19),
            (19, 20),
        ];
        Arc::new(
            Skeleton::new(
                names.iter().map(|s| s.to_string()).collect(),
                edges,
                0,
                vec![13, 14, 15, 18, 19, 20],
                vec![7, 10],
            )
            .expect("builtin skeleton is well-formed"),
        )
    }
}

/// Which joints may generate contact points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactSubset {
    All,
    Feet,
    FeetWrists,
}

impl ContactSubset {
    /// Resolves the subset to concrete joint indices for `skeleton`.
    pub fn resolve(self, skeleton: &Skeleton) -> Vec<usize> {
        match self {
            ContactSubset::All => (0..skeleton.joint_count()).collect(),
            ContactSubset::Feet => skeleton.feet_indices.clone(),
            ContactSubset::FeetWrists => {
                let mut v = skeleton.feet_indices.clone();
                v.extend_from_slice(&skeleton.wrist_indices);
                v.sort_unstable();
                v
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ContactSubset::All),
            "feet" => Ok(ContactSubset::Feet),
            "feet_wrist" | "feet_wrists" => Ok(ContactSubset::FeetWrists),
            other => Err(Error::InvalidConfig(format!(
                "unknown contact subset '{other}' (expected all | feet | feet_wrist)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ContactSubset::All => "all",
            ContactSubset::Feet => "feet",
            ContactSubset::FeetWrists => "feet_wrist",
        }
    }
}

/// Global body poses over `L` frames: shape `[L, V, 3]`, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    data: Array3<f64>,
    skeleton: Arc<Skeleton>,
}

impl MotionSequence {
    pub fn new(data: Array3<f64>, skeleton: Arc<Skeleton>) -> Result<Self> {
        let (l, v, c) = data.dim();
        if l == 0 {
            return Err(Error::EmptyInput("motion must contain at least one frame"));
        }
        if v != skeleton.joint_count() || c != 3 {
            return Err(Error::ShapeMismatch {
                context: "MotionSequence::new",
                expected: format!("L x {} x 3", skeleton.joint_count()),
                got: format!("{l} x {v} x {c}"),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "motion contains a non-finite coordinate".into(),
            ));
        }
        Ok(Self { data, skeleton })
    }

    pub fn frame_count(&self) -> usize {
        self.data.dim().0
    }

    pub fn joint_count(&self) -> usize {
        self.data.dim().1
    }

    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn joint(&self, frame: usize, joint: usize) -> [f64; 3] {
        [
            self.data[[frame, joint, 0]],
            self.data[[frame, joint, 1]],
            self.data[[frame, joint, 2]],
        ]
    }

    /// The root joint trajectory of this sequence.
    pub fn root_trajectory(&self) -> RootTrajectory {
        let r = self.skeleton.root_index;
        let positions = self
            .data
            .index_axis(Axis(1), r)
            .to_owned()
            .into_shape_with_order((self.frame_count(), 3))
            .expect("root slice is L x 3");
        RootTrajectory::new(positions).expect("root of a valid motion is valid")
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<MotionSequence> {
        if start + len > self.frame_count() {
            return Err(Error::IndexOutOfRange {
                what: "motion window",
                index: start + len,
                bound: self.frame_count(),
            });
        }
        let data = self
            .data
            .slice(ndarray::s![start..start + len, .., ..])
            .to_owned();
        MotionSequence::new(data, self.skeleton.clone())
    }
}

/// Root joint positions over `L` frames: shape `[L, 3]`, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RootTrajectory {
    positions: Array2<f64>,
}

impl RootTrajectory {
    pub fn new(positions: Array2<f64>) -> Result<Self> {
        if positions.nrows() == 0 {
            return Err(Error::EmptyInput("trajectory must contain at least one frame"));
        }
        if positions.ncols() != 3 {
            return Err(Error::ShapeMismatch {
                context: "RootTrajectory::new",
                expected: "L x 3".into(),
                got: format!("{} x {}", positions.nrows(), positions.ncols()),
            });
        }
        if !positions.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "trajectory contains a non-finite coordinate".into(),
            ));
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn positions(&self) -> ArrayView2<'_, f64> {
        self.positions.view()
    }

    pub fn position(&self, frame: usize) -> [f64; 3] {
        let row = self.positions.row(frame);
        [row[0], row[1], row[2]]
    }

    pub fn last(&self) -> [f64; 3] {
        self.position(self.len() - 1)
    }
}

/// Per-frame, per-joint contact entries: shape `[L, V, 4]`.
///
/// Each entry is the nearest scene point `(x, y, z)` plus a binary flag;
/// the flag alone carries contact semantics, the coordinate is always the
/// nearest point.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMap {
    entries: Array3<f64>,
}

impl ContactMap {
    pub fn new(entries: Array3<f64>) -> Result<Self> {
        let (l, _v, c) = entries.dim();
        if l == 0 {
            return Err(Error::EmptyInput("contact map must cover at least one frame"));
        }
        if c != 4 {
            return Err(Error::ShapeMismatch {
                context: "ContactMap::new",
                expected: "L x V x 4".into(),
                got: format!("{:?}", entries.dim()),
            });
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "contact map contains a non-finite value".into(),
            ));
        }
        for f in entries.index_axis(Axis(2), 3).iter() {
            if *f != 0.0 && *f != 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "contact flag must be exactly 0 or 1, got {f}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn frame_count(&self) -> usize {
        self.entries.dim().0
    }

    pub fn joint_count(&self) -> usize {
        self.entries.dim().1
    }

    pub fn entries(&self) -> &Array3<f64> {
        &self.entries
    }

    pub fn coordinate(&self, frame: usize, joint: usize) -> [f64; 3] {
        [
            self.entries[[frame, joint, 0]],
            self.entries[[frame, joint, 1]],
            self.entries[[frame, joint, 2]],
        ]
    }

    pub fn flag(&self, frame: usize, joint: usize) -> bool {
        self.entries[[frame, joint, 3]] == 1.0
    }

    /// Entries of one frame as a `V x 4` array.
    pub fn frame(&self, frame: usize) -> Array2<f64> {
        self.entries
            .index_axis(Axis(0), frame)
            .to_owned()
            .into_shape_with_order((self.joint_count(), 4))
            .expect("frame slice is V x 4")
    }
}

/// Joint-to-scene Euclidean distances: shape `[L, V, N]`, meters,
/// time-major when flattened over (time, joint).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTensor {
    values: Array3<f64>,
}

impl DistanceTensor {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidConfig(
                "distance tensor must be non-negative and finite".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    /// Time-major, joint-minor flattening to `(L * V) x N`.
    pub fn flattened(&self) -> Array2<f64> {
        let (l, v, n) = self.values.dim();
        self.values
            .clone()
            .into_shape_with_order((l * v, n))
            .expect("row-major reshape")
    }
}

/// Root position and contact entries at the final predicted frame, used
/// as conditioning for pose decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EndGoal {
    pub root_end: [f64; 3],
    /// `V x 4` contact entries at the final frame.
    pub contacts_end: Array2<f64>,
}

impl EndGoal {
    pub fn new(root_end: [f64; 3], contacts_end: Array2<f64>) -> Result<Self> {
        if !root_end.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("end root must be finite".into()));
        }
        if contacts_end.ncols() != 4 {
            return Err(Error::ShapeMismatch {
                context: "EndGoal::new",
                expected: "V x 4".into(),
                got: format!("{} x {}", contacts_end.nrows(), contacts_end.ncols()),
            });
        }
        if !contacts_end.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("end contacts must be finite".into()));
        }
        Ok(Self {
            root_end,
            contacts_end,
        })
    }
}

/// One named invariant check inside a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Itemized pass/fail report over the input invariants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.items.push(ValidationItem {
            name,
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationItem> {
        self.items.iter().filter(|i| !i.passed)
    }
}

/// Checks every input invariant and reports item by item; inputs that
/// pass are accepted by every downstream operation.
pub fn validate(
    config: &ForecastConfig,
    scene: &SceneCloud,
    motion: &MotionSequence,
) -> ValidationReport {
    let mut report = ValidationReport::default();

    report.push(
        "frame counts",
        config.observed_frames >= 1 && config.future_frames >= 1,
        format!(
            "observed={}, future={}",
            config.observed_frames, config.future_frames
        ),
    );
    report.push(
        "joint count",
        config.joint_count >= 1 && motion.joint_count() == config.joint_count,
        format!(
            "config={}, motion={}",
            config.joint_count,
            motion.joint_count()
        ),
    );
    report.push(
        "K_dct bound",
        config.dct_coeffs >= 1 && config.dct_coeffs <= config.total_frames(),
        format!(
            "dct_coeffs={} vs total_frames={}",
            config.dct_coeffs,
            config.total_frames()
        ),
    );
    report.push(
        "positive geometry constants",
        config.contact_threshold > 0.0
            && config.sample_radius > 0.0
            && config.sample_count >= 1
            && config.norm_factor > 0.0,
        format!(
            "threshold={}, radius={}, count={}, norm={}",
            config.contact_threshold, config.sample_radius, config.sample_count, config.norm_factor
        ),
    );
    report.push(
        "scene non-empty",
        !scene.is_empty(),
        format!("{} points", scene.len()),
    );
    let scene_finite = scene.points().iter().all(|v| v.is_finite());
    let motion_finite = motion.data().iter().all(|v| v.is_finite());
    report.push(
        "finite coordinates",
        scene_finite && motion_finite,
        format!("scene finite={scene_finite}, motion finite={motion_finite}"),
    );
    report.push(
        "motion length",
        motion.frame_count() >= 1,
        format!("{} frames", motion.frame_count()),
    );

    report
}

/// Raw tensor construction that skips the finite checks, so that the
/// validator itself can be exercised with injected defects.
#[doc(hidden)]
pub fn motion_unchecked(data: Array3<f64>, skeleton: Arc<Skeleton>) -> MotionSequence {
    MotionSequence { data, skeleton }
}
