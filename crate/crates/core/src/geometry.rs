//! Scene sampling, joint-to-scene distance fields, and contact
//! extraction.
//!
//! Contacts are defined by a strict distance threshold: a joint is in
//! contact when its distance to the nearest scene point is strictly
//! below the threshold. The contact coordinate is always the nearest
//! point, flagged or not, so downstream consumers get a usable anchor
//! even for free-space joints. Ties on the minimum distance resolve to
//! the lowest point index.

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{ContactMap, DistanceTensor, MotionSequence, SceneCloud};

/// Selects the scene points within `radius` of `center`, then draws a
/// uniform sample of at most `count` of them without replacement.
///
/// The returned cloud preserves original point order (the chosen subset
/// is sorted by source index), so a given seed always yields the same
/// cloud. Errors if no point falls inside the window.
pub fn sample_scene_points(
    scene: &SceneCloud,
    center: [f64; 3],
    radius: f64,
    count: usize,
    seed: u64,
) -> Result<SceneCloud> {
    if radius <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "sample radius must be positive, got {radius}"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    let r2 = radius * radius;
    let pts = scene.points();
    let mut inside: Vec<usize> = Vec::new();
    for i in 0..pts.nrows() {
        let dx = pts[[i, 0]] - center[0];
        let dy = pts[[i, 1]] - center[1];
        let dz = pts[[i, 2]] - center[2];
        if dx * dx + dy * dy + dz * dz <= r2 {
            inside.push(i);
        }
    }
    if inside.is_empty() {
        return Err(Error::DegenerateSceneWindow { radius });
    }
    let chosen: Vec<usize> = if inside.len() <= count {
        inside
    } else {
        // partial Fisher-Yates: after k swaps the first k slots are a
        // uniform k-subset
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = inside.len();
        for k in 0..count {
            let j = rng.random_range(k..n);
            inside.swap(k, j);
        }
        let mut subset = inside[..count].to_vec();
        subset.sort_unstable();
        subset
    };
    let sampled = Array2::from_shape_fn((chosen.len(), 3), |(i, c)| pts[[chosen[i], c]]);
    SceneCloud::new(sampled)
}

/// Euclidean distances from every joint at every frame to every scene
/// point: `[L, V, N]`.
pub fn distance_tensor(motion: &MotionSequence, scene: &SceneCloud) -> DistanceTensor {
    let all: Vec<usize> = (0..motion.joint_count()).collect();
    distance_tensor_subset(motion, scene, &all)
}

/// Distances restricted to the listed joints, in the order given:
/// `[L, joints.len(), N]`.
pub fn distance_tensor_subset(
    motion: &MotionSequence,
    scene: &SceneCloud,
    joints: &[usize],
) -> DistanceTensor {
    let l = motion.frame_count();
    let n = scene.len();
    let pts = scene.points();
    let data = motion.data();
    let values = Array3::from_shape_fn((l, joints.len(), n), |(t, j, p)| {
        let joint = joints[j];
        let dx = data[[t, joint, 0]] - pts[[p, 0]];
        let dy = data[[t, joint, 1]] - pts[[p, 1]];
        let dz = data[[t, joint, 2]] - pts[[p, 2]];
        (dx * dx + dy * dy + dz * dz).sqrt()
    });
    DistanceTensor::new(values).expect("distances are non-negative and finite")
}

/// Derives contact entries from a distance tensor.
///
/// Per `(frame, joint)`: the nearest point's coordinate plus a flag that
/// is 1 exactly when the minimum distance is strictly below `threshold`.
pub fn contacts_from_distances(
    distances: &DistanceTensor,
    scene: &SceneCloud,
    threshold: f64,
) -> Result<ContactMap> {
    let (l, v, n) = distances.dim();
    if n != scene.len() {
        return Err(Error::ShapeMismatch {
            context: "contacts_from_distances",
            expected: format!("distance tensor over {} points", scene.len()),
            got: format!("{n} points"),
        });
    }
    if threshold <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "contact threshold must be positive, got {threshold}"
        )));
    }
    let vals = distances.values();
    let mut entries = Array3::zeros((l, v, 4));
    for t in 0..l {
        for j in 0..v {
            let mut best = 0usize;
            let mut best_d = vals[[t, j, 0]];
            for p in 1..n {
                let d = vals[[t, j, p]];
                if d < best_d {
                    best_d = d;
                    best = p;
                }
            }
            let coord = scene.point(best);
            entries[[t, j, 0]] = coord[0];
            entries[[t, j, 1]] = coord[1];
            entries[[t, j, 2]] = coord[2];
            entries[[t, j, 3]] = if best_d < threshold { 1.0 } else { 0.0 };
        }
    }
    ContactMap::new(entries)
}

/// Distance tensor and contact map for a motion window in one call.
pub fn contacts_for_motion(
    motion: &MotionSequence,
    scene: &SceneCloud,
    threshold: f64,
) -> Result<(DistanceTensor, ContactMap)> {
    let distances = distance_tensor(motion, scene);
    let contacts = contacts_from_distances(&distances, scene, threshold)?;
    Ok((distances, contacts))
}

/// Mean Euclidean error between predicted and reference contact
/// coordinates, restricted to entries the reference flags as contacts.
///
/// Returns `None` when the reference flags nothing.
pub fn contact_l2_error(predicted: &ContactMap, reference: &ContactMap) -> Result<Option<f64>> {
    check_same_shape(predicted, reference)?;
    let (l, v) = (reference.frame_count(), reference.joint_count());
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..l {
        for j in 0..v {
            if reference.flag(t, j) {
                total += entry_distance(predicted, reference, t, j);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { None } else { Some(total / count as f64) })
}

/// Mean Euclidean coordinate error over every entry, flagged or not.
pub fn contact_l2_error_all(predicted: &ContactMap, reference: &ContactMap) -> Result<f64> {
    check_same_shape(predicted, reference)?;
    let (l, v) = (reference.frame_count(), reference.joint_count());
    let mut total = 0.0;
    for t in 0..l {
        for j in 0..v {
            total += entry_distance(predicted, reference, t, j);
        }
    }
    Ok(total / (l * v) as f64)
}

fn check_same_shape(a: &ContactMap, b: &ContactMap) -> Result<()> {
    if a.frame_count() != b.frame_count() || a.joint_count() != b.joint_count() {
        return Err(Error::ShapeMismatch {
            context: "contact_l2_error",
            expected: format!("{} x {} x 4", b.frame_count(), b.joint_count()),
            got: format!("{} x {} x 4", a.frame_count(), a.joint_count()),
        });
    }
    Ok(())
}

fn entry_distance(a: &ContactMap, b: &ContactMap, t: usize, j: usize) -> f64 {
    let pa = a.coordinate(t, j);
    let pb = b.coordinate(t, j);
    let dx = pa[0] - pb[0];
    let dy = pa[1] - pb[1];
    let dz = pa[2] - pb[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Uniform-grid nearest-neighbor index over a point cloud.
///
/// Exact: returns the same point as a linear scan, including the
/// lowest-index tie rule, via ring expansion with a conservative
/// stopping bound. Cells store source indices in ascending order.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    origin: [f64; 3],
    dims: [usize; 3],
    cells: Vec<Vec<usize>>,
    points: Array2<f64>,
}

impl GridIndex {
    pub fn build(scene: &SceneCloud, cell_size: f64) -> Result<Self> {
        if cell_size <= 0.0 || !cell_size.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid cell size must be positive, got {cell_size}"
            )));
        }
        let pts = scene.points().to_owned();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in 0..pts.nrows() {
            for c in 0..3 {
                lo[c] = lo[c].min(pts[[i, c]]);
                hi[c] = hi[c].max(pts[[i, c]]);
            }
        }
        let mut dims = [0usize; 3];
        for c in 0..3 {
            dims[c] = (((hi[c] - lo[c]) / cell_size).floor() as usize) + 1;
        }
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for i in 0..pts.nrows() {
            let cell = Self::cell_of(&lo, cell_size, &dims, [pts[[i, 0]], pts[[i, 1]], pts[[i, 2]]]);
            cells[Self::linear(&dims, cell)].push(i);
        }
        Ok(Self {
            cell_size,
            origin: lo,
            dims,
            cells,
            points: pts,
        })
    }

    fn cell_of(origin: &[f64; 3], cell_size: f64, dims: &[usize; 3], p: [f64; 3]) -> [usize; 3] {
        let mut cell = [0usize; 3];
        for c in 0..3 {
            let raw = ((p[c] - origin[c]) / cell_size).floor();
            cell[c] = (raw.max(0.0) as usize).min(dims[c] - 1);
        }
        cell
    }

    fn linear(dims: &[usize; 3], cell: [usize; 3]) -> usize {
        (cell[0] * dims[1] + cell[1]) * dims[2] + cell[2]
    }

    /// Index of and distance to the nearest point.
    pub fn nearest(&self, query: [f64; 3]) -> (usize, f64) {
        let center = Self::cell_of(&self.origin, self.cell_size, &self.dims, query);
        let mut best_idx = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        let max_ring = self.dims.iter().max().copied().unwrap_or(1);
        for ring in 0..=max_ring {
            // every cell in a ring at Chebyshev radius r is at least
            // (r-1)*cell_size away from the query point's cell
            if best_idx != usize::MAX {
                let min_possible = (ring as f64 - 1.0).max(0.0) * self.cell_size;
                if min_possible * min_possible > best_d2 {
                    break;
                }
            }
            self.scan_ring(center, ring, query, &mut best_idx, &mut best_d2);
        }
        debug_assert!(best_idx != usize::MAX, "grid holds at least one point");
        (best_idx, best_d2.sqrt())
    }

    fn scan_ring(
        &self,
        center: [usize; 3],
        ring: usize,
        query: [f64; 3],
        best_idx: &mut usize,
        best_d2: &mut f64,
    ) {
        let r = ring as isize;
        let c = [center[0] as isize, center[1] as isize, center[2] as isize];
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let (x, y, z) = (c[0] + dx, c[1] + dy, c[2] + dz);
                    if x < 0
                        || y < 0
                        || z < 0
                        || x >= self.dims[0] as isize
                        || y >= self.dims[1] as isize
                        || z >= self.dims[2] as isize
                    {
                        continue;
                    }
                    let cell = [x as usize, y as usize, z as usize];
                    for &i in &self.cells[Self::linear(&self.dims, cell)] {
                        let dxp = self.points[[i, 0]] - query[0];
                        let dyp = self.points[[i, 1]] - query[1];
                        let dzp = self.points[[i, 2]] - query[2];
                        let d2 = dxp * dxp + dyp * dyp + dzp * dzp;
                        if d2 < *best_d2 || (d2 == *best_d2 && i < *best_idx) {
                            *best_d2 = d2;
                            *best_idx = i;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Skeleton;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use std::sync::Arc;

    // ----- brute-force oracle, independent triple loop -----

    struct OracleContacts {
        entries: Vec<(f64, f64, f64, f64)>, // (x, y, z, flag), row-major (t, j)
        joints: usize,
    }

    fn oracle_contacts(
        joints: &[Vec<[f64; 3]>], // [frame][joint]
        points: &[[f64; 3]],
        threshold: f64,
    ) -> OracleContacts {
        let mut entries = Vec::new();
        for frame in joints {
            for q in frame {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, p) in points.iter().enumerate() {
                    let d = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2))
                        .sqrt();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                let p = points[best];
                entries.push((p[0], p[1], p[2], if best_d < threshold { 1.0 } else { 0.0 }));
            }
        }
        OracleContacts {
            entries,
            joints: joints[0].len(),
        }
    }

    fn toy_skeleton(v: usize) -> Arc<Skeleton> {
        let names = (0..v).map(|i| format!("j{i}")).collect();
        let edges = (1..v).map(|i| (i - 1, i)).collect();
        Arc::new(Skeleton::new(names, edges, 0, vec![], vec![]).unwrap())
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        max_frames: usize,
        max_joints: usize,
        max_points: usize,
    ) -> (MotionSequence, SceneCloud) {
        let l = rng.random_range(1..=max_frames);
        let v = rng.random_range(1..=max_joints);
        let n = rng.random_range(1..=max_points);
        let data = Array3::from_shape_fn((l, v, 3), |_| rng.random_range(-2.0..2.0));
        let motion = MotionSequence::new(data, toy_skeleton(v)).unwrap();
        let pts = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0));
        (motion, SceneCloud::new(pts).unwrap())
    }

    #[test]
    fn contacts_match_brute_force_on_random_instances() {
        let start = std::time::Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..100 {
            let (motion, scene) = random_instance(&mut rng, 5, 5, 50);
            let threshold = rng.random_range(0.05..1.5);
            let (distances, contacts) = contacts_for_motion(&motion, &scene, threshold).unwrap();

            // oracle inputs rebuilt from plain vecs
            let joints: Vec<Vec<[f64; 3]>> = (0..motion.frame_count())
                .map(|t| (0..motion.joint_count()).map(|j| motion.joint(t, j)).collect())
                .collect();
            let points: Vec<[f64; 3]> = (0..scene.len()).map(|i| scene.point(i)).collect();
            let want = oracle_contacts(&joints, &points, threshold);

            for t in 0..motion.frame_count() {
                for j in 0..motion.joint_count() {
                    let got = contacts.coordinate(t, j);
                    let (wx, wy, wz, wf) = want.entries[t * want.joints + j];
                    assert_eq!(got, [wx, wy, wz], "case {case} coord mismatch at ({t},{j})");
                    let got_flag = if contacts.flag(t, j) { 1.0 } else { 0.0 };
                    assert_eq!(got_flag, wf, "case {case} flag mismatch at ({t},{j})");
                }
            }
            // spot-check a distance entry against direct arithmetic
            let q = motion.joint(0, 0);
            let p = scene.point(0);
            let direct =
                ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
            assert_abs_diff_eq!(distances.values()[[0, 0, 0]], direct, epsilon = 1e-12);
        }
        assert!(
            start.elapsed() < std::time::Duration::from_secs(10),
            "100 oracle cases took {:?}",
            start.elapsed()
        );
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let skel = toy_skeleton(1);
        for (dist, want_flag) in [(0.319, true), (0.321, false), (0.32, false)] {
            let mut data = Array3::zeros((1, 1, 3));
            data[[0, 0, 2]] = dist;
            let motion = MotionSequence::new(data, skel.clone()).unwrap();
            let scene = SceneCloud::new(ndarray::array![[0.0, 0.0, 0.0]]).unwrap();
            let (_, contacts) = contacts_for_motion(&motion, &scene, 0.32).unwrap();
            assert_eq!(
                contacts.flag(0, 0),
                want_flag,
                "distance {dist} vs threshold 0.32"
            );
            assert_eq!(contacts.coordinate(0, 0), [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn ties_resolve_to_lowest_point_index() {
        let skel = toy_skeleton(1);
        let motion =
            MotionSequence::new(Array3::zeros((1, 1, 3)), skel).unwrap();
        // two points equidistant from the origin
        let scene = SceneCloud::new(ndarray::array![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
        ])
        .unwrap();
        let (_, contacts) = contacts_for_motion(&motion, &scene, 0.32).unwrap();
        assert_eq!(contacts.coordinate(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn contacts_are_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (motion, scene) = random_instance(&mut rng, 4, 3, 30);
        let shift = [10.0, -3.0, 0.5];
        let shifted_motion = MotionSequence::new(
            motion.data() + &Array3::from_shape_fn(motion.data().dim(), |(_, _, c)| shift[c]),
            motion.skeleton().clone(),
        )
        .unwrap();
        let shifted_scene = SceneCloud::new(
            scene.points().to_owned()
                + &Array2::from_shape_fn((scene.len(), 3), |(_, c)| shift[c]),
        )
        .unwrap();
        let (_, base) = contacts_for_motion(&motion, &scene, 0.4).unwrap();
        let (_, moved) = contacts_for_motion(&shifted_motion, &shifted_scene, 0.4).unwrap();
        for t in 0..motion.frame_count() {
            for j in 0..motion.joint_count() {
                assert_eq!(base.flag(t, j), moved.flag(t, j));
                let a = base.coordinate(t, j);
                let b = moved.coordinate(t, j);
                for c in 0..3 {
                    assert_abs_diff_eq!(a[c] + shift[c], b[c], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn raising_threshold_never_clears_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (motion, scene) = random_instance(&mut rng, 4, 4, 40);
        let (dist, low) = contacts_for_motion(&motion, &scene, 0.2).unwrap();
        let high = contacts_from_distances(&dist, &scene, 0.8).unwrap();
        for t in 0..motion.frame_count() {
            for j in 0..motion.joint_count() {
                if low.flag(t, j) {
                    assert!(high.flag(t, j), "flag lost when threshold rose");
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((500, 3), |_| rng.random_range(-1.5..1.5));
        let scene = SceneCloud::new(pts).unwrap();
        let a = sample_scene_points(&scene, [0.0; 3], 2.5, 100, 42).unwrap();
        let b = sample_scene_points(&scene, [0.0; 3], 2.5, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        for i in 0..a.len() {
            let p = a.point(i);
            let d = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(d <= 2.5 + 1e-12);
        }
        let c = sample_scene_points(&scene, [0.0; 3], 2.5, 100, 43).unwrap();
        assert_ne!(a, c, "different seeds should draw different subsets");
    }

    #[test]
    fn sampling_takes_everything_when_window_is_sparse() {
        let scene = SceneCloud::new(ndarray::array![
            [0.1, 0.0, 0.0],
            [0.0, 0.2, 0.0],
            [9.0, 9.0, 9.0],
        ])
        .unwrap();
        let s = sample_scene_points(&scene, [0.0; 3], 1.0, 50, 0).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn sampling_errors_on_empty_window() {
        let scene = SceneCloud::new(ndarray::array![[5.0, 5.0, 5.0]]).unwrap();
        let err = sample_scene_points(&scene, [0.0; 3], 1.0, 10, 0);
        assert!(matches!(err, Err(Error::DegenerateSceneWindow { .. })));
    }

    #[test]
    fn grid_index_agrees_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..50 {
            let n = rng.random_range(1..=200usize);
            let pts = Array2::from_shape_fn((n, 3), |_| rng.random_range(-3.0..3.0));
            let scene = SceneCloud::new(pts).unwrap();
            let grid = GridIndex::build(&scene, rng.random_range(0.2..1.5)).unwrap();
            for _ in 0..20 {
                let q = [
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                ];
                let (gi, gd) = grid.nearest(q);
                let mut bi = 0usize;
                let mut bd2 = f64::INFINITY;
                for i in 0..scene.len() {
                    let p = scene.point(i);
                    let d2 =
                        (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
                    if d2 < bd2 {
                        bd2 = d2;
                        bi = i;
                    }
                }
                assert_eq!(gi, bi);
                assert_abs_diff_eq!(gd, bd2.sqrt(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grid_index_respects_tie_rule() {
        let scene = SceneCloud::new(ndarray::array![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        let grid = GridIndex::build(&scene, 0.5).unwrap();
        let (i, d) = grid.nearest([0.0, 0.0, 0.0]);
        assert_eq!(i, 0);
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn l2_error_ignores_unflagged_entries() {
        let mut gt = Array3::zeros((1, 2, 4));
        gt[[0, 0, 3]] = 1.0; // joint 0 flagged at the origin
        let mut pred = Array3::zeros((1, 2, 4));
        pred[[0, 0, 0]] = 3.0; // 3 m off on the flagged joint
        pred[[0, 1, 0]] = 100.0; // far off on the unflagged joint
        let gt = ContactMap::new(gt).unwrap();
        let pred = ContactMap::new(pred).unwrap();
        assert_abs_diff_eq!(contact_l2_error(&pred, &gt).unwrap().unwrap(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            contact_l2_error_all(&pred, &gt).unwrap(),
            (3.0 + 100.0) / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn l2_error_is_none_without_reference_flags() {
        let gt = ContactMap::new(Array3::zeros((1, 2, 4))).unwrap();
        let pred = ContactMap::new(Array3::zeros((1, 2, 4))).unwrap();
        assert_eq!(contact_l2_error(&pred, &gt).unwrap(), None);
    }
}
