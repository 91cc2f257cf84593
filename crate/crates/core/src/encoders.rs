//! Learnable encoders: a spatio-temporal graph block over joint
//! features, an MLP compressor that collapses a feature map to a latent
//! vector, a point-voxel scene encoder, and a learnable time-to-go
//! embedding table.
//!
//! Every builder takes a name prefix and reads its weights from a
//! [`Bound`] parameter binding, so the same definitions serve training,
//! evaluation, and gradient checking.

use ndarray::{Array2, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Bound, Graph, Params, VarId};

/// Negative slope shared by every activation in the pipeline.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Symmetric degree normalization of a non-negative adjacency matrix.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "adjacency must be square");
    let degrees: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d = degrees[i] * degrees[j];
        if d > 0.0 {
            a[[i, j]] / d.sqrt()
        } else {
            0.0
        }
    })
}

/// Dense 0/1 adjacency of a skeleton's edge list, without self-loops.
pub fn skeleton_adjacency(joint_count: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut a = Array2::zeros((joint_count, joint_count));
    for &(i, j) in edges {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    a
}

/// Banded temporal adjacency: frames within `band` steps are connected,
/// self-loop included.
pub fn banded_adjacency(frames: usize, band: usize) -> Array2<f64> {
    Array2::from_shape_fn((frames, frames), |(i, j)| {
        if i.abs_diff(j) <= band {
            1.0
        } else {
            0.0
        }
    })
}

// ----- generic MLP -----

/// Registers `widths.len() - 1` linear layers under `prefix.l{i}`.
pub fn init_mlp(
    params: &mut Params,
    prefix: &str,
    widths: &[usize],
    rng: &mut ChaCha8Rng,
    zero_last: bool,
) {
    assert!(widths.len() >= 2, "an MLP needs at least one layer");
    for (i, pair) in widths.windows(2).enumerate() {
        let name = format!("{prefix}.l{}", i + 1);
        if zero_last && i == widths.len() - 2 {
            params.init_linear_zero(&name, pair[0], pair[1]);
        } else {
            params.init_linear(&name, pair[0], pair[1], rng);
        }
    }
}

/// Runs the MLP registered by [`init_mlp`]; activations sit between
/// layers and, when `activate_last` is set, after the final one.
pub fn mlp_forward(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    x: VarId,
    layer_count: usize,
    activate_last: bool,
) -> VarId {
    let mut h = x;
    for i in 1..=layer_count {
        let w = bound.id(&format!("{prefix}.l{i}.w"));
        let b = bound.id(&format!("{prefix}.l{i}.b"));
        h = g.linear(h, w, Some(b));
        if i < layer_count || activate_last {
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
    }
    h
}

// ----- spatio-temporal graph encoder -----

/// Shape contract for [`st_graph_encode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StGraphDims {
    pub frames: usize,
    pub joints: usize,
    pub feat_in: usize,
    pub feat_out: usize,
}

/// Registers the learnable temporal and spatial mixing operators plus
/// the feature projection.
///
/// The temporal operator starts near a banded smoothing matrix and the
/// spatial one near the normalized skeleton graph, both with a little
/// noise so that training can break symmetry.
pub fn init_st_graph(
    params: &mut Params,
    prefix: &str,
    dims: StGraphDims,
    skeleton_adj: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) {
    let (t, v) = (dims.frames, dims.joints);
    assert_eq!(skeleton_adj.nrows(), v, "adjacency joint count");

    let band = normalize_adjacency(&banded_adjacency(t, 2));
    let mut a_t = ArrayD::zeros(IxDyn(&[v, t, t]));
    for j in 0..v {
        for (idx, val) in band.iter().enumerate() {
            a_t.as_slice_mut().unwrap()[j * t * t + idx] = *val;
        }
    }
    params.init_noisy(&format!("{prefix}.a_t"), a_t, 0.01, rng);

    let mut with_loops = skeleton_adj.clone();
    for i in 0..v {
        with_loops[[i, i]] = 1.0;
    }
    let spatial = normalize_adjacency(&with_loops);
    let mut a_s = ArrayD::zeros(IxDyn(&[t, v, v]));
    for f in 0..t {
        for (idx, val) in spatial.iter().enumerate() {
            a_s.as_slice_mut().unwrap()[f * v * v + idx] = *val;
        }
    }
    params.init_noisy(&format!("{prefix}.a_s"), a_s, 0.01, rng);

    params.init_linear(&format!("{prefix}.proj"), dims.feat_in, dims.feat_out, rng);
}

/// Graph convolution over joint features `x [T, V, d_in]`: learnable
/// temporal mixing per joint, learnable spatial mixing per frame, then
/// a feature projection and activation. `spatial_first` swaps the two
/// mixing steps.
pub fn st_graph_encode(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    x: VarId,
    spatial_first: bool,
) -> VarId {
    let a_t = bound.id(&format!("{prefix}.a_t"));
    let a_s = bound.id(&format!("{prefix}.a_s"));

    let mixed = if spatial_first {
        let hs = g.bmm(a_s, x); // [T, V, d]
        let hp = g.permute(hs, &[1, 0, 2]); // [V, T, d]
        let ht = g.bmm(a_t, hp); // [V, T, d]
        g.permute(ht, &[1, 0, 2]) // [T, V, d]
    } else {
        let xp = g.permute(x, &[1, 0, 2]); // [V, T, d]
        let ht = g.bmm(a_t, xp); // [V, T, d]
        let hp = g.permute(ht, &[1, 0, 2]); // [T, V, d]
        g.bmm(a_s, hp) // [T, V, d]
    };

    let w = bound.id(&format!("{prefix}.proj.w"));
    let b = bound.id(&format!("{prefix}.proj.b"));
    let projected = g.linear(mixed, w, Some(b));
    g.leaky_relu(projected, LEAKY_SLOPE)
}

// ----- feature-map compressor -----

/// Registers the two collapse MLPs of [`gcn_mlp_compress`]: one over
/// the time axis (`T -> hidden_t -> 1`) and one over the joint axis
/// (`V -> hidden_s -> 1`).
pub fn init_compressor(
    params: &mut Params,
    prefix: &str,
    frames: usize,
    joints: usize,
    hidden_t: usize,
    hidden_s: usize,
    rng: &mut ChaCha8Rng,
) {
    init_mlp(params, &format!("{prefix}.time"), &[frames, hidden_t, 1], rng, false);
    init_mlp(params, &format!("{prefix}.joint"), &[joints, hidden_s, 1], rng, false);
}

/// Collapses a `[T, V, d]` feature map to a `[d]` latent: an MLP eats
/// the time axis, another eats the joint axis, activations throughout.
pub fn gcn_mlp_compress(g: &mut Graph, bound: &Bound, prefix: &str, h: VarId) -> VarId {
    let shape = g.value(h).shape().to_vec();
    assert_eq!(shape.len(), 3, "compressor input must be [T, V, d]");
    let (v, d) = (shape[1], shape[2]);

    let vdt = g.permute(h, &[1, 2, 0]); // [V, d, T]
    let time_collapsed = mlp_forward(g, bound, &format!("{prefix}.time"), vdt, 2, true); // [V, d, 1]
    let vd = g.reshape(time_collapsed, &[v, d]);

    let dv = g.permute(vd, &[1, 0]); // [d, V]
    let joint_collapsed = mlp_forward(g, bound, &format!("{prefix}.joint"), dv, 2, true); // [d, 1]
    g.reshape(joint_collapsed, &[d])
}

// ----- point-voxel scene encoder -----

/// Constant mean-pool and broadcast operators between points and the
/// non-empty cells of a cubic voxel grid.
#[derive(Debug, Clone)]
pub struct VoxelPooling {
    /// `[C, N]`, row c averages the points inside cell c.
    pub pool: Array2<f64>,
    /// `[N, C]`, row n selects the cell containing point n.
    pub unpool: Array2<f64>,
    pub cell_count: usize,
}

/// Builds pooling operators for points already centered on the window;
/// the grid spans `[-radius, radius]^3` with `grid` cells per side.
/// Points outside the span clamp into the boundary cells. Only occupied
/// cells get rows.
pub fn voxel_pooling(points_centered: &Array2<f64>, radius: f64, grid: usize) -> VoxelPooling {
    assert!(grid >= 1 && radius > 0.0);
    let n = points_centered.nrows();
    let cell = 2.0 * radius / grid as f64;
    let mut assignment = vec![0usize; n];
    let mut occupied: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for i in 0..n {
        let mut key = 0usize;
        for c in 0..3 {
            let raw = ((points_centered[[i, c]] + radius) / cell).floor();
            let idx = (raw.max(0.0) as usize).min(grid - 1);
            key = key * grid + idx;
        }
        assignment[i] = key;
        *occupied.entry(key).or_insert(0) += 1;
    }
    let compact: std::collections::BTreeMap<usize, usize> = occupied
        .keys()
        .enumerate()
        .map(|(row, key)| (*key, row))
        .collect();
    let c = compact.len();
    let mut pool = Array2::zeros((c, n));
    let mut unpool = Array2::zeros((n, c));
    for i in 0..n {
        let row = compact[&assignment[i]];
        pool[[row, i]] = 1.0 / occupied[&assignment[i]] as f64;
        unpool[[i, row]] = 1.0;
    }
    VoxelPooling {
        pool,
        unpool,
        cell_count: c,
    }
}

/// Registers the point branch, voxel branch, and output head of
/// [`point_voxel_encode`]. The head starts at zero by default so the
/// encoder's correction is exactly zero until trained.
pub fn init_point_voxel(
    params: &mut Params,
    prefix: &str,
    feat_in: usize,
    width: usize,
    feat_out: usize,
    rng: &mut ChaCha8Rng,
    zero_head: bool,
) {
    init_mlp(params, &format!("{prefix}.point"), &[feat_in, width, width], rng, false);
    init_mlp(params, &format!("{prefix}.voxel"), &[width, width, width], rng, false);
    let head = format!("{prefix}.head");
    if zero_head {
        params.init_linear_zero(&head, width, feat_out);
    } else {
        params.init_linear(&head, width, feat_out, rng);
    }
}

/// Per-point encoder with a coarse context path: point features run
/// through an MLP, get mean-pooled into voxels, refined there, broadcast
/// back, fused additively, and projected by the output head.
pub fn point_voxel_encode(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    feats: VarId,
    pooling: &VoxelPooling,
) -> VarId {
    let point = mlp_forward(g, bound, &format!("{prefix}.point"), feats, 2, true); // [N, w]
    let p = g.constant(pooling.pool.clone().into_dyn());
    let pooled = g.matmul(p, point); // [C, w]
    let voxel = mlp_forward(g, bound, &format!("{prefix}.voxel"), pooled, 2, true); // [C, w]
    let q = g.constant(pooling.unpool.clone().into_dyn());
    let context = g.matmul(q, voxel); // [N, w]
    let fused = g.add(point, context);
    let w = bound.id(&format!("{prefix}.head.w"));
    let b = bound.id(&format!("{prefix}.head.b"));
    g.linear(fused, w, Some(b))
}

// ----- time-to-go embedding -----

/// Registers a `[horizon, width]` embedding table addressed by frames
/// remaining until the end of the prediction window.
pub fn init_time_to_go(
    params: &mut Params,
    prefix: &str,
    horizon: usize,
    width: usize,
    rng: &mut ChaCha8Rng,
) {
    params.init_uniform(&format!("{prefix}.table"), &[horizon, width], 0.1, rng);
}

/// Embedding row for `remaining` frames to go; `remaining` runs from
/// the full horizon down to 1 at the final frame.
pub fn time_to_go_lookup(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    remaining: usize,
) -> VarId {
    let table = bound.id(&format!("{prefix}.table"));
    let rows = g.value(table).shape()[0];
    assert!(
        (1..=rows).contains(&remaining),
        "remaining must be in 1..={rows}, got {remaining}"
    );
    g.select_row(table, remaining - 1)
}
