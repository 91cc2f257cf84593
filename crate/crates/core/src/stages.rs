//! The three forecasting stages and the end-to-end pipeline.
//!
//! Stage 1 predicts the joint-to-scene distance field for the whole
//! window as a frequency-domain correction on top of the replicated
//! observation, then reads contacts off the predicted field. Stage 2
//! forecasts the root trajectory from the observed root and the contact
//! conditioning. Stage 3 decodes full-body global poses one future
//! frame at a time, re-encoding its own predictions, conditioned on the
//! next root, the endpoint, the next contact frame, and a learnable
//! time-to-go embedding.
//!
//! Stage functions operate in meters at their boundaries; values are
//! scaled by the configured normalization factor only inside.

use ndarray::{Array1, Array2, Array3, ArrayD, Ix3, IxDyn};
use rand_chacha::ChaCha8Rng;

use crate::config::ForecastConfig;
use crate::encoders::{
    gcn_mlp_compress, init_compressor, init_mlp, init_point_voxel, init_st_graph,
    init_time_to_go, mlp_forward, point_voxel_encode, skeleton_adjacency, st_graph_encode,
    time_to_go_lookup, voxel_pooling, StGraphDims,
};
use crate::error::{Error, Result};
use crate::geometry::{
    contacts_from_distances, distance_tensor_subset, sample_scene_points,
};
use crate::nn::{Bound, Graph, Params, VarId};
use crate::transforms::{pad_replicate, DctBasis};
use crate::types::{
    ContactMap, ContactSubset, DistanceTensor, MotionSequence, RootTrajectory, SceneCloud,
    Skeleton,
};

/// Which contact conditioning stages 2 and 3 receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactMode {
    /// Stage-1 predictions.
    Predicted,
    /// Contacts computed from the reference motion over the full window.
    GroundTruth,
    /// All-zero conditioning; the contact pathway carries nothing.
    None,
}

impl ContactMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(ContactMode::Predicted),
            "ground_truth" => Ok(ContactMode::GroundTruth),
            "none" => Ok(ContactMode::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown contact mode '{other}' (expected predicted | ground_truth | none)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ContactMode::Predicted => "predicted",
            ContactMode::GroundTruth => "ground_truth",
            ContactMode::None => "none",
        }
    }
}

/// Architecture switches on top of the numeric configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub config: ForecastConfig,
    pub contact_subset: ContactSubset,
    /// Gate for the time-to-go embedding in stage 3.
    pub use_time_to_go: bool,
    /// Gate for endpoint conditioning (end root and end contacts).
    pub use_end_goal: bool,
    /// Run the spatial mixing before the temporal one in graph blocks.
    pub spatial_first: bool,
    /// Start the stage-1 correction head at zero so the initial
    /// distance prediction equals the replicated observation.
    pub zero_init_stage1_head: bool,
    /// Cells per side of the stage-1 voxel grid.
    pub voxel_grid: usize,
}

impl ModelSpec {
    pub fn new(config: ForecastConfig) -> Self {
        Self {
            config,
            contact_subset: ContactSubset::All,
            use_time_to_go: true,
            use_end_goal: true,
            spatial_first: false,
            zero_init_stage1_head: true,
            voxel_grid: 4,
        }
    }

    pub fn subset_joints(&self, skeleton: &Skeleton) -> Vec<usize> {
        self.contact_subset.resolve(skeleton)
    }

    /// One-line description of everything that fixes parameter shapes
    /// and wiring; checkpoints hash this to refuse incompatible loads.
    pub fn canonical_string(&self) -> String {
        format!(
            "{} contact_subset={} time_to_go={} end_goal={} spatial_first={} voxel_grid={} zero_init_stage1_head={}",
            self.config.canonical_string(),
            self.contact_subset.as_str(),
            self.use_time_to_go,
            self.use_end_goal,
            self.spatial_first,
            self.voxel_grid,
            self.zero_init_stage1_head,
        )
    }

    /// Registers every learnable tensor of all three stages.
    pub fn init_params(&self, skeleton: &Skeleton, rng: &mut ChaCha8Rng) -> Params {
        let cfg = &self.config;
        let (t_obs, f_fut, v, k, h) = (
            cfg.observed_frames,
            cfg.future_frames,
            cfg.joint_count,
            cfg.dct_coeffs,
            cfg.hidden_dim,
        );
        let t_total = cfg.total_frames();
        let subset = self.subset_joints(skeleton);
        let vc = subset.len();
        let adj = skeleton_adjacency(v, &skeleton.edges);
        let sub_adj = induced_adjacency(&adj, &subset);

        let mut p = Params::new();

        // stage 1: motion context + per-point correction field
        init_st_graph(
            &mut p,
            "s1.motion",
            StGraphDims {
                frames: t_obs,
                joints: v,
                feat_in: 3,
                feat_out: h,
            },
            &adj,
            rng,
        );
        init_compressor(&mut p, "s1.compress", t_obs, v, h, h, rng);
        init_point_voxel(
            &mut p,
            "s1.pv",
            3 + k * vc + h,
            h,
            k * vc,
            rng,
            self.zero_init_stage1_head,
        );

        // stage 2: coefficient regressor
        let s2_in = 3 * k + 3 * t_obs + t_total * vc * 4;
        init_mlp(&mut p, "s2.mlp", &[s2_in, h, h, 3 * k], rng, false);

        // stage 3: rolling motion encoder, contact frame encoder,
        // fusion and pose head, time-to-go table
        init_st_graph(
            &mut p,
            "s3.motion",
            StGraphDims {
                frames: t_obs,
                joints: v,
                feat_in: 3,
                feat_out: h,
            },
            &adj,
            rng,
        );
        init_compressor(&mut p, "s3.compress", t_obs, v, h, h, rng);
        init_st_graph(
            &mut p,
            "s3.contact",
            StGraphDims {
                frames: 1,
                joints: vc,
                feat_in: 4,
                feat_out: h,
            },
            &sub_adj,
            rng,
        );
        init_compressor(&mut p, "s3.contact_cmp", 1, vc, h, h, rng);
        init_mlp(&mut p, "s3.fuse", &[3 * h + 6, h, h], rng, false);
        init_mlp(&mut p, "s3.head", &[h, h, 3 * v], rng, false);
        init_time_to_go(&mut p, "s3.ttg", f_fut, h, rng);

        p
    }
}

/// Adjacency of the subgraph induced by `subset`, in subset order.
fn induced_adjacency(adjacency: &Array2<f64>, subset: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((subset.len(), subset.len()), |(i, j)| {
        adjacency[[subset[i], subset[j]]]
    })
}

/// Root position at the final observed frame, the reference point for
/// scene sampling and voxelization.
pub fn window_center(m_obs: &MotionSequence) -> [f64; 3] {
    let root = m_obs.skeleton().root_index;
    m_obs.joint(m_obs.frame_count() - 1, root)
}

// ----- conditioning helpers -----

/// Contact conditioning as a dense `[t_total, vc, 4]` array whose
/// coordinates are window-centered meters; `None` produces all zeros,
/// which stay zeros so an absent map carries no position information.
pub fn contact_conditioning(
    map: Option<&ContactMap>,
    center: [f64; 3],
    t_total: usize,
    vc: usize,
) -> Array3<f64> {
    match map {
        Some(m) => {
            assert_eq!(m.frame_count(), t_total, "conditioning frame count");
            assert_eq!(m.joint_count(), vc, "conditioning joint count");
            let mut out = m.entries().clone();
            for mut row in out.rows_mut() {
                for c in 0..3 {
                    row[c] -= center[c];
                }
            }
            out
        }
        None => Array3::zeros((t_total, vc, 4)),
    }
}

/// Scales the coordinate channels of contact conditioning, leaving
/// flags untouched.
fn normalize_conditioning(cond_m: &Array3<f64>, factor: f64) -> Array3<f64> {
    let mut out = cond_m.clone();
    for mut row in out.rows_mut() {
        for c in 0..3 {
            row[c] *= factor;
        }
    }
    out
}

// ----- losses -----

/// Mean squared error against a fixed target.
pub fn mse_loss(g: &mut Graph, prediction: VarId, target: &ArrayD<f64>) -> VarId {
    let t = g.constant(target.clone());
    let diff = g.sub(prediction, t);
    let sq = g.mul(diff, diff);
    g.mean(sq)
}

/// Mean Euclidean distance over the last axis (length 3) against a
/// fixed target.
pub fn mean_euclid_loss(g: &mut Graph, prediction: VarId, target: &ArrayD<f64>) -> VarId {
    let last = g.value(prediction).ndim() - 1;
    assert_eq!(g.value(prediction).shape()[last], 3, "loss expects xyz rows");
    let t = g.constant(target.clone());
    let diff = g.sub(prediction, t);
    let sq = g.mul(diff, diff);
    let dist2 = g.sum_axis(sq, last);
    let dist = g.sqrt_guarded(dist2);
    g.mean(dist)
}

// ----- stage 1 -----

/// Graph nodes produced by [`stage1_forecast`].
pub struct Stage1Build {
    /// Predicted distance field `[t_total, vc, n]`, meters, clamped at 0.
    pub distances: VarId,
    /// Same field before clamping; use for losses.
    pub distances_raw: VarId,
}

/// Builds the stage-1 graph: the observed distance field is replicated
/// forward, encoded in full over time, and corrected in its first K
/// coefficients by a point-voxel network conditioned on the scene
/// geometry and a latent of the observed motion.
pub fn stage1_forecast(
    g: &mut Graph,
    bound: &Bound,
    spec: &ModelSpec,
    m_obs: &MotionSequence,
    scene_sampled: &SceneCloud,
) -> Result<Stage1Build> {
    let cfg = &spec.config;
    let (t_obs, t_total, k, h) = (
        cfg.observed_frames,
        cfg.total_frames(),
        cfg.dct_coeffs,
        cfg.hidden_dim,
    );
    if m_obs.frame_count() != t_obs {
        return Err(Error::ShapeMismatch {
            context: "stage1_forecast",
            expected: format!("{t_obs} observed frames"),
            got: format!("{}", m_obs.frame_count()),
        });
    }
    let skeleton = m_obs.skeleton().clone();
    let subset = spec.subset_joints(&skeleton);
    let vc = subset.len();
    let n = scene_sampled.len();
    let center = window_center(m_obs);

    // data side: observed distances, replicated and encoded in full
    let d_obs = distance_tensor_subset(m_obs, scene_sampled, &subset);
    let d_flat = d_obs.flattened(); // [t_obs * vc, n] time-major
    let d_time_major = d_flat
        .into_shape_with_order((t_obs, vc * n))
        .expect("row-major reshape");
    let padded = pad_replicate(d_time_major.view(), t_total)?;
    let padded_n = &padded * cfg.norm_factor;
    let basis = DctBasis::new(t_total, t_total)?;
    let c_base = basis.encode(padded_n.view())?; // [t_total, vc * n]

    // per-point conditioning: centered position plus that point's slice
    // of the first K coefficient rows
    let pts = scene_sampled.points();
    let mut point_feat = Array2::zeros((n, 3 + k * vc));
    for p in 0..n {
        for c in 0..3 {
            point_feat[[p, c]] = (pts[[p, c]] - center[c]) * cfg.norm_factor;
        }
        for kk in 0..k {
            for (vi, _) in subset.iter().enumerate() {
                point_feat[[p, 3 + kk * vc + vi]] = c_base[[kk, vi * n + p]];
            }
        }
    }

    // motion latent
    let motion_feats = motion_features(m_obs, center, cfg.norm_factor);
    let x = g.constant(motion_feats);
    let enc = st_graph_encode(g, bound, "s1.motion", x, spec.spatial_first);
    let latent = gcn_mlp_compress(g, bound, "s1.compress", enc); // [h]

    // broadcast the latent onto every point and fuse with geometry
    let ones = g.constant(Array2::<f64>::ones((n, 1)).into_dyn());
    let lat_row = g.reshape(latent, &[1, h]);
    let lat_all = g.matmul(ones, lat_row); // [n, h]
    let geo = g.constant(point_feat.into_dyn());
    let feats = g.concat(&[geo, lat_all], 1); // [n, 3 + k*vc + h]

    let centered = {
        let mut c = Array2::zeros((n, 3));
        for p in 0..n {
            for ci in 0..3 {
                c[[p, ci]] = pts[[p, ci]] - center[ci];
            }
        }
        c
    };
    let pooling = voxel_pooling(&centered, cfg.sample_radius, spec.voxel_grid);
    let correction = point_voxel_encode(g, bound, "s1.pv", feats, &pooling); // [n, k*vc]

    // fold the correction into the first K coefficient rows
    let corr = g.reshape(correction, &[n, k, vc]);
    let corr = g.permute(corr, &[1, 2, 0]); // [k, vc, n]
    let corr = g.reshape(corr, &[k, vc * n]);

    let base = g.constant(c_base.into_dyn());
    let low = g.slice_axis(base, 0, 0, k);
    let low_hat = g.add(low, corr);
    let c_hat = if k < t_total {
        let rest = g.slice_axis(base, 0, k, t_total - k);
        g.concat(&[low_hat, rest], 0)
    } else {
        low_hat
    };

    // decode and rescale to meters
    let decode = g.constant(basis.matrix().t().to_owned().into_dyn());
    let d_hat_n = g.matmul(decode, c_hat); // [t_total, vc * n]
    let d_hat_m = g.scale(d_hat_n, 1.0 / cfg.norm_factor);
    let raw = g.reshape(d_hat_m, &[t_total, vc, n]);
    let clamped = g.clamp_min(raw, 0.0);
    Ok(Stage1Build {
        distances: clamped,
        distances_raw: raw,
    })
}

/// Observed joint positions as window-centered, normalized features
/// `[t_obs, v, 3]`.
fn motion_features(m_obs: &MotionSequence, center: [f64; 3], factor: f64) -> ArrayD<f64> {
    let mut out = m_obs.data().clone();
    for mut row in out.rows_mut() {
        for c in 0..3 {
            row[c] = (row[c] - center[c]) * factor;
        }
    }
    out.into_dyn()
}

/// Runs stage 1 without gradients and extracts contacts from the
/// predicted distance field.
pub fn run_stage1(
    spec: &ModelSpec,
    params: &Params,
    m_obs: &MotionSequence,
    scene_sampled: &SceneCloud,
) -> Result<(DistanceTensor, ContactMap)> {
    let mut g = Graph::new();
    let bound = Bound::bind(&mut g, params);
    let build = stage1_forecast(&mut g, &bound, spec, m_obs, scene_sampled)?;
    let values = g
        .value(build.distances)
        .clone()
        .into_dimensionality::<Ix3>()
        .expect("stage-1 output is 3-D");
    let distances = DistanceTensor::new(values)?;
    let contacts =
        contacts_from_distances(&distances, scene_sampled, spec.config.contact_threshold)?;
    Ok((distances, contacts))
}

// ----- stage 2 -----

/// Graph nodes produced by [`stage2_forecast`].
pub struct Stage2Build {
    /// Full-window root trajectory `[t_total, 3]`, meters, world frame.
    pub root_m: VarId,
    /// Same trajectory window-centered and normalized, the form stage 3
    /// consumes.
    pub root_n: VarId,
}

/// Builds the stage-2 graph: frequency coefficients of the replicated
/// observed root, the raw observed root, and the contact conditioning
/// feed an MLP that regresses the coefficients of the full trajectory.
///
/// Every feature is expressed relative to the last observed root
/// position, so the regressor never sees world coordinates; `cond_m`
/// must already be window-centered (see [`contact_conditioning`]).
pub fn stage2_forecast(
    g: &mut Graph,
    bound: &Bound,
    spec: &ModelSpec,
    r_obs: &RootTrajectory,
    cond_m: &Array3<f64>,
) -> Result<Stage2Build> {
    let cfg = &spec.config;
    let (t_obs, t_total, k) = (cfg.observed_frames, cfg.total_frames(), cfg.dct_coeffs);
    if r_obs.len() != t_obs {
        return Err(Error::ShapeMismatch {
            context: "stage2_forecast",
            expected: format!("{t_obs} observed frames"),
            got: format!("{}", r_obs.len()),
        });
    }
    let (cl, _cv, cc) = cond_m.dim();
    if cl != t_total || cc != 4 {
        return Err(Error::ShapeMismatch {
            context: "stage2_forecast",
            expected: format!("conditioning [{t_total}, vc, 4]"),
            got: format!("{:?}", cond_m.dim()),
        });
    }

    let center = r_obs.last();
    let mut centered = r_obs.positions().to_owned();
    for mut row in centered.rows_mut() {
        for c in 0..3 {
            row[c] -= center[c];
        }
    }
    let padded = pad_replicate(centered.view(), t_total)? * cfg.norm_factor;
    let basis = DctBasis::new(k, t_total)?;
    let coeffs_in = basis.encode(padded.view())?; // [k, 3]

    let cond_n = normalize_conditioning(cond_m, cfg.norm_factor);
    let mut features = Vec::with_capacity(3 * k + 3 * t_obs + cond_n.len());
    features.extend(coeffs_in.iter().copied());
    for row in centered.rows() {
        features.extend(row.iter().map(|v| v * cfg.norm_factor));
    }
    features.extend(cond_n.iter().copied());

    let x = g.constant(Array1::from_vec(features).into_dyn());
    let out = mlp_forward(g, bound, "s2.mlp", x, 3, false); // [3k]
    let coeffs = g.reshape(out, &[k, 3]);
    let decode = g.constant(basis.matrix().t().to_owned().into_dyn()); // [t_total, k]
    let root_n = g.matmul(decode, coeffs);
    let scaled = g.scale(root_n, 1.0 / cfg.norm_factor);
    let offset = g.constant(
        Array1::from_vec(center.to_vec())
            .into_shape_with_order(IxDyn(&[1, 3]))
            .expect("center row"),
    );
    let root_m = g.add(scaled, offset);
    Ok(Stage2Build { root_m, root_n })
}

/// Runs stage 2 without gradients; returns the full-window trajectory.
pub fn run_stage2(
    spec: &ModelSpec,
    params: &Params,
    r_obs: &RootTrajectory,
    cond_m: &Array3<f64>,
) -> Result<RootTrajectory> {
    let mut g = Graph::new();
    let bound = Bound::bind(&mut g, params);
    let build = stage2_forecast(&mut g, &bound, spec, r_obs, cond_m)?;
    let values = g
        .value(build.root_m)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("stage-2 output is 2-D");
    RootTrajectory::new(values)
}

// ----- stage 3 -----

/// Graph nodes produced by [`stage3_decode`].
pub struct Stage3Build {
    /// Predicted future poses `[f_fut, v, 3]`, meters.
    pub poses_m: VarId,
}

/// One decoding step: fuses the rolling motion latent with the next
/// root, the endpoint, the next contact frame, and the frames-to-go
/// embedding, and emits one normalized pose `[v, 3]`.
#[allow(clippy::too_many_arguments)]
pub fn stage3_step(
    g: &mut Graph,
    bound: &Bound,
    spec: &ModelSpec,
    motion_latent: VarId,
    next_root_n: VarId,
    end_root_n: VarId,
    next_contacts_n: VarId,
    end_contact_latent: VarId,
    remaining: usize,
) -> VarId {
    let v = spec.config.joint_count;
    let next_contact_latent = contact_frame_latent(g, bound, spec, next_contacts_n);
    let x = g.concat(
        &[
            motion_latent,
            next_root_n,
            end_root_n,
            next_contact_latent,
            end_contact_latent,
        ],
        0,
    );
    let mut hm = mlp_forward(g, bound, "s3.fuse", x, 2, true);
    if spec.use_time_to_go {
        let te = time_to_go_lookup(g, bound, "s3.ttg", remaining);
        hm = g.add(hm, te);
    }
    let out = mlp_forward(g, bound, "s3.head", hm, 2, false); // [3v]
    g.reshape(out, &[v, 3])
}

/// Encodes one contact frame `[vc, 4]` to a latent, shared between the
/// per-step and the endpoint pathways.
fn contact_frame_latent(
    g: &mut Graph,
    bound: &Bound,
    spec: &ModelSpec,
    contacts_n: VarId,
) -> VarId {
    let shape = g.value(contacts_n).shape().to_vec();
    let framed = g.reshape(contacts_n, &[1, shape[0], shape[1]]);
    let enc = st_graph_encode(g, bound, "s3.contact", framed, spec.spatial_first);
    gcn_mlp_compress(g, bound, "s3.contact_cmp", enc)
}

/// Builds the autoregressive stage-3 graph. `root_future_n` is the
/// window-centered, normalized future root `[f_fut, 3]`; passing a node
/// that descends from stage 2 lets gradients flow back through the
/// trajectory. `cond_m` must be window-centered meters.
pub fn stage3_decode(
    g: &mut Graph,
    bound: &Bound,
    spec: &ModelSpec,
    m_obs: &MotionSequence,
    root_future_n: VarId,
    cond_m: &Array3<f64>,
) -> Result<Stage3Build> {
    let cfg = &spec.config;
    let (t_obs, f_fut, v) = (cfg.observed_frames, cfg.future_frames, cfg.joint_count);
    let t_total = cfg.total_frames();
    let h = cfg.hidden_dim;
    if m_obs.frame_count() != t_obs {
        return Err(Error::ShapeMismatch {
            context: "stage3_decode",
            expected: format!("{t_obs} observed frames"),
            got: format!("{}", m_obs.frame_count()),
        });
    }
    if g.value(root_future_n).shape() != [f_fut, 3] {
        return Err(Error::ShapeMismatch {
            context: "stage3_decode",
            expected: format!("future root [{f_fut}, 3]"),
            got: format!("{:?}", g.value(root_future_n).shape()),
        });
    }
    if cond_m.dim().0 != t_total {
        return Err(Error::ShapeMismatch {
            context: "stage3_decode",
            expected: format!("conditioning over {t_total} frames"),
            got: format!("{:?}", cond_m.dim()),
        });
    }

    let center = window_center(m_obs);
    let cond_n = normalize_conditioning(cond_m, cfg.norm_factor);

    // endpoint conditioning, or inert zeros when disabled
    let (end_root, end_contact_latent) = if spec.use_end_goal {
        let er = g.select_row(root_future_n, f_fut - 1);
        let last = cond_frame_const(g, &cond_n, t_total - 1);
        let ecl = contact_frame_latent(g, bound, spec, last);
        (er, ecl)
    } else {
        let er = g.constant(ArrayD::zeros(IxDyn(&[3])));
        let ecl = g.constant(ArrayD::zeros(IxDyn(&[h])));
        (er, ecl)
    };

    // rolling window rows, centered and normalized, starting from the
    // observation
    let observed = g.constant(motion_features(m_obs, center, cfg.norm_factor));
    let mut rows: Vec<VarId> = (0..t_obs).map(|t| g.slice_axis(observed, 0, t, 1)).collect();

    let mut poses = Vec::with_capacity(f_fut);
    for j in 0..f_fut {
        let window = g.concat(&rows[j..j + t_obs], 0); // [t_obs, v, 3]
        let enc = st_graph_encode(g, bound, "s3.motion", window, spec.spatial_first);
        let latent = gcn_mlp_compress(g, bound, "s3.compress", enc);

        let next = (j + 1).min(f_fut - 1);
        let next_root = g.select_row(root_future_n, next);
        let next_contacts = cond_frame_const(g, &cond_n, t_obs + next);
        let remaining = f_fut - j;

        let pose = stage3_step(
            g,
            bound,
            spec,
            latent,
            next_root,
            end_root,
            next_contacts,
            end_contact_latent,
            remaining,
        );
        rows.push(g.reshape(pose, &[1, v, 3]));
        poses.push(*rows.last().unwrap());
    }

    let stacked = g.concat(&poses, 0); // [f_fut, v, 3] centered, normalized
    let scaled = g.scale(stacked, 1.0 / cfg.norm_factor);
    let offset = g.constant(
        Array1::from_vec(center.to_vec())
            .into_shape_with_order(IxDyn(&[1, 1, 3]))
            .expect("center row"),
    );
    let poses_m = g.add(scaled, offset);
    Ok(Stage3Build { poses_m })
}

/// One conditioning frame as a `[vc, 4]` constant.
fn cond_frame_const(g: &mut Graph, cond_n: &Array3<f64>, frame: usize) -> VarId {
    let row = cond_n
        .index_axis(ndarray::Axis(0), frame)
        .to_owned()
        .into_dyn();
    g.constant(row)
}

/// Runs stage 3 without gradients, conditioning on a fixed future root
/// trajectory in world-frame meters.
pub fn run_stage3(
    spec: &ModelSpec,
    params: &Params,
    m_obs: &MotionSequence,
    root_future_m: &Array2<f64>,
    cond_m: &Array3<f64>,
) -> Result<MotionSequence> {
    let mut g = Graph::new();
    let bound = Bound::bind(&mut g, params);
    let center = window_center(m_obs);
    let mut centered = root_future_m.clone();
    for mut row in centered.rows_mut() {
        for c in 0..3 {
            row[c] -= center[c];
        }
    }
    let root_n = g.constant((centered * spec.config.norm_factor).into_dyn());
    let build = stage3_decode(&mut g, &bound, spec, m_obs, root_n, cond_m)?;
    let values = g
        .value(build.poses_m)
        .clone()
        .into_dimensionality::<Ix3>()
        .expect("stage-3 output is 3-D");
    MotionSequence::new(values, m_obs.skeleton().clone())
}

// ----- full pipeline -----

/// Everything the cascade produces for one observed window.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Contact conditioning actually used, over the full window.
    pub contacts: ContactMap,
    /// Predicted distance field from stage 1 (present unless the
    /// conditioning mode bypassed it).
    pub distances: Option<DistanceTensor>,
    /// Future root trajectory `[f_fut]`, meters.
    pub root: RootTrajectory,
    /// Future poses `[f_fut, v, 3]`, meters.
    pub poses: MotionSequence,
    /// The sampled scene the stages conditioned on.
    pub scene_sampled: SceneCloud,
}

/// Runs the full three-stage cascade on one observed window.
///
/// `reference` supplies the full-window motion needed to build
/// ground-truth conditioning; it must start with the observed window
/// and is only consulted in [`ContactMode::GroundTruth`].
pub fn full_pipeline(
    spec: &ModelSpec,
    params: &Params,
    m_obs: &MotionSequence,
    scene: &SceneCloud,
    mode: ContactMode,
    reference: Option<&MotionSequence>,
) -> Result<PipelineOutput> {
    let cfg = &spec.config;
    let t_total = cfg.total_frames();
    let skeleton = m_obs.skeleton().clone();
    let subset = spec.subset_joints(&skeleton);
    let vc = subset.len();
    let center = window_center(m_obs);

    let scene_sampled = sample_scene_points(
        scene,
        center,
        cfg.sample_radius,
        cfg.sample_count,
        cfg.seed,
    )?;

    let (distances, contacts) = match mode {
        ContactMode::Predicted => {
            let (d, c) = run_stage1(spec, params, m_obs, &scene_sampled)?;
            (Some(d), c)
        }
        ContactMode::GroundTruth => {
            let full = reference.ok_or_else(|| {
                Error::InvalidConfig(
                    "ground-truth conditioning requires a reference motion".into(),
                )
            })?;
            if full.frame_count() != t_total {
                return Err(Error::ShapeMismatch {
                    context: "full_pipeline",
                    expected: format!("reference over {t_total} frames"),
                    got: format!("{}", full.frame_count()),
                });
            }
            let d = distance_tensor_subset(full, &scene_sampled, &subset);
            let c = contacts_from_distances(&d, &scene_sampled, cfg.contact_threshold)?;
            (None, c)
        }
        ContactMode::None => {
            let zeros = ContactMap::new(Array3::zeros((t_total, vc, 4)))?;
            (None, zeros)
        }
    };

    let cond_m = match mode {
        ContactMode::None => contact_conditioning(None, center, t_total, vc),
        _ => contact_conditioning(Some(&contacts), center, t_total, vc),
    };
    let r_obs = m_obs.root_trajectory();
    let root_full = run_stage2(spec, params, &r_obs, &cond_m)?;
    let future = root_full
        .positions()
        .slice(ndarray::s![cfg.observed_frames.., ..])
        .to_owned();

    let poses = run_stage3(spec, params, m_obs, &future, &cond_m)?;
    let root = RootTrajectory::new(future)?;

    Ok(PipelineOutput {
        contacts,
        distances,
        root,
        poses,
        scene_sampled,
    })
}
