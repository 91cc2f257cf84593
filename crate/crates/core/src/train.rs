//! Staged optimization of the forecasting cascade.
//!
//! Three protocols share one loop. `three_stage` trains each stage in
//! isolation and freezes it before the next begins. `two_stage_finetune`
//! pre-trains the trajectory stage, then lets the pose loss keep tuning
//! it. `two_stage_e2e` trains trajectory and pose jointly from scratch.
//! The contact stage, when its predictions are the conditioning source,
//! is always trained first and then frozen; with ground-truth or absent
//! conditioning it is skipped entirely.
//!
//! A phase only ever applies gradients to its own parameter prefixes,
//! so freezing is enforced by construction rather than by flags on the
//! tensors.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::ForecastConfig;
use crate::error::{Error, Result};
use crate::geometry::{contacts_from_distances, distance_tensor_subset, sample_scene_points};
use crate::io::checkpoint::save_checkpoint;
use crate::io::fnv1a;
use crate::io::formats::{window_split, Sequence};
use crate::nn::{clip_global_norm, Adam, Bound, Graph, Params};
use crate::stages::{
    contact_conditioning, mean_euclid_loss, mse_loss, run_stage1, stage1_forecast,
    stage2_forecast, stage3_decode, window_center, ContactMode, ModelSpec,
};
use crate::types::{ContactSubset, MotionSequence, RootTrajectory, SceneCloud};

/// Which stages train, and together or apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    ThreeStage,
    TwoStageFinetune,
    TwoStageE2e,
}

impl TrainingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "three_stage" => Ok(Self::ThreeStage),
            "two_stage_finetune" => Ok(Self::TwoStageFinetune),
            "two_stage_e2e" => Ok(Self::TwoStageE2e),
            other => Err(Error::InvalidConfig(format!(
                "unknown training mode '{other}' (expected three_stage | two_stage_finetune | two_stage_e2e)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ThreeStage => "three_stage",
            Self::TwoStageFinetune => "two_stage_finetune",
            Self::TwoStageE2e => "two_stage_e2e",
        }
    }
}

/// Everything the trainer needs beyond the forecast geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub mode: TrainingMode,
    /// Epochs per phase.
    pub epochs: usize,
    pub lr_stage1: f64,
    pub lr_stage23: f64,
    /// Windows whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    pub use_end_goal: bool,
    pub use_ttg: bool,
    pub contact_subset: ContactSubset,
    /// Conditioning source for stages 2 and 3 during training.
    pub contact_source: ContactMode,
    pub seed: u64,
    pub loss_weight_stage1: f64,
    pub loss_weight_stage2: f64,
    pub loss_weight_stage3: f64,
    /// Ground-truth future root feeds the pose decoder for the first
    /// half of a stage-3-only phase; joint phases always use the
    /// predicted root so gradients can reach stage 2.
    pub teacher_forcing: bool,
    pub window_stride: usize,
    pub clip_norm: f64,
    pub spatial_first: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mode: TrainingMode::ThreeStage,
            epochs: 50,
            lr_stage1: 5e-4,
            lr_stage23: 1e-3,
            batch_size: 8,
            use_end_goal: true,
            use_ttg: true,
            contact_subset: ContactSubset::All,
            contact_source: ContactMode::Predicted,
            seed: 0,
            loss_weight_stage1: 1.0,
            loss_weight_stage2: 1.0,
            loss_weight_stage3: 1.0,
            teacher_forcing: true,
            window_stride: 30,
            clip_norm: 1.0,
            spatial_first: false,
        }
    }
}

impl TrainingConfig {
    pub fn check(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.lr_stage1 <= 0.0 || self.lr_stage23 <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.window_stride == 0 {
            return Err(Error::InvalidConfig(
                "batch size and window stride must be positive".into(),
            ));
        }
        if self.loss_weight_stage1 < 0.0
            || self.loss_weight_stage2 < 0.0
            || self.loss_weight_stage3 < 0.0
        {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::InvalidConfig("clip norm must be positive".into()));
        }
        Ok(())
    }

    /// Builds a training config from `key=value` pairs, defaulting
    /// absent keys and leaving unrelated keys in place. `seed` is the
    /// shared pipeline seed; every random choice in training derives
    /// from that one key, so this parser deliberately has no seed key
    /// of its own.
    pub fn from_kv(kv: &mut crate::io::config_file::KvConfig, seed: u64) -> Result<Self> {
        let d = Self::default();
        let mode = match kv.take("mode") {
            Some(s) => TrainingMode::parse(&s)?,
            None => d.mode,
        };
        let contact_subset = match kv.take("contact_subset") {
            Some(s) => ContactSubset::parse(&s)?,
            None => d.contact_subset,
        };
        let contact_source = match kv.take("contact_source") {
            Some(s) => ContactMode::parse(&s)?,
            None => d.contact_source,
        };
        let tc = Self {
            mode,
            epochs: kv.take_or("epochs", d.epochs)?,
            lr_stage1: kv.take_or("lr_stage1", d.lr_stage1)?,
            lr_stage23: kv.take_or("lr_stage23", d.lr_stage23)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            use_end_goal: kv.take_or("use_end_goal", d.use_end_goal)?,
            use_ttg: kv.take_or("use_ttg", d.use_ttg)?,
            contact_subset,
            contact_source,
            seed,
            loss_weight_stage1: kv.take_or("loss_weight_stage1", d.loss_weight_stage1)?,
            loss_weight_stage2: kv.take_or("loss_weight_stage2", d.loss_weight_stage2)?,
            loss_weight_stage3: kv.take_or("loss_weight_stage3", d.loss_weight_stage3)?,
            teacher_forcing: kv.take_or("teacher_forcing", d.teacher_forcing)?,
            window_stride: kv.take_or("window_stride", d.window_stride)?,
            clip_norm: kv.take_or("clip_norm", d.clip_norm)?,
            spatial_first: kv.take_or("spatial_first", d.spatial_first)?,
        };
        tc.check()?;
        Ok(tc)
    }

    /// The model wiring this run trains.
    pub fn model_spec(&self, config: &ForecastConfig) -> ModelSpec {
        let mut spec = ModelSpec::new(config.clone());
        spec.contact_subset = self.contact_subset;
        spec.use_time_to_go = self.use_ttg;
        spec.use_end_goal = self.use_end_goal;
        spec.spatial_first = self.spatial_first;
        spec
    }
}

/// One optimization phase over a fixed parameter subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Stage1,
    Stage2,
    Stage3,
    Joint23,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Stage1 => "stage1",
            Phase::Stage2 => "stage2",
            Phase::Stage3 => "stage3",
            Phase::Joint23 => "joint23",
        }
    }

    /// Parameter prefixes this phase is allowed to update.
    pub fn prefixes(&self) -> &'static [&'static str] {
        match self {
            Phase::Stage1 => &["s1."],
            Phase::Stage2 => &["s2."],
            Phase::Stage3 => &["s3."],
            Phase::Joint23 => &["s2.", "s3."],
        }
    }
}

/// The phase sequence a config runs. The contact stage appears only
/// when its predictions are the conditioning source.
pub fn phase_plan(tc: &TrainingConfig) -> Vec<Phase> {
    let mut plan = Vec::new();
    if tc.contact_source == ContactMode::Predicted {
        plan.push(Phase::Stage1);
    }
    match tc.mode {
        TrainingMode::ThreeStage => {
            plan.push(Phase::Stage2);
            plan.push(Phase::Stage3);
        }
        TrainingMode::TwoStageFinetune => {
            plan.push(Phase::Stage2);
            plan.push(Phase::Joint23);
        }
        TrainingMode::TwoStageE2e => {
            plan.push(Phase::Joint23);
        }
    }
    plan
}

/// One training window with every fixed quantity precomputed.
pub struct PreparedSample {
    pub m_obs: MotionSequence,
    pub r_obs: RootTrajectory,
    pub center: [f64; 3],
    pub scene_sampled: SceneCloud,
    /// Stage-1 regression target `[t_total, vc, n]`.
    pub gt_distances: ArrayD<f64>,
    /// Conditioning from ground-truth contacts, window-centered meters.
    pub gt_cond: Array3<f64>,
    /// All-zero conditioning of the same shape.
    pub zero_cond: Array3<f64>,
    /// Conditioning from stage-1 predictions; filled once that stage is
    /// frozen.
    pub pred_cond: Option<Array3<f64>>,
    /// Stage-2 target `[t_total, 3]`.
    pub gt_root_full: ArrayD<f64>,
    /// Teacher-forcing input `[f_fut, 3]`.
    pub gt_root_future: Array2<f64>,
    /// Stage-3 target `[f_fut, v, 3]`.
    pub gt_poses_future: ArrayD<f64>,
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a(&bytes)
}

/// Conditioning actually fed to stages 2/3 for this sample.
fn conditioning<'a>(tc: &TrainingConfig, sample: &'a PreparedSample) -> &'a Array3<f64> {
    match tc.contact_source {
        ContactMode::GroundTruth => &sample.gt_cond,
        ContactMode::None => &sample.zero_cond,
        ContactMode::Predicted => sample
            .pred_cond
            .as_ref()
            .expect("predicted conditioning filled after the contact phase"),
    }
}

/// Runs the frozen contact stage over every sample and stores its
/// predictions as conditioning.
pub fn fill_predicted_conditioning(
    spec: &ModelSpec,
    params: &Params,
    samples: &mut [PreparedSample],
) -> Result<()> {
    let cfg = &spec.config;
    for sample in samples.iter_mut() {
        let (_d, contacts) = run_stage1(spec, params, &sample.m_obs, &sample.scene_sampled)?;
        let vc = contacts.joint_count();
        sample.pred_cond = Some(contact_conditioning(
            Some(&contacts),
            sample.center,
            cfg.total_frames(),
            vc,
        ));
    }
    Ok(())
}

/// Loss value and phase-filtered gradients for one sample. Public so
/// audits can inspect exactly what a phase would apply.
pub fn phase_gradients(
    phase: Phase,
    spec: &ModelSpec,
    params: &Params,
    tc: &TrainingConfig,
    sample: &PreparedSample,
    epoch: usize,
) -> Result<(f64, BTreeMap<String, ArrayD<f64>>)> {
    let cfg = &spec.config;
    let mut g = Graph::new();
    let bound = Bound::bind(&mut g, params);

    let loss = match phase {
        Phase::Stage1 => {
            let b = stage1_forecast(&mut g, &bound, spec, &sample.m_obs, &sample.scene_sampled)?;
            let l = mse_loss(&mut g, b.distances_raw, &sample.gt_distances);
            g.scale(l, tc.loss_weight_stage1)
        }
        Phase::Stage2 => {
            let cond = conditioning(tc, sample);
            let b = stage2_forecast(&mut g, &bound, spec, &sample.r_obs, cond)?;
            let l = mean_euclid_loss(&mut g, b.root_m, &sample.gt_root_full);
            g.scale(l, tc.loss_weight_stage2)
        }
        Phase::Stage3 => {
            let cond = conditioning(tc, sample);
            let use_gt_root = tc.teacher_forcing && 2 * epoch <= tc.epochs;
            let root_n = if use_gt_root {
                let mut centered = sample.gt_root_future.clone();
                for mut row in centered.rows_mut() {
                    for c in 0..3 {
                        row[c] -= sample.center[c];
                    }
                }
                g.constant((centered * cfg.norm_factor).into_dyn())
            } else {
                let b2 = stage2_forecast(&mut g, &bound, spec, &sample.r_obs, cond)?;
                g.slice_axis(b2.root_n, 0, cfg.observed_frames, cfg.future_frames)
            };
            let b3 = stage3_decode(&mut g, &bound, spec, &sample.m_obs, root_n, cond)?;
            let l = mean_euclid_loss(&mut g, b3.poses_m, &sample.gt_poses_future);
            g.scale(l, tc.loss_weight_stage3)
        }
        Phase::Joint23 => {
            let cond = conditioning(tc, sample);
            let b2 = stage2_forecast(&mut g, &bound, spec, &sample.r_obs, cond)?;
            let root_fut = g.slice_axis(b2.root_n, 0, cfg.observed_frames, cfg.future_frames);
            let b3 = stage3_decode(&mut g, &bound, spec, &sample.m_obs, root_fut, cond)?;
            let l2 = mean_euclid_loss(&mut g, b2.root_m, &sample.gt_root_full);
            let l3 = mean_euclid_loss(&mut g, b3.poses_m, &sample.gt_poses_future);
            let w2 = g.scale(l2, tc.loss_weight_stage2);
            let w3 = g.scale(l3, tc.loss_weight_stage3);
            g.add(w2, w3)
        }
    };

    let value = g.value(loss).iter().copied().next().expect("scalar loss");
    g.backward(loss);
    let mut grads = bound.grads(&g, params);
    grads.retain(|name, _| phase.prefixes().iter().any(|p| name.starts_with(p)));
    Ok((value, grads))
}

/// One epoch record; serialized as `epoch,phase,loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: &'static str,
    pub loss: f64,
}

/// Everything a training run produces.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub log: Vec<EpochRecord>,
    /// Phase names in execution order.
    pub phases: Vec<&'static str>,
}

/// Trains per the config. `initial` continues from existing parameters;
/// `log_path` appends one `epoch,phase,loss` line per epoch as it
/// happens; `checkpoint_dir` receives `<phase>.ckpt` after each phase
/// plus `final.ckpt`.
pub fn train(
    config: &ForecastConfig,
    tc: &TrainingConfig,
    dataset: &[Sequence],
    initial: Option<Params>,
    log_path: Option<&Path>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.check()?;
    tc.check()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset holds no sequences"));
    }
    let spec = tc.model_spec(config);
    let skeleton = dataset[0].motion.skeleton().clone();
    let mut params = match initial {
        Some(p) => p,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
            spec.init_params(&skeleton, &mut rng)
        }
    };

    let mut samples = prepare_samples(&spec, dataset, tc.window_stride)?;

    let mut log = Vec::new();
    let mut phases_run = Vec::new();
    let plan = phase_plan(tc);
    for (phase_idx, phase) in plan.iter().copied().enumerate() {
        if phase != Phase::Stage1
            && tc.contact_source == ContactMode::Predicted
            && samples.iter().any(|s| s.pred_cond.is_none())
        {
            fill_predicted_conditioning(&spec, &params, &mut samples)?;
        }

        let lr = match phase {
            Phase::Stage1 => tc.lr_stage1,
            _ => tc.lr_stage23,
        };
        let mut opt = Adam::new(lr);
        for epoch in 1..=tc.epochs {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(&[tc.seed, phase_idx as u64, epoch as u64]));
            order.shuffle(&mut rng);

            let mut epoch_loss = 0.0;
            for (step, chunk) in order.chunks(tc.batch_size).enumerate() {
                let mut acc: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
                for &si in chunk {
                    let (value, grads) =
                        phase_gradients(phase, &spec, &params, tc, &samples[si], epoch)?;
                    if !value.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            phase: phase.name().to_string(),
                            epoch,
                            step,
                            value,
                        });
                    }
                    epoch_loss += value;
                    let w = 1.0 / chunk.len() as f64;
                    for (name, grad) in grads {
                        acc.entry(name)
                            .and_modify(|a| *a += &(&grad * w))
                            .or_insert_with(|| &grad * w);
                    }
                }
                clip_global_norm(&mut acc, tc.clip_norm);
                opt.step(&mut params, &acc);
            }

            let record = EpochRecord {
                epoch,
                phase: phase.name(),
                loss: epoch_loss / samples.len() as f64,
            };
            if let Some(path) = log_path {
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                writeln!(f, "{},{},{}", record.epoch, record.phase, record.loss)?;
            }
            log.push(record);
        }
        phases_run.push(phase.name());
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(&dir.join(format!("{}.ckpt", phase.name())), &params, &spec)?;
        }
        if phase == Phase::Stage1 && tc.contact_source == ContactMode::Predicted {
            fill_predicted_conditioning(&spec, &params, &mut samples)?;
        }
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&dir.join("final.ckpt"), &params, &spec)?;
    }
    Ok(TrainOutcome {
        params,
        log,
        phases: phases_run,
    })
}

/// Cuts every sequence into observation/future windows and precomputes
/// targets and conditioning. Scene sampling is seeded per window, so
/// preparation order cannot change the data.
pub fn prepare_samples(
    spec: &ModelSpec,
    dataset: &[Sequence],
    stride: usize,
) -> Result<Vec<PreparedSample>> {
    let cfg = &spec.config;
    let (t_obs, f_fut) = (cfg.observed_frames, cfg.future_frames);
    let mut out = Vec::new();
    for (seq_idx, seq) in dataset.iter().enumerate() {
        let subset = spec.subset_joints(seq.motion.skeleton());
        let vc = subset.len();
        for (start, window) in window_split(&seq.motion, t_obs, f_fut, stride)? {
            let m_obs = window.window(0, t_obs)?;
            let r_obs = m_obs.root_trajectory();
            let center = window_center(&m_obs);
            let scene_sampled = sample_scene_points(
                &seq.scene,
                center,
                cfg.sample_radius,
                cfg.sample_count,
                mix_seed(&[cfg.seed, seq_idx as u64, start as u64]),
            )?;
            let gt_dist = distance_tensor_subset(&window, &scene_sampled, &subset);
            let gt_contacts =
                contacts_from_distances(&gt_dist, &scene_sampled, cfg.contact_threshold)?;
            let t_total = cfg.total_frames();
            let gt_cond = contact_conditioning(Some(&gt_contacts), center, t_total, vc);
            let zero_cond = contact_conditioning(None, center, t_total, vc);

            let gt_root_full = window.root_trajectory().positions().to_owned().into_dyn();
            let gt_root_future = window
                .root_trajectory()
                .positions()
                .slice(ndarray::s![t_obs.., ..])
                .to_owned();
            let gt_poses_future = window
                .data()
                .slice(ndarray::s![t_obs.., .., ..])
                .to_owned()
                .into_dyn();

            out.push(PreparedSample {
                m_obs,
                r_obs,
                center,
                scene_sampled,
                gt_distances: gt_dist.values().clone().into_dyn(),
                gt_cond,
                zero_cond,
                pred_cond: None,
                gt_root_full,
                gt_root_future,
                gt_poses_future,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("dataset yields no training windows"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::checkpoint::load_checkpoint;
    use crate::types::Skeleton;
    use std::sync::Arc;

    fn tiny_config() -> ForecastConfig {
        ForecastConfig {
            observed_frames: 4,
            future_frames: 5,
            joint_count: 3,
            fps: 30.0,
            dct_coeffs: 3,
            contact_threshold: 0.32,
            sample_radius: 2.5,
            sample_count: 12,
            norm_factor: 0.2,
            hidden_dim: 4,
            seed: 7,
        }
    }

    fn tiny_skeleton() -> Arc<Skeleton> {
        Arc::new(
            Skeleton::new(
                vec!["root".into(), "mid".into(), "foot".into()],
                vec![(0, 1), (1, 2)],
                0,
                vec![2],
                vec![],
            )
            .unwrap(),
        )
    }

    fn tiny_motion(frames: usize, seed: u64) -> MotionSequence {
        let skel = tiny_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = ndarray::Array3::from_shape_fn((frames, 3, 3), |(t, j, c)| {
            0.04 * t as f64 + 0.3 * j as f64 + 0.2 * c as f64 + rng.random_range(-0.05..0.05)
        });
        MotionSequence::new(data, skel).unwrap()
    }

    fn tiny_dataset(sequences: usize, frames: usize) -> Vec<Sequence> {
        (0..sequences)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(900 + i as u64);
                let pts =
                    ndarray::Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.5..1.5));
                Sequence {
                    scene: SceneCloud::new(pts).unwrap(),
                    motion: tiny_motion(frames, 100 + i as u64),
                }
            })
            .collect()
    }

    fn tiny_tc() -> TrainingConfig {
        TrainingConfig {
            epochs: 3,
            batch_size: 4,
            window_stride: 4,
            contact_subset: ContactSubset::Feet,
            contact_source: ContactMode::GroundTruth,
            ..TrainingConfig::default()
        }
    }

    fn plan_names(tc: &TrainingConfig) -> Vec<&'static str> {
        phase_plan(tc).iter().map(|p| p.name()).collect()
    }

    #[test]
    fn phase_plans_cover_every_mode_and_conditioning_source() {
        let mut tc = tiny_tc();

        tc.contact_source = ContactMode::Predicted;
        tc.mode = TrainingMode::ThreeStage;
        assert_eq!(plan_names(&tc), ["stage1", "stage2", "stage3"]);
        tc.mode = TrainingMode::TwoStageFinetune;
        assert_eq!(plan_names(&tc), ["stage1", "stage2", "joint23"]);
        tc.mode = TrainingMode::TwoStageE2e;
        assert_eq!(plan_names(&tc), ["stage1", "joint23"]);

        tc.contact_source = ContactMode::GroundTruth;
        tc.mode = TrainingMode::ThreeStage;
        assert_eq!(plan_names(&tc), ["stage2", "stage3"]);
        tc.mode = TrainingMode::TwoStageE2e;
        assert_eq!(plan_names(&tc), ["joint23"]);

        tc.contact_source = ContactMode::None;
        tc.mode = TrainingMode::TwoStageFinetune;
        assert_eq!(plan_names(&tc), ["stage2", "joint23"]);

        for mode in [
            TrainingMode::ThreeStage,
            TrainingMode::TwoStageFinetune,
            TrainingMode::TwoStageE2e,
        ] {
            tc.mode = mode;
            let joint = phase_plan(&tc)
                .iter()
                .filter(|p| **p == Phase::Joint23)
                .count();
            let expected = if mode == TrainingMode::ThreeStage { 0 } else { 1 };
            assert_eq!(joint, expected, "joint phase count for {:?}", mode);
        }
    }

    #[test]
    fn mode_names_round_trip_and_reject_garbage() {
        for mode in [
            TrainingMode::ThreeStage,
            TrainingMode::TwoStageFinetune,
            TrainingMode::TwoStageE2e,
        ] {
            assert_eq!(TrainingMode::parse(mode.as_str()).unwrap(), mode);
        }
        assert!(TrainingMode::parse("four_stage").is_err());
    }

    #[test]
    fn phase_gradients_stay_inside_their_prefixes() {
        let tc = tiny_tc();
        let config = tiny_config();
        let spec = tc.model_spec(&config);
        let dataset = tiny_dataset(1, 13);
        let samples = prepare_samples(&spec, &dataset, tc.window_stride).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);

        for phase in [Phase::Stage1, Phase::Stage2, Phase::Stage3, Phase::Joint23] {
            let (loss, grads) =
                phase_gradients(phase, &spec, &params, &tc, &samples[0], tc.epochs).unwrap();
            assert!(loss.is_finite());
            assert!(!grads.is_empty(), "{:?} produced no gradients", phase);
            for name in grads.keys() {
                assert!(
                    phase.prefixes().iter().any(|p| name.starts_with(p)),
                    "{:?} leaked a gradient for {name}",
                    phase
                );
            }
        }

        let (_, joint) =
            phase_gradients(Phase::Joint23, &spec, &params, &tc, &samples[0], 1).unwrap();
        assert!(joint.keys().any(|n| n.starts_with("s2.")));
        assert!(joint.keys().any(|n| n.starts_with("s3.")));
    }

    #[test]
    fn pose_loss_alone_still_updates_the_trajectory_stage() {
        let mut tc = tiny_tc();
        tc.loss_weight_stage2 = 0.0;
        let config = tiny_config();
        let spec = tc.model_spec(&config);
        let dataset = tiny_dataset(1, 13);
        let samples = prepare_samples(&spec, &dataset, tc.window_stride).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);

        let (_, grads) =
            phase_gradients(Phase::Joint23, &spec, &params, &tc, &samples[0], 1).unwrap();
        let s2_norm: f64 = grads
            .iter()
            .filter(|(n, _)| n.starts_with("s2."))
            .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!(
            s2_norm > 1e-12,
            "pose loss should reach stage 2 through the predicted root"
        );
    }

    #[test]
    fn teacher_forcing_switches_from_ground_truth_to_predicted_root() {
        let mut tc = tiny_tc();
        tc.epochs = 10;
        let config = tiny_config();
        let spec = tc.model_spec(&config);
        let dataset = tiny_dataset(1, 13);
        let samples = prepare_samples(&spec, &dataset, tc.window_stride).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);
        let mut shifted = params.clone();
        for (name, tensor) in shifted.iter_mut() {
            if name.starts_with("s2.") {
                tensor.mapv_inplace(|v| v + 0.05);
            }
        }

        // First half of the phase: ground-truth root, stage 2 invisible.
        let (early_a, _) =
            phase_gradients(Phase::Stage3, &spec, &params, &tc, &samples[0], 1).unwrap();
        let (early_b, _) =
            phase_gradients(Phase::Stage3, &spec, &shifted, &tc, &samples[0], 1).unwrap();
        assert_eq!(early_a, early_b);

        // Second half: the predicted root feeds the decoder.
        let (late_a, _) =
            phase_gradients(Phase::Stage3, &spec, &params, &tc, &samples[0], 10).unwrap();
        let (late_b, _) =
            phase_gradients(Phase::Stage3, &spec, &shifted, &tc, &samples[0], 10).unwrap();
        assert!((late_a - late_b).abs() > 1e-9);

        // Disabled teacher forcing uses the predicted root throughout.
        tc.teacher_forcing = false;
        let (off_a, _) =
            phase_gradients(Phase::Stage3, &spec, &params, &tc, &samples[0], 1).unwrap();
        let (off_b, _) =
            phase_gradients(Phase::Stage3, &spec, &shifted, &tc, &samples[0], 1).unwrap();
        assert!((off_a - off_b).abs() > 1e-9);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let config = tiny_config();
        let mut tc = tiny_tc();
        tc.epochs = 5;
        let dataset = tiny_dataset(2, 13);

        let a = train(&config, &tc, &dataset, None, None, None).unwrap();
        let b = train(&config, &tc, &dataset, None, None, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_eq!(a.phases, ["stage2", "stage3"]);
        assert_eq!(a.log.len(), tc.epochs * 2);

        for phase in ["stage2", "stage3"] {
            let losses: Vec<f64> = a
                .log
                .iter()
                .filter(|r| r.phase == phase)
                .map(|r| r.loss)
                .collect();
            assert_eq!(losses.len(), tc.epochs);
            assert!(
                losses.last().unwrap() < losses.first().unwrap(),
                "{phase} loss did not drop: {losses:?}"
            );
        }
    }

    #[test]
    fn contact_stage_trains_first_and_stays_frozen() {
        let config = tiny_config();
        let mut tc = tiny_tc();
        tc.contact_source = ContactMode::Predicted;
        tc.epochs = 2;
        let dataset = tiny_dataset(1, 13);
        let dir = tempfile::tempdir().unwrap();

        let out = train(&config, &tc, &dataset, None, None, Some(dir.path())).unwrap();
        assert_eq!(out.phases, ["stage1", "stage2", "stage3"]);

        let spec = tc.model_spec(&config);
        let after_s1 = load_checkpoint(&dir.path().join("stage1.ckpt"), &spec).unwrap();
        let final_p = load_checkpoint(&dir.path().join("final.ckpt"), &spec).unwrap();
        for (name, tensor) in after_s1.iter() {
            if name.starts_with("s1.") {
                assert_eq!(tensor, final_p.get(name), "{name} moved after its phase");
            }
        }
        let s2_moved = after_s1
            .iter()
            .filter(|(n, _)| n.starts_with("s2."))
            .any(|(n, t)| t != final_p.get(n));
        assert!(s2_moved, "later phases should have updated stage 2");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let config = tiny_config();
        let tc = tiny_tc();
        let dataset = tiny_dataset(1, 13);
        let spec = tc.model_spec(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut poisoned = spec.init_params(&tiny_skeleton(), &mut rng);
        for (name, tensor) in poisoned.iter_mut() {
            if name.starts_with("s2.") {
                tensor.fill(f64::NAN);
            }
        }

        let err = train(&config, &tc, &dataset, Some(poisoned), None, None).unwrap_err();
        match &err {
            Error::NonFiniteLoss { phase, epoch, .. } => {
                assert_eq!(phase, "stage2");
                assert_eq!(*epoch, 1);
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn log_file_gets_one_line_per_epoch() {
        let config = tiny_config();
        let tc = tiny_tc();
        let dataset = tiny_dataset(1, 13);
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("train.log");

        let out = train(&config, &tc, &dataset, None, Some(&log_path), None).unwrap();
        let text = std::fs::read_to_string(&log_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), out.log.len());
        for (line, record) in lines.iter().zip(&out.log) {
            let mut parts = line.splitn(3, ',');
            assert_eq!(parts.next().unwrap(), record.epoch.to_string());
            assert_eq!(parts.next().unwrap(), record.phase);
            let loss: f64 = parts.next().unwrap().parse().unwrap();
            assert_eq!(loss, record.loss);
        }
    }

    #[test]
    fn kv_parsing_covers_every_training_key() {
        use crate::io::config_file::parse_kv;
        let text = "mode=two_stage_finetune\nepochs=7\nlr_stage1=0.01\nlr_stage23=0.02\n\
                    batch_size=2\nuse_end_goal=false\nuse_ttg=false\ncontact_subset=feet\n\
                    contact_source=none\nloss_weight_stage1=0.5\nloss_weight_stage2=2\n\
                    loss_weight_stage3=3\nteacher_forcing=false\nwindow_stride=9\n\
                    clip_norm=0.5\nspatial_first=true\n";
        let mut kv = parse_kv(text, "test").unwrap();
        let tc = TrainingConfig::from_kv(&mut kv, 11).unwrap();
        kv.finish().unwrap();
        assert_eq!(tc.mode, TrainingMode::TwoStageFinetune);
        assert_eq!(tc.epochs, 7);
        assert_eq!(tc.lr_stage1, 0.01);
        assert_eq!(tc.lr_stage23, 0.02);
        assert_eq!(tc.batch_size, 2);
        assert!(!tc.use_end_goal);
        assert!(!tc.use_ttg);
        assert_eq!(tc.contact_subset, ContactSubset::Feet);
        assert_eq!(tc.contact_source, ContactMode::None);
        assert_eq!(tc.seed, 11);
        assert_eq!(tc.loss_weight_stage1, 0.5);
        assert_eq!(tc.loss_weight_stage2, 2.0);
        assert_eq!(tc.loss_weight_stage3, 3.0);
        assert!(!tc.teacher_forcing);
        assert_eq!(tc.window_stride, 9);
        assert_eq!(tc.clip_norm, 0.5);
        assert!(tc.spatial_first);

        let mut empty = parse_kv("", "test").unwrap();
        let d = TrainingConfig::from_kv(&mut empty, 0).unwrap();
        assert_eq!(d, TrainingConfig::default());

        let mut bad = parse_kv("mode=one_stage\n", "test").unwrap();
        assert!(TrainingConfig::from_kv(&mut bad, 0).is_err());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let config = tiny_config();
        let tc = tiny_tc();
        assert!(matches!(
            train(&config, &tc, &[], None, None, None),
            Err(Error::EmptyInput(_))
        ));
        // Sequences shorter than one window yield no samples.
        let short = tiny_dataset(1, 6);
        assert!(matches!(
            train(&config, &tc, &short, None, None, None),
            Err(Error::EmptyInput(_))
        ));

        let mut bad = tiny_tc();
        bad.epochs = 0;
        assert!(bad.check().is_err());
        bad = tiny_tc();
        bad.clip_norm = 0.0;
        assert!(bad.check().is_err());
        bad = tiny_tc();
        bad.loss_weight_stage3 = -1.0;
        assert!(bad.check().is_err());
    }
}
