//! Forecast quality metrics.
//!
//! Path error compares root positions; pose error compares body shape
//! after removing each sequence's own root, so a forecast that walks to
//! the wrong place with the right posture scores zero pose error. Both
//! are reported at fixed horizons and over the full prediction window.

use crate::error::{Error, Result};
use crate::types::{MotionSequence, RootTrajectory};

/// Mean Euclidean root distance over the first `frames` predicted
/// frames.
pub fn path_error(
    predicted: &RootTrajectory,
    reference: &RootTrajectory,
    frames: usize,
) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            context: "path_error",
            expected: format!("{} frames", reference.len()),
            got: format!("{}", predicted.len()),
        });
    }
    let f = frames.min(predicted.len());
    if f == 0 {
        return Err(Error::EmptyInput("path_error over zero frames"));
    }
    let mut total = 0.0;
    for t in 0..f {
        total += euclid(predicted.position(t), reference.position(t));
    }
    Ok(total / f as f64)
}

/// Mean Euclidean joint distance after root alignment, over the first
/// `frames` predicted frames and every joint (the root contributes
/// zero by construction).
pub fn pose_error(
    predicted: &MotionSequence,
    reference: &MotionSequence,
    frames: usize,
) -> Result<f64> {
    check_motion_pair(predicted, reference, "pose_error")?;
    let f = frames.min(predicted.frame_count());
    if f == 0 {
        return Err(Error::EmptyInput("pose_error over zero frames"));
    }
    let v = predicted.joint_count();
    let root = predicted.skeleton().root_index;
    let mut total = 0.0;
    for t in 0..f {
        let pr = predicted.joint(t, root);
        let rr = reference.joint(t, root);
        for j in 0..v {
            let p = predicted.joint(t, j);
            let r = reference.joint(t, j);
            let aligned_p = [p[0] - pr[0], p[1] - pr[1], p[2] - pr[2]];
            let aligned_r = [r[0] - rr[0], r[1] - rr[1], r[2] - rr[2]];
            total += euclid(aligned_p, aligned_r);
        }
    }
    Ok(total / (f * v) as f64)
}

/// Mean Euclidean joint distance per predicted frame, in global
/// coordinates, over every joint.
pub fn per_frame_mae(
    predicted: &MotionSequence,
    reference: &MotionSequence,
) -> Result<Vec<f64>> {
    check_motion_pair(predicted, reference, "per_frame_mae")?;
    let v = predicted.joint_count();
    let mut out = Vec::with_capacity(predicted.frame_count());
    for t in 0..predicted.frame_count() {
        let mut total = 0.0;
        for j in 0..v {
            total += euclid(predicted.joint(t, j), reference.joint(t, j));
        }
        out.push(total / v as f64);
    }
    Ok(out)
}

fn check_motion_pair(
    predicted: &MotionSequence,
    reference: &MotionSequence,
    context: &'static str,
) -> Result<()> {
    if predicted.frame_count() != reference.frame_count()
        || predicted.joint_count() != reference.joint_count()
    {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!(
                "{} x {}",
                reference.frame_count(),
                reference.joint_count()
            ),
            got: format!("{} x {}", predicted.frame_count(), predicted.joint_count()),
        });
    }
    Ok(())
}

fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// A metric evaluated at 0.5 s, 1 s, 2 s, and the full horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonMetrics {
    pub half_second: f64,
    pub one_second: f64,
    pub two_seconds: f64,
    pub full: f64,
}

/// Frame index count for a horizon in seconds, at least 1.
pub fn horizon_frames(fps: f64, seconds: f64) -> usize {
    ((fps * seconds).round() as usize).max(1)
}

/// Path and pose errors for one predicted future against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMetrics {
    pub path: HorizonMetrics,
    pub pose: HorizonMetrics,
    pub frame_mae: Vec<f64>,
}

/// Evaluates a predicted future motion against the reference future.
pub fn evaluate_forecast(
    predicted: &MotionSequence,
    reference: &MotionSequence,
    fps: f64,
) -> Result<ForecastMetrics> {
    let pred_root = predicted.root_trajectory();
    let ref_root = reference.root_trajectory();
    let f = predicted.frame_count();
    let at = |seconds: f64| horizon_frames(fps, seconds).min(f);
    let path = HorizonMetrics {
        half_second: path_error(&pred_root, &ref_root, at(0.5))?,
        one_second: path_error(&pred_root, &ref_root, at(1.0))?,
        two_seconds: path_error(&pred_root, &ref_root, at(2.0))?,
        full: path_error(&pred_root, &ref_root, f)?,
    };
    let pose = HorizonMetrics {
        half_second: pose_error(predicted, reference, at(0.5))?,
        one_second: pose_error(predicted, reference, at(1.0))?,
        two_seconds: pose_error(predicted, reference, at(2.0))?,
        full: pose_error(predicted, reference, f)?,
    };
    Ok(ForecastMetrics {
        path,
        pose,
        frame_mae: per_frame_mae(predicted, reference)?,
    })
}

/// Shifts every joint of every frame by a constant offset; useful for
/// constructing forecasts with known metric values.
pub fn shifted_motion(motion: &MotionSequence, offset: [f64; 3]) -> MotionSequence {
    let mut data = motion.data().clone();
    for mut row in data.rows_mut() {
        for c in 0..3 {
            row[c] += offset[c];
        }
    }
    MotionSequence::new(data, motion.skeleton().clone()).expect("shift keeps validity")
}
