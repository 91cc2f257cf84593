//! Forecasting configuration: horizon lengths, model widths, and the
//! geometric constants used by contact estimation.

use crate::error::{Error, Result};

/// All hyperparameters a forecast pipeline is built from.
///
/// Defaults follow the reference setting: observe 30 frames at 30 fps,
/// predict 60, 21 joints, 20 retained DCT coefficients, 0.32 m contact
/// threshold, 5000 scene points sampled within 2.5 m, and a 0.2
/// coordinate normalization factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    /// Observed (conditioning) frame count.
    pub observed_frames: usize,
    /// Future (predicted) frame count.
    pub future_frames: usize,
    /// Joint count per pose.
    pub joint_count: usize,
    /// Frames per second of the motion data.
    pub fps: f64,
    /// Retained DCT coefficients for trajectory coding.
    pub dct_coeffs: usize,
    /// Joint-to-scene distance below which a joint is in contact (meters).
    pub contact_threshold: f64,
    /// Radius of the scene window sampled around the last observed root (meters).
    pub sample_radius: f64,
    /// Number of scene points sampled inside the window.
    pub sample_count: usize,
    /// Coordinate normalization factor applied before model input.
    pub norm_factor: f64,
    /// Feature width of all latent codes and hidden layers.
    pub hidden_dim: usize,
    /// Master seed; every random choice in the pipeline derives from it.
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            observed_frames: 30,
            future_frames: 60,
            joint_count: 21,
            fps: 30.0,
            dct_coeffs: 20,
            contact_threshold: 0.32,
            sample_radius: 2.5,
            sample_count: 5000,
            norm_factor: 0.2,
            hidden_dim: 64,
            seed: 0,
        }
    }
}

impl ForecastConfig {
    /// Total horizon length (observed + future frames).
    pub fn total_frames(&self) -> usize {
        self.observed_frames + self.future_frames
    }

    /// Checks every invariant, returning the first violation.
    pub fn check(&self) -> Result<()> {
        if self.observed_frames < 1 {
            return Err(Error::InvalidConfig("observed_frames must be >= 1".into()));
        }
        if self.future_frames < 1 {
            return Err(Error::InvalidConfig("future_frames must be >= 1".into()));
        }
        if self.joint_count < 1 {
            return Err(Error::InvalidConfig("joint_count must be >= 1".into()));
        }
        if self.dct_coeffs < 1 || self.dct_coeffs > self.total_frames() {
            return Err(Error::InvalidConfig(format!(
                "dct_coeffs must be in 1..={}, got {}",
                self.total_frames(),
                self.dct_coeffs
            )));
        }
        // is_finite also rejects NaN, which plain comparisons let through
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.contact_threshold) {
            return Err(Error::InvalidConfig("contact_threshold must be > 0".into()));
        }
        if !positive(self.sample_radius) {
            return Err(Error::InvalidConfig("sample_radius must be > 0".into()));
        }
        if self.sample_count < 1 {
            return Err(Error::InvalidConfig("sample_count must be >= 1".into()));
        }
        if !positive(self.norm_factor) {
            return Err(Error::InvalidConfig("norm_factor must be > 0".into()));
        }
        if !positive(self.fps) {
            return Err(Error::InvalidConfig("fps must be > 0".into()));
        }
        if self.hidden_dim < 1 {
            return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Builds a config from `key=value` pairs, defaulting absent keys
    /// and leaving unrelated keys in place for other consumers.
    pub fn from_kv(kv: &mut crate::io::config_file::KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            observed_frames: kv.take_or("observed_frames", d.observed_frames)?,
            future_frames: kv.take_or("future_frames", d.future_frames)?,
            joint_count: kv.take_or("joint_count", d.joint_count)?,
            fps: kv.take_or("fps", d.fps)?,
            dct_coeffs: kv.take_or("dct_coeffs", d.dct_coeffs)?,
            contact_threshold: kv.take_or("contact_threshold", d.contact_threshold)?,
            sample_radius: kv.take_or("sample_radius", d.sample_radius)?,
            sample_count: kv.take_or("sample_count", d.sample_count)?,
            norm_factor: kv.take_or("norm_factor", d.norm_factor)?,
            hidden_dim: kv.take_or("hidden_dim", d.hidden_dim)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Canonical one-line text form, used for checkpoint hashing.
    pub fn canonical_string(&self) -> String {
        format!(
            "observed_frames={} future_frames={} joint_count={} fps={} dct_coeffs={} \
             contact_threshold={} sample_radius={} sample_count={} norm_factor={} hidden_dim={}",
            self.observed_frames,
            self.future_frames,
            self.joint_count,
            self.fps,
            self.dct_coeffs,
            self.contact_threshold,
            self.sample_radius,
            self.sample_count,
            self.norm_factor,
            self.hidden_dim
        )
    }
}
