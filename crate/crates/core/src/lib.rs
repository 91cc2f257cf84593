//! Staged, contact-aware forecasting of global human motion in 3D scenes.
//!
//! The pipeline answers "where will this person be, and in what pose,
//! over the next two seconds" given an observed motion window and a
//! scene point cloud. It runs in three stages: per-joint contact
//! estimation against the scene, root trajectory forecasting conditioned
//! on those contacts, and autoregressive decoding of full-body global
//! poses conditioned on contacts, trajectory, and the endpoint.

pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod ablate;
pub mod stages;
pub mod train;
pub mod transforms;
pub mod types;

pub use config::ForecastConfig;
pub use error::{Error, Result};
