//! Distributed-MIMO channel sounding laboratory.
//!
//! A synthetic multilink campaign generator built on the multilink OFDM
//! signal model, plus the post-processing chain: calibration, fading and
//! stationarity statistics, super-resolution Doppler estimation and
//! delay-Doppler Bartlett positioning with particle-filter tracking.

pub mod archive;
pub mod calib;
pub mod cli;
pub mod config;
pub mod doppler;
pub mod error;
pub mod geometry;
pub mod positioning;
pub mod scene;
pub mod stats;
pub mod tdma;

pub use config::SoundingConfig;
pub use error::{Error, Result};
