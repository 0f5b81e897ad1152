//! Dual-stream RGB-thermal multi-task network for frying-oil oxidation, a
//! synthetic dataset that plants a camera-fingerprint shortcut, and the
//! training and evaluation loop used to show the shortcut and its fix.

pub mod adversarial;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fusion;
pub mod heads_losses;
pub mod model;
pub mod nn;
pub mod rgb_mae_encoder;
pub mod seed;
pub mod synthdata;
pub mod thermal_backbone;
pub mod train_eval;

pub use error::{FryError, Result};
