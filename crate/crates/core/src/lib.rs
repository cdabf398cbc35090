//! Simulation and analysis toolkit for frequency-bin biphoton states produced
//! by a bidirectionally pumped type-II down-conversion source.
//!
//! The crate is organised along the processing chain:
//!
//! * [`spectral`]: frequency grid, pump envelope, phase matching, baseline amplitude
//! * [`synthesis`]: two-pass interference, delays from stage geometry, time-domain transform
//! * [`analysis`]: Schmidt decomposition, marginals, bin detection
//! * [`hom`]: two-photon interference versus delay
//! * [`detection`]: Monte-Carlo pair events, detectors, time-of-flight spectrometer
//! * [`network`]: two-node distribution with imperfect clock synchronization
//! * [`config`] and [`pipeline`]: key=value configuration, presets and runnable pipelines

// `!(x > 0.0)` style guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod detection;
pub mod error;
pub mod hom;
pub mod network;
pub mod pipeline;
pub mod spectral;
pub mod synthesis;

pub use error::{Error, Result};
