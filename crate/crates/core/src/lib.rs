//! Wavelet state-space debanding toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`wavelet`]: orthonormal Haar transform and pyramids;
//! * [`freqmask`]: weighted wavelet maps and input/output fusion;
//! * [`graph`]: reverse-mode differentiation used by the network and trainer;
//! * [`net`]: the restoration network and its blocks;
//! * [`banddata`]: synthetic banding, patch datasets and image I/O;
//! * [`trainer`]: loss, optimiser loop and checkpoints;
//! * [`metrics`]: PSNR, SSIM, band-edge index and reports.
//!
//! Work that fans out over independent images or batch items goes through
//! [`exec`], which uses rayon when the `parallel` feature is on (the default).

pub mod banddata;
pub mod checkpoint;
pub mod error;
pub mod exec;
pub mod feature;
pub mod freqmask;
pub mod graph;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod trainer;
pub mod real;
pub mod wavelet;

pub use error::{Error, Result};
pub use feature::FeatureMap;
pub use freqmask::{MagnitudeMap, MaskMap};
pub use net::{ModelState, NetConfig, Variant};
pub use real::Real;
