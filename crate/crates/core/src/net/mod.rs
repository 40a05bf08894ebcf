//! The wavelet state-space restoration network.
//!
//! * [`params`]: configuration, named parameter collections and initialisation;
//! * [`blocks`]: graph builders for the scan, low-frequency, fusion and
//!   high-frequency blocks;
//! * [`model`]: full encoder/decoder forward pass and per-block entry points.

pub mod blocks;
pub mod model;
pub mod params;
mod gradcheck;

pub use model::{
    forward, forward_with, hfeb, lfssb, loss_and_gradients, scan_reference, selective_scan,
    shallow_extract, skff, training_loss,
    ForwardOptions, ForwardOutput,
};
pub use gradcheck::{gradient_check, GradProbe};
pub use params::{BlockParams, ModelState, NetConfig, ParamTensor, Variant};
