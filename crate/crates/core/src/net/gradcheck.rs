//! Finite-difference check of the training-loss gradient.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::feature::FeatureMap;
use crate::net::model::{loss_and_gradients, training_loss};
use crate::net::params::ModelState;

/// One probed scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradProbe {
    pub name: String,
    pub index: usize,
    /// Backpropagated gradient from the f32 training path.
    pub analytic: f64,
    /// Central difference of the loss evaluated in f64.
    pub numeric: f64,
}

impl GradProbe {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares analytic and central-difference gradients of the L1 training
/// loss on `samples` scalar parameters drawn with `seed`.
///
/// The analytic side is the production f32 backward pass. The numeric side
/// re-evaluates the same loss in f64 at `θ ± step`, so the comparison is not
/// swamped by single-precision rounding of the loss itself.
pub fn gradient_check(
    state: &ModelState,
    input: &FeatureMap,
    target: &FeatureMap,
    samples: usize,
    seed: u64,
    step: f64,
) -> Result<Vec<GradProbe>> {
    let (_, grads) = loss_and_gradients::<f32>(state, input, target)?;
    let names: Vec<&String> = state.params.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(String, usize)> = Vec::with_capacity(samples);
    while picked.len() < samples {
        let name = (*names.choose(&mut rng).expect("parameters")).clone();
        let index = rng.gen_range(0..state.params[&name].numel());
        if !picked.contains(&(name.clone(), index)) {
            picked.push((name, index));
        }
    }
    picked
        .into_iter()
        .map(|(name, index)| {
            let base = state.params[&name].data[index] as f64;
            let eval = |v: f64| -> Result<f64> {
                let mut s = state.clone();
                s.param_mut(&name).expect("sampled parameter").data[index] = v as f32;
                training_loss::<f64>(&s, input, target)
            };
            // Round the probe points to f32 so both evaluations see exactly
            // the perturbation they claim.
            let hi = (base + step) as f32 as f64;
            let lo = (base - step) as f32 as f64;
            let numeric = (eval(hi)? - eval(lo)?) / (hi - lo);
            Ok(GradProbe {
                analytic: grads[&name][index] as f64,
                numeric,
                name,
                index,
            })
        })
        .collect()
}
