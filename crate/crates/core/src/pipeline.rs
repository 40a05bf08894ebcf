//! Whole-image inference: padding, the network, post-hoc masking, cropping.

use crate::banddata::{crop_to, pad_to_multiple};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::freqmask::{fuse, wwm_mask, MaskMap};
use crate::net::{forward, ModelState, Variant};

#[derive(Clone, Debug)]
pub struct Restoration {
    /// The variant's final output, at the input size.
    pub restored: FeatureMap,
    /// Network output before any fusion.
    pub raw: FeatureMap,
    /// The fusion mask for `wwm`, `dwt` and `map`.
    pub mask: Option<MaskMap>,
}

/// Checks that a checkpoint trained as `state.config.variant` can serve
/// `variant` (`wwm` runs on a `plain` checkpoint).
pub fn check_compatible(state: &ModelState, variant: Variant) -> Result<()> {
    let have = state.config.variant;
    if variant.checkpoint_variant() != have {
        return Err(Error::Argument(format!(
            "checkpoint variant {have} cannot run variant {variant} (needs a {} checkpoint)",
            variant.checkpoint_variant()
        )));
    }
    Ok(())
}

fn crop_mask(mask: &MaskMap, size: (usize, usize)) -> Result<MaskMap> {
    let m = crop_to(&mask.as_feature_map(), size)?;
    MaskMap::new(size.0, size.1, m.into_values())
}

/// Restores an image of any size. The input is padded by symmetric
/// reflection to a multiple of `2^depth` and the outputs are cropped back.
/// For `wwm` the plain output is fused with the input's wavelet mask.
pub fn restore(img: &FeatureMap, state: &ModelState, variant: Variant) -> Result<Restoration> {
    check_compatible(state, variant)?;
    let padded = pad_to_multiple(img, state.config.size_multiple())?;
    let size = padded.original_size;
    let out = forward(&padded.padded, state)?;
    let (restored, mask) = match variant {
        Variant::Wwm => {
            let m = wwm_mask(&padded.padded, state.config.depth)?;
            (fuse(&padded.padded, &out.raw, &m)?, Some(m))
        }
        _ => (out.restored, out.mask),
    };
    Ok(Restoration {
        restored: crop_to(&restored, size)?,
        raw: crop_to(&out.raw, size)?,
        mask: mask.map(|m| crop_mask(&m, size)).transpose()?,
    })
}
