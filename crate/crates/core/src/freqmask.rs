//! Weighted wavelet maps and the convex fusion of banded input with restored output.
//!
//! Three ways to build the mask `M_w`:
//! * [`wwm_mask`]: detail magnitude of the input's final Haar level, computed post hoc;
//! * [`dwt_mask`]: mean over encoder levels of upsampled detail-band magnitudes;
//! * [`map_mask`]: the same aggregation over the enhanced high-frequency features.
//!
//! The slice kernels at the bottom are shared with the autodiff graph so the
//! in-network masks are numerically identical to the ones computed here.

use crate::error::{arg_err, dim_err, Error, Result};
use crate::feature::FeatureMap;
use crate::real::Real;
use crate::wavelet::{decompose, WaveletLevel};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Non-negative H×W magnitude field, kept in f64 so rescaling is exact to
/// well below mask precision.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl MagnitudeMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return dim_err(format!(
                "{} magnitudes do not fit {height}x{width}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("magnitude map".into()));
        }
        if values.iter().any(|&v| v < 0.0) {
            return arg_err("magnitude map must be non-negative");
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.values.iter().map(|v| v * k).collect(),
        )
    }
}

/// Per-pixel fusion weight in `[0, 1]` at full image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl MaskMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return dim_err(format!("{} weights do not fit {height}x{width}", values.len()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return arg_err("mask values must lie in [0, 1]");
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("constant mask")
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Share of pixels with weight strictly above one half.
    pub fn fraction_above_half(&self) -> f64 {
        self.values.iter().filter(|&&v| v > 0.5).count() as f64 / self.values.len() as f64
    }

    pub fn mirror_horizontal(&self) -> Self {
        let (h, w) = self.dims();
        let mut values = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                values[y * w + x] = self.values[y * w + (w - 1 - x)];
            }
        }
        Self {
            height: h,
            width: w,
            values,
        }
    }

    /// 8-bit visualisation, `round(255 * m)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn as_feature_map(&self) -> FeatureMap {
        FeatureMap::from_vec(self.height, self.width, 1, self.values.clone())
            .expect("mask is finite")
    }
}

/// RGB to single-channel BT.601 luma.
pub fn to_grayscale(img: &FeatureMap) -> Result<FeatureMap> {
    if img.channels() != 3 {
        return arg_err(format!(
            "grayscale conversion needs 3 channels, got {}",
            img.channels()
        ));
    }
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let values = img
        .values()
        .chunks_exact(3)
        .map(|p| wr * p[0] + wg * p[1] + wb * p[2])
        .collect();
    FeatureMap::from_vec(img.height(), img.width(), 1, values)
}

/// Luma for RGB input, identity for single-channel input.
pub(crate) fn luma_or_identity(img: &FeatureMap) -> Result<FeatureMap> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => to_grayscale(img),
        c => arg_err(format!("expected 1 or 3 channels, got {c}")),
    }
}

/// `(S - min S) / (max S - min S)`, all zeros when `S` is constant.
pub fn minmax_normalize(s: &MagnitudeMap) -> MaskMap {
    let (wide, _) = minmax_kernel(s.values());
    let values = wide.into_iter().map(|v| v as f32).collect();
    MaskMap {
        height: s.height,
        width: s.width,
        values,
    }
}

/// Post-hoc mask from the final level of a `depth`-level decomposition of the image's luma.
pub fn wwm_mask(img: &FeatureMap, depth: usize) -> Result<MaskMap> {
    let gray = luma_or_identity(img)?;
    let pyramid = decompose(&gray, depth)?;
    let last = pyramid.levels.last().expect("depth >= 1");
    let (h, w, _) = last.dims();
    let s = abs_sum_channel_mean(&[&widen(&last.lh), &widen(&last.hl), &widen(&last.hh)], h, w, 1);
    let up = upsample_bilinear(&s, h, w, img.height(), img.width());
    MaskMap::new(img.height(), img.width(), normalized(&up))
}

/// Mask from the encoder's detail triples, one entry per level.
pub fn dwt_mask(levels: &[WaveletLevel]) -> Result<MaskMap> {
    if levels.is_empty() {
        return arg_err("dwt_mask needs at least one level");
    }
    let (fh, fw) = full_resolution(levels.iter().map(|l| (l.ll.dims(), l.level_index)))?;
    let mut maps = Vec::with_capacity(levels.len());
    for l in levels {
        let (h, w, c) = l.dims();
        for b in [&l.lh, &l.hl, &l.hh] {
            if b.dims() != (h, w, c) {
                return dim_err("detail bands of one level differ in shape");
            }
        }
        let s = abs_sum_channel_mean(&[&widen(&l.lh), &widen(&l.hl), &widen(&l.hh)], h, w, c);
        maps.push(upsample_bilinear(&s, h, w, fh, fw));
    }
    MaskMap::new(fh, fw, normalized(&mean_of(&maps)))
}

/// Mask from enhanced high-frequency features; `enhanced[i]` sits at level `i + 1`.
pub fn map_mask(enhanced: &[FeatureMap]) -> Result<MaskMap> {
    if enhanced.is_empty() {
        return arg_err("map_mask needs at least one level");
    }
    let (fh, fw) = full_resolution(
        enhanced
            .iter()
            .enumerate()
            .map(|(i, f)| (f.dims(), i + 1)),
    )?;
    let maps: Vec<Vec<f64>> = enhanced
        .iter()
        .map(|f| {
            let (h, w, c) = f.dims();
            let s = abs_sum_channel_mean(&[&widen(f)], h, w, c);
            upsample_bilinear(&s, h, w, fh, fw)
        })
        .collect();
    MaskMap::new(fh, fw, normalized(&mean_of(&maps)))
}

// The standalone masks work in f64 and round once, so they sit within half
// an f32 ulp of an exact evaluation.
fn widen(f: &FeatureMap) -> Vec<f64> {
    f.values().iter().map(|&v| f64::from(v)).collect()
}

fn normalized(s: &[f64]) -> Vec<f32> {
    minmax_kernel(s).0.into_iter().map(|v| v as f32).collect()
}

fn full_resolution(
    mut levels: impl Iterator<Item = ((usize, usize, usize), usize)>,
) -> Result<(usize, usize)> {
    let ((h, w, _), idx) = levels.next().expect("non-empty");
    if idx == 0 {
        return arg_err("level indices start at 1");
    }
    let full = (h << idx, w << idx);
    for ((h, w, _), idx) in levels {
        if (h << idx, w << idx) != full {
            return dim_err(format!(
                "level {idx} at {h}x{w} is inconsistent with full resolution {full:?}"
            ));
        }
    }
    Ok(full)
}

#[inline]
pub fn fuse_value(m: f32, banded: f32, restored: f32) -> f32 {
    if banded == restored {
        return banded;
    }
    m * banded + (1.0 - m) * restored
}

/// `m ⊙ banded + (1 - m) ⊙ restored` per channel, clamped to `[0, 1]`.
pub fn fuse(banded: &FeatureMap, restored: &FeatureMap, m: &MaskMap) -> Result<FeatureMap> {
    banded.check_same_dims(restored, "fuse banded/restored")?;
    if m.dims() != (banded.height(), banded.width()) {
        return dim_err(format!(
            "mask {:?} does not match image {}x{}",
            m.dims(),
            banded.height(),
            banded.width()
        ));
    }
    let c = banded.channels();
    let values = fuse_kernel(banded.values(), restored.values(), m.values(), c);
    FeatureMap::from_vec(banded.height(), banded.width(), c, values)
}

// ---- slice kernels shared with the autodiff graph -------------------------

pub(crate) fn fuse_kernel<F: Real>(banded: &[F], restored: &[F], m: &[F], c: usize) -> Vec<F> {
    let one = F::one();
    banded
        .iter()
        .zip(restored)
        .enumerate()
        .map(|(i, (&b, &r))| {
            if b == r {
                // Exact for any weight; the blend below can be off by an ulp.
                return b.max(F::zero()).min(one);
            }
            let w = m[i / c];
            (w * b + (one - w) * r).max(F::zero()).min(one)
        })
        .collect()
}

/// Per pixel: mean over channels of the summed absolute values of `bands`.
pub(crate) fn abs_sum_channel_mean<F: Real>(bands: &[&[F]], h: usize, w: usize, c: usize) -> Vec<F> {
    let inv = F::one() / F::lit(c as f64);
    (0..h * w)
        .map(|p| {
            let mut acc = F::zero();
            for k in 0..c {
                let mut t = F::zero();
                for b in bands {
                    t += b[p * c + k].abs();
                }
                acc += t;
            }
            acc * inv
        })
        .collect()
}

/// Sample positions for half-pixel bilinear resampling along one axis:
/// `(lower index, upper index, upper weight)` per output coordinate.
pub(crate) fn bilinear_taps<F: Real>(n_in: usize, n_out: usize) -> Vec<(usize, usize, F)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, F::lit(src - i0 as f64))
        })
        .collect()
}

/// Single-channel bilinear resize without corner alignment.
pub(crate) fn upsample_bilinear<F: Real>(
    src: &[F],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<F> {
    let ty = bilinear_taps::<F>(h, oh);
    let tx = bilinear_taps::<F>(w, ow);
    let one = F::one();
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            let top = src[y0 * w + x0] * (one - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (one - fx) + src[y1 * w + x1] * fx;
            out.push(top * (one - fy) + bot * fy);
        }
    }
    out
}

pub(crate) fn mean_of<F: Real>(maps: &[Vec<F>]) -> Vec<F> {
    let inv = F::one() / F::lit(maps.len() as f64);
    (0..maps[0].len())
        .map(|i| {
            let mut acc = F::zero();
            for m in maps {
                acc += m[i];
            }
            acc * inv
        })
        .collect()
}

/// Min-max normalisation. Also returns `(argmin, argmax)` (first occurrence)
/// when the input is not constant.
pub(crate) fn minmax_kernel<F: Real>(s: &[F]) -> (Vec<F>, Option<(usize, usize)>) {
    let (mut lo, mut hi) = (0usize, 0usize);
    for (i, &v) in s.iter().enumerate() {
        if v < s[lo] {
            lo = i;
        }
        if v > s[hi] {
            hi = i;
        }
    }
    let (min, max) = (s[lo], s[hi]);
    if !(max > min) {
        return (vec![F::zero(); s.len()], None);
    }
    let range = max - min;
    let out = s
        .iter()
        .map(|&v| ((v - min) / range).max(F::zero()).min(F::one()))
        .collect();
    (out, Some((lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_weights() {
        let px = |r, g, b| FeatureMap::from_vec(1, 1, 3, vec![r, g, b]).unwrap();
        assert!((to_grayscale(&px(1.0, 1.0, 1.0)).unwrap().values()[0] - 1.0).abs() < 1e-6);
        assert_eq!(to_grayscale(&px(1.0, 0.0, 0.0)).unwrap().values()[0], 0.299);
        assert!((to_grayscale(&px(0.5, 0.5, 0.5)).unwrap().values()[0] - 0.5).abs() < 1e-6);
        assert_eq!(
            to_grayscale(&FeatureMap::zeros(2, 2, 4)).unwrap_err().code(),
            "E_ARG"
        );
    }

    #[test]
    fn minmax_examples() {
        let s = MagnitudeMap::new(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let m = minmax_normalize(&s);
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in m.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-7);
        }
        let flat = MagnitudeMap::new(2, 2, vec![4.0; 4]).unwrap();
        assert!(minmax_normalize(&flat).values().iter().all(|&v| v == 0.0));
        let pair = MagnitudeMap::new(1, 2, vec![0.0, 10.0]).unwrap();
        assert_eq!(minmax_normalize(&pair).values(), &[0.0, 1.0]);
    }

    #[test]
    fn magnitude_map_rejects_bad_input() {
        assert!(MagnitudeMap::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(MagnitudeMap::new(1, 2, vec![0.0, -1.0]).is_err());
    }

    #[test]
    fn fuse_limits() {
        let b = FeatureMap::filled(4, 4, 3, 0.2);
        let r = FeatureMap::filled(4, 4, 3, 0.6);
        assert_eq!(fuse(&b, &r, &MaskMap::filled(4, 4, 1.0)).unwrap(), b);
        assert_eq!(fuse(&b, &r, &MaskMap::filled(4, 4, 0.0)).unwrap(), r);
        let mid = fuse(&b, &r, &MaskMap::filled(4, 4, 0.5)).unwrap();
        assert!(mid.values().iter().all(|v| (v - 0.4).abs() < 1e-7));
    }

    #[test]
    fn fuse_shape_mismatch() {
        let b = FeatureMap::zeros(4, 4, 3);
        let r = FeatureMap::zeros(4, 2, 3);
        assert_eq!(
            fuse(&b, &r, &MaskMap::filled(4, 4, 0.0)).unwrap_err().code(),
            "E_DIM"
        );
        assert_eq!(
            fuse(&b, &b, &MaskMap::filled(2, 4, 0.0)).unwrap_err().code(),
            "E_DIM"
        );
    }

    #[test]
    fn wwm_constant_is_zero() {
        let m = wwm_mask(&FeatureMap::filled(32, 32, 3, 0.5), 3).unwrap();
        assert_eq!(m.dims(), (32, 32));
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_level_lists_rejected() {
        assert_eq!(dwt_mask(&[]).unwrap_err().code(), "E_ARG");
        assert_eq!(map_mask(&[]).unwrap_err().code(), "E_ARG");
    }

    #[test]
    fn zero_features_give_zero_masks() {
        let z = FeatureMap::zeros(8, 8, 4);
        let lvl = WaveletLevel {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z.clone(),
            level_index: 1,
        };
        assert!(dwt_mask(&[lvl]).unwrap().values().iter().all(|&v| v == 0.0));
        let m = map_mask(&[z.clone(), FeatureMap::zeros(4, 4, 4)]).unwrap();
        assert_eq!(m.dims(), (16, 16));
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_constant_is_constant() {
        let up = upsample_bilinear(&[0.25f32; 4], 2, 2, 8, 8);
        assert!(up.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn mask_bytes() {
        let m = MaskMap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(m.to_bytes(), vec![0, 128, 255]);
    }
}
