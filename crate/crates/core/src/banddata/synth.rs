use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::feature::FeatureMap;

/// Uniform re-quantisation to `bits` per channel, optionally with seeded
/// uniform dither of ±half a step before rounding.
pub fn synth_band(pristine: &FeatureMap, bits: u32, dither_seed: Option<u64>) -> Result<FeatureMap> {
    if !(2..=8).contains(&bits) {
        return arg_err(format!("bits must be in 2..=8, got {bits}"));
    }
    let levels = ((1u32 << bits) - 1) as f32;
    let mut rng = dither_seed.map(ChaCha8Rng::seed_from_u64);
    let mut out = pristine.clone();
    for v in out.values_mut() {
        let mut x = *v * levels;
        if let Some(r) = rng.as_mut() {
            x += r.gen_range(-0.5f32..0.5);
        }
        // Adding +0.0 folds a rounded -0.0 into +0.0.
        *v = (x.round().clamp(0.0, levels) + 0.0) / levels;
    }
    Ok(out)
}

/// A padded image and the size to crop back to.
#[derive(Clone, Debug, PartialEq)]
pub struct Padded {
    pub padded: FeatureMap,
    pub original_size: (usize, usize),
}

impl Padded {
    pub fn crop(&self, img: &FeatureMap) -> Result<FeatureMap> {
        crop_to(img, self.original_size)
    }
}

/// Half-sample symmetric index: `..., n-1, n-1, n-2, ...` past the end.
fn mirror(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let k = i % period;
    if k < n {
        k
    } else {
        period - 1 - k
    }
}

/// Pads right and bottom by symmetric reflection up to the next multiple of `m`.
pub fn pad_to_multiple(img: &FeatureMap, m: usize) -> Result<Padded> {
    if m == 0 {
        return arg_err("padding multiple must be >= 1");
    }
    let (h, w, c) = img.dims();
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    let padded = if (ph, pw) == (h, w) {
        img.clone()
    } else {
        FeatureMap::from_fn(ph, pw, c, |y, x, k| img.get(mirror(y, h), mirror(x, w), k))
    };
    Ok(Padded {
        padded,
        original_size: (h, w),
    })
}

/// Top-left crop to `(height, width)`.
pub fn crop_to(img: &FeatureMap, size: (usize, usize)) -> Result<FeatureMap> {
    if size == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    img.crop(0, 0, size.0, size.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(width: usize) -> FeatureMap {
        FeatureMap::from_fn(4, width, 3, |_, x, _| x as f32 / (width - 1) as f32)
    }

    fn distinct(img: &FeatureMap) -> usize {
        let mut v: Vec<u32> = img.values().iter().map(|x| x.to_bits()).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    }

    #[test]
    fn two_bit_ramp_has_four_levels() {
        let q = synth_band(&ramp(256), 2, None).unwrap();
        assert_eq!(distinct(&q), 4);
    }

    #[test]
    fn three_bit_ramp_has_seven_transitions_per_row() {
        let q = synth_band(&ramp(256), 3, None).unwrap();
        for y in 0..4 {
            let steps = (1..256).filter(|&x| q.get(y, x, 0) != q.get(y, x - 1, 0)).count();
            assert_eq!(steps, 7);
        }
    }

    #[test]
    fn eight_bit_is_fixed_point_of_eight_bit_data() {
        let src = FeatureMap::from_fn(8, 8, 3, |y, x, c| ((y * 31 + x * 7 + c * 3) % 256) as f32 / 255.0);
        let q = synth_band(&src, 8, None).unwrap();
        assert_eq!(q, src);
    }

    #[test]
    fn bits_out_of_range() {
        let img = ramp(8);
        assert_eq!(synth_band(&img, 1, None).unwrap_err().code(), "E_ARG");
        assert_eq!(synth_band(&img, 9, None).unwrap_err().code(), "E_ARG");
    }

    #[test]
    fn dither_is_reproducible() {
        let img = ramp(64);
        let a = synth_band(&img, 3, Some(5)).unwrap();
        let b = synth_band(&img, 3, Some(5)).unwrap();
        let c = synth_band(&img, 3, Some(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(distinct(&a) <= 8);
    }

    #[test]
    fn padding_examples() {
        let img = FeatureMap::from_fn(100, 100, 3, |y, x, c| ((y + 2 * x + c) % 17) as f32 / 16.0);
        let p = pad_to_multiple(&img, 8).unwrap();
        assert_eq!(p.padded.dims(), (104, 104, 3));
        assert_eq!(p.crop(&p.padded).unwrap(), img);
        assert_eq!(p.padded.get(100, 3, 1), img.get(99, 3, 1));
        assert_eq!(p.padded.get(5, 103, 0), img.get(5, 96, 0));

        let even = FeatureMap::zeros(64, 32, 1);
        let q = pad_to_multiple(&even, 8).unwrap();
        assert_eq!(q.padded, even);
    }

    #[test]
    fn padding_wider_than_image() {
        let img = FeatureMap::from_fn(3, 3, 1, |y, x, _| (y * 3 + x) as f32);
        let p = pad_to_multiple(&img, 8).unwrap();
        assert_eq!(p.padded.dims(), (8, 8, 1));
        assert_eq!(p.crop(&p.padded).unwrap(), img);
    }
}
