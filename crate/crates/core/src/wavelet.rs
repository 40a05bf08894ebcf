//! Orthonormal 2D Haar transform and multi-level pyramids.
//!
//! One analysis step maps each 2×2 block `[[a, b], [c, d]]` to
//!
//! ```text
//! ll = (a + b + c + d) / 2    lh = (a - b + c - d) / 2
//! hl = (a + b - c - d) / 2    hh = (a - b - c + d) / 2
//! ```
//!
//! which is the separable `[1, 1]/√2`, `[1, -1]/√2` filter pair run along rows
//! and then columns. `lh` is the row-high/column-low band (horizontal detail),
//! `hl` is row-low/column-high (vertical detail), `hh` the diagonal band.
//! The transform is its own adjoint up to the block permutation, so synthesis
//! is exact.

use crate::error::{arg_err, dim_err, Result};
use crate::feature::FeatureMap;
use crate::real::Real;

/// The four subbands produced by one analysis step.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletLevel {
    pub ll: FeatureMap,
    pub lh: FeatureMap,
    pub hl: FeatureMap,
    pub hh: FeatureMap,
    /// 1-based depth of this level in its pyramid.
    pub level_index: usize,
}

impl WaveletLevel {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.ll.dims()
    }

    fn check(&self) -> Result<()> {
        let d = self.ll.dims();
        for (name, band) in [("lh", &self.lh), ("hl", &self.hl), ("hh", &self.hh)] {
            if band.dims() != d {
                return dim_err(format!(
                    "subband {name} is {:?}, ll is {:?}",
                    band.dims(),
                    d
                ));
            }
        }
        Ok(())
    }

    /// Sum of squares over all four subbands.
    pub fn energy(&self) -> f64 {
        self.ll.sum_squares() + self.detail_energy()
    }

    pub fn detail_energy(&self) -> f64 {
        self.lh.sum_squares() + self.hl.sum_squares() + self.hh.sum_squares()
    }
}

/// An L-level decomposition; `levels[0]` is the finest level.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub levels: Vec<WaveletLevel>,
}

impl WaveletPyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Single-level Haar analysis on a channel-last buffer.
///
/// Returns `[ll, lh, hl, hh]`, each `(h/2) × (w/2) × c`. Dimensions must be even.
pub fn haar_analysis<F: Real>(src: &[F], h: usize, w: usize, c: usize) -> [Vec<F>; 4] {
    debug_assert_eq!(src.len(), h * w * c);
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let n = oh * ow * c;
    let half = F::lit(0.5);
    let mut ll = vec![F::zero(); n];
    let mut lh = vec![F::zero(); n];
    let mut hl = vec![F::zero(); n];
    let mut hh = vec![F::zero(); n];
    for y in 0..oh {
        let r0 = 2 * y * w;
        let r1 = (2 * y + 1) * w;
        for x in 0..ow {
            let o = (y * ow + x) * c;
            let ia = (r0 + 2 * x) * c;
            let ib = ia + c;
            let ic = (r1 + 2 * x) * c;
            let id = ic + c;
            for k in 0..c {
                let (a, b, cc, d) = (src[ia + k], src[ib + k], src[ic + k], src[id + k]);
                ll[o + k] = (a + b + cc + d) * half;
                lh[o + k] = (a - b + cc - d) * half;
                hl[o + k] = (a + b - cc - d) * half;
                hh[o + k] = (a - b - cc + d) * half;
            }
        }
    }
    [ll, lh, hl, hh]
}

/// Inverse of [`haar_analysis`]; bands are `(h × w × c)` and the output is `(2h × 2w × c)`.
pub fn haar_synthesis<F: Real>(
    ll: &[F],
    lh: &[F],
    hl: &[F],
    hh: &[F],
    h: usize,
    w: usize,
    c: usize,
) -> Vec<F> {
    let ow = 2 * w;
    let half = F::lit(0.5);
    let mut out = vec![F::zero(); 4 * h * w * c];
    for y in 0..h {
        let r0 = 2 * y * ow;
        let r1 = (2 * y + 1) * ow;
        for x in 0..w {
            let i = (y * w + x) * c;
            let ia = (r0 + 2 * x) * c;
            let ib = ia + c;
            let ic = (r1 + 2 * x) * c;
            let id = ic + c;
            for k in 0..c {
                let (s, p, q, r) = (ll[i + k], lh[i + k], hl[i + k], hh[i + k]);
                out[ia + k] = (s + p + q + r) * half;
                out[ib + k] = (s - p + q - r) * half;
                out[ic + k] = (s + p - q - r) * half;
                out[id + k] = (s - p - q + r) * half;
            }
        }
    }
    out
}

fn wrap(h: usize, w: usize, c: usize, v: Vec<f32>) -> FeatureMap {
    // Haar of finite data is finite, so the checked constructor cannot fail.
    FeatureMap::from_vec(h, w, c, v).expect("haar output shape")
}

/// One analysis step. Height and width must both be even.
pub fn dwt2(x: &FeatureMap) -> Result<WaveletLevel> {
    let (h, w, c) = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return dim_err(format!("dwt2 needs even dimensions, got {h}x{w}"));
    }
    let [ll, lh, hl, hh] = haar_analysis(x.values(), h, w, c);
    let (oh, ow) = (h / 2, w / 2);
    Ok(WaveletLevel {
        ll: wrap(oh, ow, c, ll),
        lh: wrap(oh, ow, c, lh),
        hl: wrap(oh, ow, c, hl),
        hh: wrap(oh, ow, c, hh),
        level_index: 1,
    })
}

/// Exact synthesis inverse of [`dwt2`].
pub fn idwt2(level: &WaveletLevel) -> Result<FeatureMap> {
    level.check()?;
    let (h, w, c) = level.dims();
    let out = haar_synthesis(
        level.ll.values(),
        level.lh.values(),
        level.hl.values(),
        level.hh.values(),
        h,
        w,
        c,
    );
    Ok(wrap(2 * h, 2 * w, c, out))
}

/// Recursive decomposition of the low band, `depth` levels deep.
pub fn decompose(x: &FeatureMap, depth: usize) -> Result<WaveletPyramid> {
    if depth == 0 {
        return arg_err("pyramid depth must be at least 1");
    }
    let m = 1usize << depth;
    if x.height() % m != 0 || x.width() % m != 0 {
        return dim_err(format!(
            "{}x{} is not divisible by 2^{depth} = {m}",
            x.height(),
            x.width()
        ));
    }
    let mut levels: Vec<WaveletLevel> = Vec::with_capacity(depth);
    for i in 1..=depth {
        let src = levels.last().map(|l| &l.ll).unwrap_or(x);
        let mut level = dwt2(src)?;
        level.level_index = i;
        levels.push(level);
    }
    Ok(WaveletPyramid { levels })
}

/// Rebuilds the full-resolution map, deepest level first.
///
/// Only the deepest level's `ll` band is used; shallower `ll` bands are
/// regenerated from the coarser levels.
pub fn reconstruct(p: &WaveletPyramid) -> Result<FeatureMap> {
    let Some(deepest) = p.levels.last() else {
        return arg_err("cannot reconstruct an empty pyramid");
    };
    let mut current = deepest.ll.clone();
    for level in p.levels.iter().rev() {
        let step = WaveletLevel {
            ll: current,
            lh: level.lh.clone(),
            hl: level.hl.clone(),
            hh: level.hh.clone(),
            level_index: level.level_index,
        };
        current = idwt2(&step)?;
    }
    Ok(current)
}
