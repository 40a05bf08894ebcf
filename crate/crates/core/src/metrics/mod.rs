//! Image quality metrics and comparative reports.

mod external;
mod report;

pub use external::{run_external_metric, ExternalMetric};
pub use report::{evaluate, evaluate_with_external, Aggregate, EvalItem, MetricReport, MetricRow, RowError};

use crate::error::{arg_err, dim_err, Result};
use crate::feature::FeatureMap;
use crate::freqmask::to_grayscale;

/// PSNR reported when the images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Minimum step magnitude for a band edge.
pub const BEI_STEP: f64 = 1.0 / 255.0;
/// Flank windows must be flatter than this on average.
pub const BEI_FLAT: f64 = 1.0 / 510.0;
/// Flank window length on each side.
pub const BEI_FLANK: usize = 3;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if !a.same_dims(b) {
        return dim_err(format!("metric inputs differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at 100 dB.
pub fn psnr(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    check_pair(a, b)?;
    let sse: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.values().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an h×w plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&prod(&|i| a[i] * a[i]), h, w, k);
    let bb = filter_valid(&prod(&|i| b[i] * b[i]), h, w, k);
    let ab = filter_valid(&prod(&|i| a[i] * b[i]), h, w, k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / mu_a.len() as f64
}

/// Gaussian-windowed SSIM (11×11, σ = 1.5) averaged over valid window
/// positions and then over channels.
pub fn ssim(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w, c) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return arg_err(format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"));
    }
    let k = gaussian_window();
    let plane = |img: &FeatureMap, ch: usize| -> Vec<f64> {
        img.values().iter().skip(ch).step_by(c).map(|&v| v as f64).collect()
    };
    let sum: f64 = (0..c).map(|ch| ssim_plane(&plane(a, ch), &plane(b, ch), h, w, &k)).sum();
    Ok((sum / c as f64).clamp(-1.0, 1.0))
}

/// Marks band-edge pixels along one line of forward differences `g`.
fn mark_line(g: &[f64], mut mark: impl FnMut(usize)) {
    let n = g.len();
    let flank = BEI_FLANK;
    let mean_abs = |s: &[f64]| s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64;
    for p in flank..n.saturating_sub(flank) {
        if g[p].abs() >= BEI_STEP
            && mean_abs(&g[p - flank..p]) < BEI_FLAT
            && mean_abs(&g[p + 1..p + 1 + flank]) < BEI_FLAT
        {
            mark(p);
        }
    }
}

/// Fraction of luma pixels sitting on an isolated step: a forward
/// difference of at least 1/255 whose three neighbouring differences on
/// each side are nearly flat. Horizontal and vertical edges are unioned.
pub fn band_edge_index(img: &FeatureMap) -> f64 {
    let luma = to_grayscale(img).expect("luma of a 1- or 3-channel map");
    let (h, w, _) = luma.dims();
    let v: Vec<f64> = luma.values().iter().map(|&x| x as f64).collect();
    let mut edge = vec![false; h * w];
    for y in 0..h {
        let g: Vec<f64> = (0..w.saturating_sub(1)).map(|x| v[y * w + x + 1] - v[y * w + x]).collect();
        mark_line(&g, |x| edge[y * w + x] = true);
    }
    for x in 0..w {
        let g: Vec<f64> = (0..h.saturating_sub(1)).map(|y| v[(y + 1) * w + x] - v[y * w + x]).collect();
        mark_line(&g, |y| edge[y * w + x] = true);
    }
    edge.iter().filter(|&&e| e).count() as f64 / (h * w) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = FeatureMap::filled(8, 8, 3, 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = FeatureMap::filled(8, 8, 3, 0.7);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
        let c = FeatureMap::filled(8, 8, 3, 0.3);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-4);
    }

    #[test]
    fn ssim_constants() {
        let a = FeatureMap::zeros(16, 16, 3);
        let b = FeatureMap::filled(16, 16, 3, 1.0);
        let expected = SSIM_K1 * SSIM_K1 / (1.0 + SSIM_K1 * SSIM_K1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&FeatureMap::zeros(8, 8, 1), &FeatureMap::zeros(8, 8, 1)).unwrap_err().code(), "E_ARG");
    }

    #[test]
    fn bei_examples() {
        assert_eq!(band_edge_index(&FeatureMap::filled(16, 16, 3, 0.4)), 0.0);
        let ramp = FeatureMap::from_fn(8, 256, 3, |_, x, _| x as f32 / 255.0);
        assert_eq!(band_edge_index(&ramp), 0.0);
        let q = ramp.map(|v| (v * 3.0).round() / 3.0);
        assert!((band_edge_index(&q) - 3.0 / 256.0).abs() < 1e-12);
    }
}
