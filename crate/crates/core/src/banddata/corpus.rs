use std::f32::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::exec::{map_ordered, ExecMode};
use crate::feature::FeatureMap;

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

fn smooth_base(rng: &mut ChaCha8Rng, size: usize) -> FeatureMap {
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let gamma: f32 = rng.gen_range(0.7..1.5);
    let n = size as f32;
    let t_of: Box<dyn Fn(f32, f32) -> f32> = if rng.gen_bool(0.5) {
        let theta: f32 = rng.gen_range(0.0..2.0 * PI);
        let (dy, dx) = (theta.sin(), theta.cos());
        // Project the corners so t spans exactly [0, 1].
        let corners = [(0.0, 0.0), (0.0, n), (n, 0.0), (n, n)];
        let proj: Vec<f32> = corners.iter().map(|&(y, x)| y * dy + x * dx).collect();
        let lo = proj.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = proj.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        Box::new(move |y, x| (y * dy + x * dx - lo) / (hi - lo))
    } else {
        let cy: f32 = rng.gen_range(0.0..n);
        let cx: f32 = rng.gen_range(0.0..n);
        let r: f32 = rng.gen_range(0.5..1.2) * n;
        Box::new(move |y, x| (((y - cy).powi(2) + (x - cx).powi(2)).sqrt() / r).min(1.0))
    };
    FeatureMap::from_fn(size, size, 3, |y, x, c| {
        let t = t_of(y as f32 + 0.5, x as f32 + 0.5).clamp(0.0, 1.0).powf(gamma);
        c0[c] + (c1[c] - c0[c]) * t
    })
}

fn overlay_texture(rng: &mut ChaCha8Rng, img: &mut FeatureMap) {
    let size = img.height();
    let side = rng.gen_range(size / 8..=size / 3).max(4);
    let y0 = rng.gen_range(0..=size - side);
    let x0 = rng.gen_range(0..=size - side);
    let amp: f32 = rng.gen_range(0.08..0.2);
    let fy: f32 = rng.gen_range(0.6..2.0);
    let fx: f32 = rng.gen_range(0.6..2.0);
    let phase: f32 = rng.gen_range(0.0..2.0 * PI);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let noise: f32 = rng.gen_range(-0.5..0.5);
            let t = amp * (((y as f32) * fy).sin() * ((x as f32) * fx + phase).sin() + noise);
            for c in 0..3 {
                let v = img.get(y, x, c) + t;
                img.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
}

fn generate_one(seed: u64, index: usize, size: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut img = smooth_base(&mut rng, size);
    overlay_texture(&mut rng, &mut img);
    img
}

/// Generates `n` pristine images of `size`×`size`: a smooth linear or radial
/// gradient plus one textured square. Each image draws from its own RNG
/// stream, so generation order does not matter.
pub fn gen_gradient_corpus(n: usize, size: usize, seed: u64) -> Result<Vec<FeatureMap>> {
    if size < 32 || !size.is_power_of_two() {
        return arg_err(format!("corpus size must be a power of two >= 32, got {size}"));
    }
    let indices: Vec<usize> = (0..n).collect();
    Ok(map_ordered(&indices, ExecMode::default(), |&i| generate_one(seed, i, size)))
}
