use deband_core::net::gradient_check;
use deband_core::{FeatureMap, ModelState, NetConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn jittered(variant: Variant, seed: u64) -> ModelState {
    let mut m = ModelState::init(NetConfig { variant, ..NetConfig::default() }, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    // Move zero-initialised layers off zero so every path carries gradient.
    for p in m.params.values_mut() {
        for v in p.data.iter_mut() {
            *v += rng.gen_range(-0.05f32..0.05);
        }
    }
    m
}

fn random_image(seed: u64, n: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::from_fn(n, n, 3, |_, _, _| rng.gen_range(0.0f32..1.0))
}

fn check(variant: Variant) {
    let m = jittered(variant, 21);
    let x = random_image(1, 32);
    let y = random_image(2, 32);
    let probes = gradient_check(&m, &x, &y, 10, 99, 1e-5).unwrap();
    for p in &probes {
        let rel = p.relative_error(1e-6);
        println!("{variant} {}[{}]: analytic {:.6e} numeric {:.6e} rel {rel:.2e}", p.name, p.index, p.analytic, p.numeric);
    }
    for p in &probes {
        assert!(p.relative_error(1e-6) < 2e-3, "{}[{}] {:?}", p.name, p.index, p);
    }
}

#[test]
fn plain_training_loss_gradient() {
    check(Variant::Plain);
}

#[test]
fn map_training_loss_gradient() {
    check(Variant::Map);
}

#[test]
fn dwt_training_loss_gradient() {
    check(Variant::Dwt);
}
