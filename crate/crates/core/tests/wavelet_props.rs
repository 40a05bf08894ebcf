use deband_core::wavelet::{decompose, dwt2, haar_analysis, haar_synthesis, idwt2, reconstruct};
use deband_core::FeatureMap;
use proptest::prelude::*;

/// Direct 2×2 block formulas, one output pixel at a time.
fn naive_haar(x: &[f64], h: usize, w: usize, c: usize) -> [Vec<f64>; 4] {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = [vec![0.0; oh * ow * c], vec![0.0; oh * ow * c], vec![0.0; oh * ow * c], vec![0.0; oh * ow * c]];
    for i in 0..oh {
        for j in 0..ow {
            for k in 0..c {
                let at = |y: usize, x_: usize| x[(y * w + x_) * c + k];
                let a = at(2 * i, 2 * j);
                let b = at(2 * i, 2 * j + 1);
                let cc = at(2 * i + 1, 2 * j);
                let d = at(2 * i + 1, 2 * j + 1);
                let o = (i * ow + j) * c + k;
                out[0][o] = 0.5 * (a + b + cc + d);
                out[1][o] = 0.5 * (a - b + cc - d);
                out[2][o] = 0.5 * (a + b - cc - d);
                out[3][o] = 0.5 * (a - b - cc + d);
            }
        }
    }
    out
}

fn image(h: usize, w: usize, c: usize) -> impl Strategy<Value = FeatureMap> {
    prop::collection::vec(-1.0f32..1.0, h * w * c).prop_map(move |v| FeatureMap::from_vec(h, w, c, v).unwrap())
}

fn even_image() -> impl Strategy<Value = FeatureMap> {
    (1usize..6, 1usize..6, 1usize..4).prop_flat_map(|(h, w, c)| image(2 * h, 2 * w, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn analysis_matches_naive_oracle(v in prop::collection::vec(-1.0f64..1.0, 8 * 8 * 3)) {
        let fast = haar_analysis(&v, 8, 8, 3);
        let slow = naive_haar(&v, 8, 8, 3);
        for b in 0..4 {
            for (p, q) in fast[b].iter().zip(&slow[b]) {
                prop_assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn f32_analysis_matches_oracle(x in image(8, 8, 2)) {
        let lvl = dwt2(&x).unwrap();
        let v: Vec<f64> = x.values().iter().map(|&a| a as f64).collect();
        let slow = naive_haar(&v, 8, 8, 2);
        for (band, want) in [&lvl.ll, &lvl.lh, &lvl.hl, &lvl.hh].into_iter().zip(&slow) {
            for (p, q) in band.values().iter().zip(want) {
                prop_assert!((*p as f64 - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_level_round_trip(x in even_image()) {
        let back = idwt2(&dwt2(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn pyramid_round_trip(x in image(32, 16, 3), depth in 1usize..=4) {
        let back = reconstruct(&decompose(&x, depth).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn energy_is_preserved(x in even_image()) {
        let e_in = x.sum_squares();
        let e_out = dwt2(&x).unwrap().energy();
        prop_assert!((e_in - e_out).abs() <= 1e-6 * e_in.max(1e-12));
    }

    #[test]
    fn transform_is_linear(
        x in prop::collection::vec(-1.0f64..1.0, 4 * 6 * 2),
        y in prop::collection::vec(-1.0f64..1.0, 4 * 6 * 2),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = haar_analysis(&mix, 4, 6, 2);
        let (tx, ty) = (haar_analysis(&x, 4, 6, 2), haar_analysis(&y, 4, 6, 2));
        for k in 0..4 {
            for i in 0..lhs[k].len() {
                prop_assert!((lhs[k][i] - (a * tx[k][i] + b * ty[k][i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_input_has_no_detail(v in -1.0f32..1.0) {
        let lvl = dwt2(&FeatureMap::filled(6, 10, 2, v)).unwrap();
        for band in [&lvl.lh, &lvl.hl, &lvl.hh] {
            prop_assert!(band.values().iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn f64_synthesis_inverts_analysis(v in prop::collection::vec(-1.0f64..1.0, 6 * 4 * 2)) {
        let [ll, lh, hl, hh] = haar_analysis(&v, 6, 4, 2);
        let back = haar_synthesis(&ll, &lh, &hl, &hh, 3, 2, 2);
        for (p, q) in back.iter().zip(&v) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn odd_and_indivisible_sizes_are_rejected() {
    assert_eq!(dwt2(&FeatureMap::zeros(5, 4, 1)).unwrap_err().code(), "E_DIM");
    assert_eq!(decompose(&FeatureMap::zeros(12, 12, 1), 3).unwrap_err().code(), "E_DIM");
    assert_eq!(decompose(&FeatureMap::zeros(8, 8, 1), 0).unwrap_err().code(), "E_ARG");
}

#[test]
fn ramp_detail_is_constant() {
    // A horizontal ramp x/8 has a constant horizontal-detail coefficient of
    // (x - (x + 1/8) + x - (x + 1/8)) / 2 = -1/8 and nothing else.
    let ramp = FeatureMap::from_fn(8, 8, 1, |_, x, _| x as f32 / 8.0);
    let lvl = dwt2(&ramp).unwrap();
    assert!(lvl.lh.values().iter().all(|&v| (v + 0.125).abs() < 1e-7));
    assert!(lvl.hl.values().iter().all(|&v| v.abs() < 1e-7));
    assert!(lvl.hh.values().iter().all(|&v| v.abs() < 1e-7));
}
