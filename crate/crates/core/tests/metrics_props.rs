use deband_core::banddata::synth_band;
use deband_core::freqmask::MaskMap;
use deband_core::metrics::{
    band_edge_index, evaluate, evaluate_with_external, psnr, ssim, EvalItem, ExternalMetric, PSNR_CAP_DB,
};
use deband_core::FeatureMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize) -> impl Strategy<Value = FeatureMap> {
    prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |v| FeatureMap::from_vec(h, w, 3, v).unwrap())
}

fn noisy(img: &FeatureMap, amp: f32, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = img.dims();
    let values = img.values().iter().map(|v| v + rng.gen_range(-amp..=amp)).collect();
    FeatureMap::from_vec(h, w, c, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn psnr_is_symmetric_and_capped(a in image(12, 12), b in image(12, 12)) {
        let ab = psnr(&a, &b).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a).unwrap());
        prop_assert!(ab > 0.0 && ab <= PSNR_CAP_DB);
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image(16, 16), b in image(16, 16)) {
        let ab = ssim(&a, &b).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn bei_is_a_fraction(a in image(20, 20)) {
        let bei = band_edge_index(&a);
        prop_assert!((0.0..=1.0).contains(&bei));
    }
}

#[test]
fn psnr_falls_as_noise_grows() {
    let base = FeatureMap::from_fn(32, 32, 3, |y, x, c| 0.25 + 0.5 * ((y + x + c) % 9) as f32 / 8.0);
    let scores: Vec<f64> = [0.01f32, 0.05, 0.2].iter().map(|&a| psnr(&base, &noisy(&base, a, 1)).unwrap()).collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}

#[test]
fn ssim_of_opposite_constants_matches_closed_form() {
    // μa = 0, μb = 1, zero variance: the contrast terms cancel to c1 / (1 + c1).
    let c1 = 0.01f64.powi(2);
    let expected = c1 / (1.0 + c1);
    let got = ssim(&FeatureMap::zeros(16, 16, 3), &FeatureMap::filled(16, 16, 3, 1.0)).unwrap();
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    assert_eq!(ssim(&FeatureMap::zeros(8, 16, 1), &FeatureMap::zeros(8, 16, 1)).unwrap_err().code(), "E_ARG");
}

/// Full-range ramps across 64 samples, where 5-bit steps fall inside each
/// other's flanks, plus one gentle ramp where they do not.
fn ramp_corpus() -> Vec<FeatureMap> {
    let n = 64;
    let t = |i: usize| i as f32 / (n - 1) as f32;
    vec![
        FeatureMap::from_fn(n, n, 3, |_, x, _| t(x)),
        FeatureMap::from_fn(n, n, 3, |y, _, _| 1.0 - t(y)),
        FeatureMap::from_fn(n, n, 3, |y, x, c| (0.5 * (t(y) + t(x)) + 0.1 * c as f32).min(1.0)),
        FeatureMap::from_fn(n, n, 3, |_, x, _| 0.35 + 0.3 * t(x)),
    ]
}

#[test]
fn bei_orders_the_quantisation_family() {
    let mean = |imgs: &[FeatureMap]| imgs.iter().map(band_edge_index).sum::<f64>() / imgs.len() as f64;
    let ramps = ramp_corpus();
    let q = |bits| ramps.iter().map(|r| synth_band(r, bits, None).unwrap()).collect::<Vec<_>>();
    let (b3, b5, clean) = (mean(&q(3)), mean(&q(5)), mean(&ramps));
    assert!(b3 > b5, "{b3} vs {b5}");
    assert!(b5 > clean, "{b5} vs {clean}");
    assert_eq!(clean, 0.0);
}

fn items(n: usize) -> Vec<EvalItem> {
    (0..n)
        .map(|i| {
            let pristine = FeatureMap::from_fn(24, 24, 3, |y, x, c| ((y * 3 + x * 2 + c + i) % 24) as f32 / 23.0);
            let banded = synth_band(&pristine, 3, None).unwrap();
            let restored = noisy(&pristine, 0.02, i as u64).clamp01();
            EvalItem {
                id: format!("img{i}"),
                pristine,
                banded,
                restored,
                mask: Some(MaskMap::filled(24, 24, 0.25 * i as f32)),
            }
        })
        .collect()
}

#[test]
fn evaluate_rows_and_aggregates() {
    let data = items(4);
    let report = evaluate(&data, "plain").unwrap();
    assert_eq!(report.rows.len(), 4);
    for (row, item) in report.rows.iter().zip(&data) {
        assert_eq!(row.psnr_db, psnr(&item.restored, &item.pristine).unwrap());
        let banded = psnr(&item.banded, &item.pristine).unwrap();
        assert_eq!(row.delta_psnr, row.psnr_db - banded);
        assert_eq!(row.delta_bei, row.bei_restored - row.bei_banded);
    }
    let agg = report.aggregates("plain");
    let hand = report.rows.iter().map(|r| r.ssim).sum::<f64>() / 4.0;
    assert!((agg["ssim"].mean - hand).abs() < 1e-12);
    assert_eq!(agg["ssim"].count, 4);
    assert!((report.mean("plain", "mask_mean").unwrap() - 0.375).abs() < 1e-7);
}

#[test]
fn perfect_and_identity_restorations() {
    let mut data = items(2);
    for it in &mut data {
        it.restored = it.pristine.clone();
    }
    let report = evaluate(&data, "oracle").unwrap();
    for (row, it) in report.rows.iter().zip(&data) {
        assert_eq!(row.psnr_db, PSNR_CAP_DB);
        assert_eq!(row.ssim, 1.0);
        assert_eq!(row.bei_restored, band_edge_index(&it.pristine));
    }
    for it in &mut data {
        it.restored = it.banded.clone();
    }
    let report = evaluate(&data, "banded").unwrap();
    assert!(report.rows.iter().all(|r| r.delta_psnr == 0.0 && r.delta_bei == 0.0));
}

#[test]
fn shape_mismatches_skip_rows() {
    let mut data = items(3);
    data[1].restored = FeatureMap::zeros(8, 8, 3);
    let report = evaluate(&data, "plain").unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].image_id, "img1");

    for it in &mut data {
        it.restored = FeatureMap::zeros(8, 8, 3);
    }
    assert!(evaluate(&data, "plain").is_err());
    assert!(evaluate(&[], "plain").is_err());
}

#[test]
fn reports_are_byte_deterministic() {
    let a = evaluate(&items(3), "map").unwrap();
    let b = evaluate(&items(3), "map").unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.summary_json(), b.summary_json());
    let header = a.to_csv().lines().next().unwrap().to_string();
    assert!(header.starts_with("image_id,variant,psnr_db,ssim,bei_banded,bei_restored,delta_psnr,delta_bei"));
}

#[test]
fn external_hook_parses_and_degrades() {
    let data = items(2);
    let native = evaluate(&data, "plain").unwrap();
    assert_eq!(evaluate_with_external(&data, "plain", &[]).unwrap().to_csv(), native.to_csv());

    let metrics = [
        ExternalMetric { name: "half".into(), command: "echo 0.5".into() },
        ExternalMetric { name: "broken".into(), command: "exit 3".into() },
        ExternalMetric { name: "garbled".into(), command: "echo nope".into() },
        ExternalMetric { name: "reads".into(), command: "test -s {restored} && echo 1".into() },
    ];
    let report = evaluate_with_external(&data, "plain", &metrics).unwrap();
    assert_eq!(report.external_columns, ["half", "broken", "garbled", "reads"]);
    for row in &report.rows {
        assert_eq!(row.external, vec![Some(0.5), None, None, Some(1.0)]);
    }
    let csv = report.to_csv();
    assert!(csv.lines().next().unwrap().ends_with(",half,broken,garbled,reads"));
    assert!(csv.lines().nth(1).unwrap().ends_with(",0.500000,,,1.000000"));
}
