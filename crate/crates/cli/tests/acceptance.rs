//! Acceptance criteria 1 to 8, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines are always visible. With
//! `ACCEPTANCE_STRICT=1` set, exits non-zero if any criterion fails. Criterion 5 trains three models through
//! the `deband` binary and dominates the runtime.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use deband_core::banddata::{load_image, pad_to_multiple, save_image, synth_band};
use deband_core::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use deband_core::freqmask::{dwt_mask, fuse, map_mask, minmax_normalize, wwm_mask, MagnitudeMap, MaskMap};
use deband_core::net::{forward, gradient_check};
use deband_core::wavelet::{decompose, haar_analysis, reconstruct};
use deband_core::{FeatureMap, ModelState, NetConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let root = work.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("wavelet suite", Box::new(wavelet_suite)),
        ("mask suite", Box::new(mask_suite)),
        ("fusion identities", Box::new(fusion_identities)),
        ("gradient check", Box::new(gradient_suite)),
        ("toy training run", Box::new(|| toy_run(root))),
        ("wwm post-hoc identity", Box::new(|| wwm_identity(root))),
        ("determinism", Box::new(|| determinism(root))),
        ("checkpoint round trip", Box::new(|| checkpoint_round_trip(root))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1} s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.1} s] {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f32, hi: f32) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.gen_range(lo..hi))
}

// Criterion 1.

fn naive_haar(x: &[f64], h: usize, w: usize, c: usize) -> [Vec<f64>; 4] {
    let n = (h / 2) * (w / 2) * c;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            for k in 0..c {
                let at = |y: usize, xx: usize| x[(y * w + xx) * c + k];
                let (a, b) = (at(2 * i, 2 * j), at(2 * i, 2 * j + 1));
                let (cc, d) = (at(2 * i + 1, 2 * j), at(2 * i + 1, 2 * j + 1));
                let o = (i * (w / 2) + j) * c + k;
                out[0][o] = 0.5 * (a + b + cc + d);
                out[1][o] = 0.5 * (a - b + cc - d);
                out[2][o] = 0.5 * (a + b - cc - d);
                out[3][o] = 0.5 * (a - b - cc + d);
            }
        }
    }
    out
}

fn wavelet_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rt, mut worst_energy, mut worst_oracle) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let depth = rng.gen_range(1..=4);
        let m = 1 << depth;
        let (h, w, c) = (m * rng.gen_range(1..=4), m * rng.gen_range(1..=4), rng.gen_range(1..=3));
        let x = random_map(&mut rng, h, w, c, -1.0, 1.0);

        let p = decompose(&x, depth).map_err(|e| e.to_string())?;
        worst_rt = worst_rt.max(reconstruct(&p).map_err(|e| e.to_string())?.max_abs_diff(&x) as f64);

        let e_in = x.sum_squares();
        let last = p.levels.last().expect("levels");
        let e_out = last.ll.sum_squares()
            + p.levels.iter().map(|l| l.lh.sum_squares() + l.hl.sum_squares() + l.hh.sum_squares()).sum::<f64>();
        worst_energy = worst_energy.max((e_in - e_out).abs() / e_in);

        let v: Vec<f64> = x.values().iter().map(|&a| a as f64).collect();
        let fast = haar_analysis(&v, h, w, c);
        let slow = naive_haar(&v, h, w, c);
        for (fb, sb) in fast.iter().zip(&slow) {
            for (p, q) in fb.iter().zip(sb) {
                worst_oracle = worst_oracle.max((p - q).abs());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "100 cases: round trip {worst_rt:.1e} (< 1e-5), energy {worst_energy:.1e} (< 1e-6), oracle {worst_oracle:.1e} (< 1e-10), {secs:.2} s (< 10 s)"
    );
    check(worst_rt < 1e-5 && worst_energy < 1e-6 && worst_oracle < 1e-10 && secs < 10.0, || detail.clone())?;
    Ok(detail)
}

// Criterion 2.

/// Half-pixel bilinear resampling of an `h × w` grid to `oh × ow`.
fn resample(grid: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(n_in - 1), s - lo as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, w, ow);
            let g = |y: usize, x: usize| grid[y * w + x];
            out.push((1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1.0 - fx) * g(y1, x0) + fx * g(y1, x1)));
        }
    }
    out
}

fn abs_channel_mean(maps: &[&FeatureMap]) -> Vec<f64> {
    let (h, w, c) = maps[0].dims();
    let mut out = vec![0.0; h * w];
    for (i, o) in out.iter_mut().enumerate() {
        let sum: f64 = maps.iter().flat_map(|m| &m.values()[i * c..(i + 1) * c]).map(|&v| (v as f64).abs()).sum();
        *o = sum / c as f64;
    }
    out
}

fn oracle_mask(levels: &[(Vec<f64>, usize, usize)], fh: usize, fw: usize) -> Vec<f64> {
    let mut avg = vec![0.0; fh * fw];
    for (s, h, w) in levels {
        for (a, v) in avg.iter_mut().zip(resample(s, *h, *w, fh, fw)) {
            *a += v / levels.len() as f64;
        }
    }
    let lo = avg.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = avg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; avg.len()];
    }
    avg.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn max_gap(mask: &MaskMap, want: &[f64]) -> f64 {
    mask.values().iter().zip(want).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max)
}

fn mask_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut dwt_gap, mut map_gap, mut mirror_gap, mut scale_gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut range_ok = true;
    for _ in 0..100 {
        let depth = rng.gen_range(1..=3);
        let m = 1 << depth;
        let (h, w) = (m * rng.gen_range(2..=4), m * rng.gen_range(2..=4));
        let x = random_map(&mut rng, h, w, 3, 0.0, 1.0);

        let p = decompose(&x, depth).map_err(|e| e.to_string())?;
        let levels: Vec<_> = p
            .levels
            .iter()
            .map(|l| (abs_channel_mean(&[&l.lh, &l.hl, &l.hh]), l.lh.height(), l.lh.width()))
            .collect();
        let dm = dwt_mask(&p.levels).map_err(|e| e.to_string())?;
        dwt_gap = dwt_gap.max(max_gap(&dm, &oracle_mask(&levels, h, w)));

        let feats: Vec<FeatureMap> = (0..depth)
            .map(|i| random_map(&mut rng, h >> (i + 1), w >> (i + 1), 4, -2.0, 2.0))
            .collect();
        let mm = map_mask(&feats).map_err(|e| e.to_string())?;
        let levels: Vec<_> = feats.iter().map(|f| (abs_channel_mean(&[f]), f.height(), f.width())).collect();
        map_gap = map_gap.max(max_gap(&mm, &oracle_mask(&levels, h, w)));

        let wm = wwm_mask(&x, depth).map_err(|e| e.to_string())?;
        for mask in [&dm, &mm, &wm] {
            let lo = mask.values().iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = mask.values().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            range_ok &= lo == 0.0 && hi == 1.0;
        }
        let flipped = wwm_mask(&x.mirror_horizontal(), depth).map_err(|e| e.to_string())?;
        for (a, b) in flipped.values().iter().zip(wm.mirror_horizontal().values()) {
            mirror_gap = mirror_gap.max((a - b).abs() as f64);
        }

        let raw: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = MagnitudeMap::new(h, w, raw).map_err(|e| e.to_string())?;
        let k = 10f64.powf(rng.gen_range(-3.0..3.0));
        let a = minmax_normalize(&s);
        let b = minmax_normalize(&s.scaled(k).map_err(|e| e.to_string())?);
        for (p, q) in a.values().iter().zip(b.values()) {
            scale_gap = scale_gap.max((p - q).abs() as f64);
        }
    }
    let flat = wwm_mask(&FeatureMap::filled(32, 32, 3, 0.4), 2).map_err(|e| e.to_string())?;
    let degenerate_ok = flat.values().iter().all(|&v| v == 0.0);
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "100 cases: dwt oracle {dwt_gap:.1e}, map oracle {map_gap:.1e} (< 1e-6), range {range_ok}, flat->0 {degenerate_ok}, mirror {mirror_gap:.1e}, scale {scale_gap:.1e}, {secs:.2} s (< 10 s)"
    );
    check(
        dwt_gap < 1e-6 && map_gap < 1e-6 && range_ok && degenerate_ok && mirror_gap < 1e-5 && scale_gap <= 1e-7 && secs < 10.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

// Criterion 3.

fn fusion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0;
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
        let b = random_map(&mut rng, h, w, 3, 0.0, 1.0);
        let r = random_map(&mut rng, h, w, 3, 0.0, 1.0);
        let m = MaskMap::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..=1.0)).collect()).map_err(|e| e.to_string())?;
        let ones = MaskMap::filled(h, w, 1.0);
        let zeros = MaskMap::filled(h, w, 0.0);
        let f = |a: &FeatureMap, c: &FeatureMap, m: &MaskMap| fuse(a, c, m).map_err(|e| e.to_string());
        check(f(&b, &r, &ones)? == b, || format!("m=1 did not return banded ({h}x{w})"))?;
        check(f(&b, &r, &zeros)? == r, || format!("m=0 did not return restored ({h}x{w})"))?;
        check(f(&b, &b, &m)? == b, || format!("fuse(x, x, m) != x ({h}x{w})"))?;
        cases += 1;
    }
    Ok(format!("{cases} random cases, all three identities bit-exact"))
}

// Criterion 4.

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut model = ModelState::init(NetConfig::default(), 21).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Zero-initialised output layers would block gradient to everything upstream.
    for p in model.params.values_mut() {
        p.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
    let x = random_map(&mut rng, 32, 32, 3, 0.0, 1.0);
    let y = random_map(&mut rng, 32, 32, 3, 0.0, 1.0);
    let probes = gradient_check(&model, &x, &y, 10, 99, 1e-5).map_err(|e| e.to_string())?;
    let worst = probes.iter().map(|p| p.relative_error(1e-6)).fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    let blocks: std::collections::BTreeSet<&str> =
        probes.iter().map(|p| p.name.split('.').take(2).last().unwrap_or("")).collect();
    let detail = format!(
        "{} probes over {:?}: max relative error {worst:.1e} (< 2e-3), {secs:.1} s (< 60 s)",
        probes.len(),
        blocks
    );
    check(probes.len() == 10 && worst < 2e-3 && secs < 60.0, || detail.clone())?;
    Ok(detail)
}

// Criteria 5 to 8 drive the binary.

fn deband(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deband"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("could not run deband: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("deband {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn summary_mean(summary: &Value, variant: &str, column: &str) -> Result<f64, String> {
    summary["variants"][variant][column]["mean"]
        .as_f64()
        .ok_or_else(|| format!("summary has no {variant}.{column}"))
}

fn toy_run(root: &Path) -> Outcome {
    let started = Instant::now();
    let data = root.join("toy-data");
    deband(&["synth", "--out", p(&data), "--images", "60", "--image-size", "256", "--bits", "3,4,5", "--patch-size", "64"])?;
    let mut runs = Vec::new();
    for v in ["plain", "dwt", "map"] {
        let out = root.join(format!("toy-{v}"));
        deband(&["train", "--data", p(&data), "--variant", v, "--steps", "1000", "--out", p(&out)])?;
        runs.push(format!("{v}={}", p(&out.join("model.ckpt"))));
    }
    let report = root.join("toy-report");
    let mut args = vec!["eval", "--data", p(&data), "--out", p(&report)];
    for r in &runs {
        args.extend(["--run", r.as_str()]);
    }
    deband(&args)?;
    let minutes = started.elapsed().as_secs_f64() / 60.0;

    let text = fs::read_to_string(report.join("summary.json")).map_err(|e| e.to_string())?;
    let summary: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut stats = BTreeMap::new();
    for v in ["plain", "dwt", "map"] {
        let dpsnr = summary_mean(&summary, v, "delta_psnr")?;
        let banded = summary_mean(&summary, v, "bei_banded")?;
        let restored = summary_mean(&summary, v, "bei_restored")?;
        stats.insert(v, (dpsnr, banded, restored));
    }
    let (plain_d, plain_bb, plain_br) = stats["plain"];
    let reduction = (plain_bb - plain_br) / plain_bb;
    let mut failures = Vec::new();
    if plain_d < 1.0 {
        failures.push(format!("plain dPSNR {plain_d:+.3} dB < +1.0"));
    }
    if reduction < 0.30 {
        failures.push(format!("plain BEI reduction {:.1}% < 30%", 100.0 * reduction));
    }
    for v in ["dwt", "map"] {
        let (d, _, br) = stats[v];
        if d < plain_d - 0.3 {
            failures.push(format!("{v} dPSNR {d:+.3} < plain - 0.3"));
        }
        if br > plain_br {
            failures.push(format!("{v} BEI {br:.5} > plain {plain_br:.5}"));
        }
    }
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if minutes >= 15.0 {
        failures.push(format!("runtime {minutes:.1} min >= 15 on {cores} core(s)"));
    }
    let detail = format!(
        "plain dPSNR {plain_d:+.3} dB, BEI {plain_bb:.5}->{plain_br:.5} (-{:.1}%); dwt dPSNR {:+.3} BEI {:.5}; map dPSNR {:+.3} BEI {:.5}; {minutes:.1} min on {cores} core(s)",
        100.0 * reduction,
        stats["dwt"].0,
        stats["dwt"].2,
        stats["map"].0,
        stats["map"].2,
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

fn wwm_identity(root: &Path) -> Outcome {
    let ckpt = root.join("toy-plain").join("model.ckpt");
    let inputs = root.join("wwm-in");
    fs::create_dir_all(&inputs).map_err(|e| e.to_string())?;
    let corpus = deband_core::banddata::gen_gradient_corpus(2, 128, 17).map_err(|e| e.to_string())?;
    // One size that is a multiple of 2^depth and one that needs padding.
    let crops = [corpus[0].crop(0, 0, 64, 96), corpus[1].crop(5, 3, 77, 50)];
    for (i, c) in crops.into_iter().enumerate() {
        let banded = synth_band(&c.map_err(|e| e.to_string())?, 4, None).map_err(|e| e.to_string())?;
        save_image(&banded, inputs.join(format!("in{i}.png"))).map_err(|e| e.to_string())?;
    }
    let out = root.join("wwm-out");
    deband(&["infer", "--checkpoint", p(&ckpt), "--input", p(&inputs), "--variant", "wwm", "--out", p(&out)])?;

    let state = load_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    let scratch = root.join("wwm-ref");
    fs::create_dir_all(&scratch).map_err(|e| e.to_string())?;
    let mut worst = 0.0f32;
    for i in 0..2 {
        let input = load_image(inputs.join(format!("in{i}.png"))).map_err(|e| e.to_string())?;
        let (h, w, _) = input.dims();
        let padded = pad_to_multiple(&input, 1 << state.config.depth).map_err(|e| e.to_string())?;
        let plain = forward(&padded.padded, &state).map_err(|e| e.to_string())?.raw;
        let mask = wwm_mask(&padded.padded, state.config.depth).map_err(|e| e.to_string())?;
        let fused = fuse(&padded.padded, &plain, &mask).map_err(|e| e.to_string())?;
        let expected = fused.crop(0, 0, h, w).map_err(|e| e.to_string())?;
        let reference = scratch.join(format!("in{i}.png"));
        save_image(&expected, &reference).map_err(|e| e.to_string())?;
        let want = load_image(&reference).map_err(|e| e.to_string())?;
        let got = load_image(out.join(format!("in{i}.png"))).map_err(|e| e.to_string())?;
        check(got.dims() == (h, w, 3), || format!("output dims {:?} != input {h}x{w}", got.dims()))?;
        check(out.join(format!("in{i}_mask.png")).exists(), || "mask image missing".into())?;
        worst = worst.max(got.max_abs_diff(&want));
    }
    let detail = format!("2 images (64x96, 77x50): max |cli - fuse(input, plain, wwm_mask(input))| = {worst:.1e} (< 1e-6)");
    check(worst < 1e-6, || detail.clone())?;
    Ok(detail)
}

fn files_in(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path: PathBuf = e.map_err(|e| e.to_string())?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        // Wall-clock timing is the one artifact that legitimately varies.
        if name != "timing.json" {
            out.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn same_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files_in(a)?, files_in(b)?);
    check(fa == fb, || format!("{} and {} differ", a.display(), b.display()))?;
    Ok(fa.len())
}

fn determinism(root: &Path) -> Outcome {
    let mut compared = 0;
    let synth = |out: &Path| {
        deband(&["synth", "--out", p(out), "--images", "10", "--image-size", "64", "--patch-size", "32", "--seed", "9"])
    };
    let (d1, d2) = (root.join("det-data-1"), root.join("det-data-2"));
    synth(&d1)?;
    synth(&d2)?;
    compared += same_dirs(&d1, &d2)?;

    let (t1, t2) = (root.join("det-train-1"), root.join("det-train-2"));
    for t in [&t1, &t2] {
        deband(&["train", "--data", p(&d1), "--variant", "map", "--steps", "20", "--eval-every", "10", "--seed", "9", "--out", p(t)])?;
    }
    compared += same_dirs(&t1, &t2)?;

    let run = format!("map={}", p(&t1.join("model.ckpt")));
    let (e1, e2) = (root.join("det-eval-1"), root.join("det-eval-2"));
    for e in [&e1, &e2] {
        deband(&["eval", "--data", p(&d1), "--run", &run, "--out", p(e)])?;
    }
    compared += same_dirs(&e1, &e2)?;
    Ok(format!("synth, train (map, 20 steps) and eval repeated: {compared} files byte-identical"))
}

fn checkpoint_round_trip(root: &Path) -> Outcome {
    let mut models = vec![("fresh dwt", ModelState::init(NetConfig { variant: Variant::Dwt, ..NetConfig::default() }, 8).map_err(|e| e.to_string())?)];
    let trained = root.join("toy-plain").join("model.ckpt");
    let bytes = fs::read(&trained).map_err(|e| e.to_string())?;
    models.push(("trained plain", decode_checkpoint(&bytes).map_err(|e| e.to_string())?));
    check(encode_checkpoint(&models[1].1).map_err(|e| e.to_string())? == bytes, || "re-encoding changed the trained checkpoint".into())?;

    let img = synth_band(&deband_core::banddata::gen_gradient_corpus(1, 64, 4).map_err(|e| e.to_string())?[0], 3, None)
        .map_err(|e| e.to_string())?;
    for (name, m) in &models {
        let path = root.join("roundtrip.ckpt");
        save_checkpoint(m, &path).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
        check(&back == m, || format!("{name}: parameters changed"))?;
        let (a, b) = (forward(&img, m).map_err(|e| e.to_string())?, forward(&img, &back).map_err(|e| e.to_string())?);
        check(a.restored == b.restored && a.raw == b.raw && a.mask == b.mask, || format!("{name}: forward differs after reload"))?;
    }
    Ok("fresh dwt and trained plain: parameters and forward outputs bit-identical after save/load".into())
}
