//! Seeded training loop with Adam and periodic validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banddata::{ImagePair, PatchDataset, Split};
use crate::checkpoint::save_checkpoint;
use crate::error::{arg_err, dim_err, Error, Result};
use crate::exec::{map_ordered, ExecMode};
use crate::feature::FeatureMap;
use crate::metrics::{band_edge_index, psnr, ssim};
use crate::net::{forward, loss_and_gradients, ModelState, Variant};

/// Mean absolute difference over all elements.
pub fn l1_loss(pred: &FeatureMap, target: &FeatureMap) -> Result<f64> {
    if !pred.same_dims(target) {
        return dim_err(format!("l1 inputs differ: {:?} vs {:?}", pred.dims(), target.dims()));
    }
    let sum: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / pred.values().len() as f64)
}

/// Learning-rate schedule over the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero at the last step.
    Cosine,
}

impl LrSchedule {
    /// Rate for 1-based `step` of `steps`, ramped linearly over the first
    /// `warmup` steps.
    pub fn rate(self, base: f64, step: usize, steps: usize, warmup: usize) -> f64 {
        let ramp = if step < warmup { step as f64 / warmup as f64 } else { 1.0 };
        ramp * match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = (step - 1) as f64 / steps as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Steps over which the rate ramps up linearly from zero.
    pub warmup_steps: usize,
    pub seed: u64,
    pub variant: Variant,
    pub eval_every: usize,
    /// Written at every evaluation and at the end.
    pub checkpoint_path: Option<PathBuf>,
    /// Validation pairs scored per evaluation, evenly spaced over the split;
    /// 0 means the whole split.
    pub val_samples: usize,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 2,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            warmup_steps: 100,
            seed: 0,
            variant: Variant::Plain,
            eval_every: 250,
            checkpoint_path: None,
            val_samples: 32,
            exec: ExecMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.eval_every == 0 {
            return arg_err("steps, batch and eval_every must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return arg_err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.variant == Variant::Wwm {
            return arg_err("wwm is inference-time; train plain");
        }
        Ok(())
    }

    /// Steps after which validation runs: every `eval_every`, plus the last.
    pub fn eval_steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = (1..=self.steps).filter(|k| k % self.eval_every == 0).collect();
        if s.last() != Some(&self.steps) {
            s.push(self.steps);
        }
        s
    }
}

/// Validation scores after one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub bei: f64,
    pub mask_mean: Option<f64>,
    pub mask_above_half: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean batch loss of every step.
    pub losses: Vec<f64>,
    pub evals: Vec<EvalRecord>,
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
struct LossLine {
    kind: &'static str,
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct EvalLine<'a> {
    kind: &'static str,
    #[serde(flatten)]
    record: &'a EvalRecord,
}

impl TrainLog {
    /// One JSON object per line: a `loss` line per step, then an `eval` line
    /// per evaluation. Wall-clock time is left out so the log is
    /// reproducible.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for (i, &loss) in self.losses.iter().enumerate() {
            let line = LossLine {
                kind: "loss",
                step: i + 1,
                loss,
            };
            let _ = writeln!(s, "{}", serde_json::to_string(&line).expect("loss line"));
        }
        for record in &self.evals {
            let line = EvalLine { kind: "eval", record };
            let _ = writeln!(s, "{}", serde_json::to_string(&line).expect("eval line"));
        }
        s
    }

    /// Mean loss over steps `from..to` (0-based, clamped).
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.losses.len());
        let w = &self.losses[from.min(to)..to];
        w.iter().sum::<f64>() / w.len().max(1) as f64
    }
}

/// Adam with β = (0.9, 0.999) and ε = 1e-8.
struct Adam {
    t: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &ModelState) -> Self {
        let zeros = |_: &String, n: usize| vec![0.0; n];
        Self {
            t: 0,
            m: model.params.iter().map(|(k, p)| (k.clone(), zeros(k, p.numel()))).collect(),
            v: model.params.iter().map(|(k, p)| (k.clone(), zeros(k, p.numel()))).collect(),
        }
    }

    fn step(&mut self, model: &mut ModelState, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (name, p) in model.params.iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("moment");
            let v = self.v.get_mut(name).expect("moment");
            for i in 0..p.data.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                p.data[i] = (p.data[i] as f64 - update) as f32;
            }
        }
    }
}

/// Up to `n` items evenly spaced over `items` (all of them when `n` is 0),
/// so a small validation subset still spans every source image.
fn spread<'a, T>(items: &[&'a T], n: usize) -> Vec<&'a T> {
    if n == 0 || n >= items.len() {
        return items.to_vec();
    }
    (0..n).map(|i| items[i * items.len() / n]).collect()
}

fn validate_on(model: &ModelState, pairs: &[&ImagePair], step: usize, exec: ExecMode) -> Result<EvalRecord> {
    type Scores = (f64, f64, f64, Option<(f64, f64)>);
    let scored: Vec<Result<Scores>> = map_ordered(pairs, exec, |p| {
        let out = forward(&p.banded, model)?;
        Ok((
            psnr(&out.restored, &p.pristine)?,
            ssim(&out.restored, &p.pristine)?,
            band_edge_index(&out.restored),
            out.mask.map(|m| (m.mean(), m.fraction_above_half())),
        ))
    });
    let scored: Vec<Scores> = scored.into_iter().collect::<Result<_>>()?;
    let n = scored.len() as f64;
    let mean = |f: &dyn Fn(&Scores) -> f64| scored.iter().map(f).sum::<f64>() / n;
    let has_mask = scored.iter().all(|s| s.3.is_some());
    Ok(EvalRecord {
        step,
        psnr: mean(&|s| s.0),
        ssim: mean(&|s| s.1),
        bei: mean(&|s| s.2),
        mask_mean: has_mask.then(|| mean(&|s| s.3.expect("mask").0)),
        mask_above_half: has_mask.then(|| mean(&|s| s.3.expect("mask").1)),
    })
}

/// Trains `model` as `cfg.variant` on the train split.
///
/// Each step draws `batch` train pairs with a seeded RNG, evaluates the
/// per-sample gradients (in parallel when enabled, in a fixed order) and
/// applies one Adam update to their mean. The loss is L1 on the fused output
/// for `dwt`/`map` and on the raw output for `plain`.
pub fn train(mut model: ModelState, data: &PatchDataset, cfg: &TrainConfig) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    model.config.variant = cfg.variant;
    model.validate()?;
    let train_pairs = data.pairs_in(Split::Train);
    let all_val = data.pairs_in(Split::Val);
    if train_pairs.is_empty() || all_val.is_empty() {
        return arg_err("training needs non-empty train and val splits");
    }
    let val_pairs = spread(&all_val, cfg.val_samples);
    let eval_steps = cfg.eval_steps();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model);
    let mut log = TrainLog::default();

    for step in 1..=cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch).map(|_| rng.gen_range(0..train_pairs.len())).collect();
        let per_sample = map_ordered(&picks, cfg.exec, |&i| {
            let p = train_pairs[i];
            loss_and_gradients::<f32>(&model, &p.banded, &p.pristine)
        });
        let mut loss = 0.0f64;
        let mut grads: BTreeMap<String, Vec<f64>> = model
            .params
            .iter()
            .map(|(k, p)| (k.clone(), vec![0.0; p.numel()]))
            .collect();
        let scale = 1.0 / cfg.batch as f64;
        for res in per_sample {
            let (l, g) = res?;
            loss += l as f64 * scale;
            for (name, acc) in grads.iter_mut() {
                for (a, &gi) in acc.iter_mut().zip(&g[name]) {
                    *a += gi as f64 * scale;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::TrainingFault {
                step,
                detail: format!("loss is {loss}"),
            });
        }
        let lr = cfg.lr_schedule.rate(cfg.learning_rate, step, cfg.steps, cfg.warmup_steps);
        adam.step(&mut model, &grads, lr);
        model.step += 1;
        if !model.all_finite() {
            return Err(Error::TrainingFault {
                step,
                detail: "non-finite parameter after update".into(),
            });
        }
        log.losses.push(loss);

        if eval_steps.contains(&step) {
            let record = validate_on(&model, &val_pairs, step, cfg.exec)?;
            log::info!(
                "step {step}: loss {loss:.5} val psnr {:.3} ssim {:.4} bei {:.5}",
                record.psnr,
                record.ssim,
                record.bei
            );
            log.evals.push(record);
            if let Some(path) = &cfg.checkpoint_path {
                save_checkpoint(&model, path)?;
            }
        }
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let a = FeatureMap::filled(4, 4, 3, 0.5);
        let b = FeatureMap::filled(4, 4, 3, 0.25);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_loss(&a, &b).unwrap(), 0.25);
        assert_eq!(l1_loss(&b, &a).unwrap(), 0.25);
        assert_eq!(l1_loss(&a, &FeatureMap::zeros(4, 5, 3)).unwrap_err().code(), "E_DIM");
    }

    #[test]
    fn eval_schedule() {
        let cfg = TrainConfig {
            steps: 10,
            eval_every: 4,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.eval_steps(), vec![4, 8, 10]);
        let wwm = TrainConfig {
            variant: Variant::Wwm,
            ..TrainConfig::default()
        };
        assert!(wwm.validate().unwrap_err().to_string().contains("wwm is inference-time; train plain"));
    }
}
