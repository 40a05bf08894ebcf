//! Encoder/decoder composition and the public per-block entry points.

use std::collections::BTreeMap;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::feature::FeatureMap;
use crate::freqmask::MaskMap;
use crate::graph::{scan_forward, Graph, Tensor, Var};
use crate::net::blocks::{self, Bound};
use crate::net::params::{BlockParams, ModelState, NetConfig, Variant};
use crate::real::Real;

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Final output: the fused image for in-network mask variants, the raw
    /// network output otherwise.
    pub restored: FeatureMap,
    /// Network output before any fusion.
    pub raw: FeatureMap,
    /// The in-network mask for `dwt`/`map`; `None` for `plain`/`wwm`.
    pub mask: Option<MaskMap>,
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Replaces the computed in-network mask (only honoured by `dwt`/`map`).
    pub mask_override: Option<MaskMap>,
}

/// Nodes of interest produced by [`build_forward`].
pub(crate) struct Trace {
    pub raw: Var,
    pub output: Var,
    pub mask: Option<Var>,
}

pub(crate) fn to_tensor<F: Real>(x: &FeatureMap) -> Tensor<F> {
    let (h, w, c) = x.dims();
    Tensor::new(vec![h, w, c], x.values().iter().map(|&v| F::from_f32(v)).collect())
}

pub(crate) fn to_feature<F: Real>(t: &Tensor<F>) -> Result<FeatureMap> {
    let (h, w, c) = t.hwc();
    FeatureMap::from_vec(h, w, c, t.data.iter().map(|&v| v.to_f32()).collect())
}

pub(crate) fn check_input(img: &FeatureMap, cfg: &NetConfig) -> Result<()> {
    if img.channels() != 3 {
        return arg_err(format!("network input needs 3 channels, got {}", img.channels()));
    }
    let m = cfg.size_multiple();
    if img.height() % m != 0 || img.width() % m != 0 {
        return dim_err(format!(
            "input {}x{} is not divisible by 2^{} = {m}",
            img.height(),
            img.width(),
            cfg.depth
        ));
    }
    Ok(())
}

/// Appends the full network to `g`.
///
/// Encoder level `i`: Haar analysis of the running low band, LFSSB on `ll`,
/// SKFF over `(lh, hl, hh)`, HFEB guided by the LFSSB output. Decoder level `i`
/// (deepest first): LFSSB, HFEB on the encoder's enhanced band, a pointwise
/// head producing three detail bands, Haar synthesis, additive skip from the
/// encoder. A final 3×3 convolution predicts a residual added to the input.
pub(crate) fn build_forward<F: Real>(
    g: &mut Graph<F>,
    bound: &Bound,
    cfg: &NetConfig,
    img: Var,
    mask_override: Option<Var>,
) -> Trace {
    let (h, w, _) = g.value(img).hwc();
    let f_in = g.conv3x3(img, bound.var("shallow.w"), bound.var("shallow.b"));

    let mut skips = vec![f_in];
    let mut details = Vec::with_capacity(cfg.depth);
    let mut enhanced = Vec::with_capacity(cfg.depth);
    let mut cur = f_in;
    for i in 1..=cfg.depth {
        let bands = g.dwt(cur);
        let ll = g.band(bands, 0);
        let lh = g.band(bands, 1);
        let hl = g.band(bands, 2);
        let hh = g.band(bands, 3);
        let low = blocks::lfssb(g, &bound.scope(&format!("enc{i}.lfssb")), ll);
        let high = blocks::skff(g, &bound.scope(&format!("enc{i}.skff")), lh, hl, hh);
        let enh = blocks::hfeb(g, &bound.scope(&format!("enc{i}.hfeb")), high, low);
        details.push([lh, hl, hh]);
        enhanced.push(enh);
        skips.push(low);
        cur = low;
    }

    let c = cfg.base_channels;
    let mut x = cur;
    for i in (1..=cfg.depth).rev() {
        let refined = blocks::lfssb(g, &bound.scope(&format!("dec{i}.lfssb")), x);
        let e = blocks::hfeb(
            g,
            &bound.scope(&format!("dec{i}.hfeb")),
            enhanced[i - 1],
            refined,
        );
        let head = g.linear(
            e,
            bound.var(&format!("dec{i}.head.w")),
            Some(bound.var(&format!("dec{i}.head.b"))),
        );
        let d_lh = g.slice_channels(head, 0, c);
        let d_hl = g.slice_channels(head, c, c);
        let d_hh = g.slice_channels(head, 2 * c, c);
        let up = g.idwt(refined, d_lh, d_hl, d_hh);
        x = g.add(up, skips[i - 1]);
    }
    let residual = g.conv3x3(x, bound.var("out.w"), bound.var("out.b"));
    let raw = g.add(img, residual);

    let mask = match cfg.variant {
        Variant::Plain | Variant::Wwm => None,
        _ if mask_override.is_some() => mask_override,
        Variant::Dwt => {
            let maps: Vec<Var> = details
                .iter()
                .map(|&[lh, hl, hh]| {
                    let s = g.abs_sum_channel_mean(&[lh, hl, hh]);
                    g.upsample(s, h, w)
                })
                .collect();
            let avg = g.mean_of(&maps);
            Some(g.minmax_normalize(avg))
        }
        Variant::Map => {
            let maps: Vec<Var> = enhanced
                .iter()
                .map(|&e| {
                    let s = g.abs_sum_channel_mean(&[e]);
                    g.upsample(s, h, w)
                })
                .collect();
            let avg = g.mean_of(&maps);
            Some(g.minmax_normalize(avg))
        }
    };
    let output = match mask {
        Some(m) => g.fuse(img, raw, m),
        None => raw,
    };
    Trace { raw, output, mask }
}

pub fn forward(img: &FeatureMap, state: &ModelState) -> Result<ForwardOutput> {
    forward_with(img, state, &ForwardOptions::default())
}

pub fn forward_with(
    img: &FeatureMap,
    state: &ModelState,
    opts: &ForwardOptions,
) -> Result<ForwardOutput> {
    let cfg = &state.config;
    check_input(img, cfg)?;
    let mut g = Graph::<f32>::new();
    let bound = Bound::model(&mut g, state, false);
    let x = g.constant(to_tensor(img));
    let forced = match &opts.mask_override {
        Some(m) if cfg.variant.fuses_in_network() => {
            if m.dims() != (img.height(), img.width()) {
                return dim_err("mask override does not match the input size");
            }
            Some(g.constant(to_tensor(&m.as_feature_map())))
        }
        _ => None,
    };
    let trace = build_forward(&mut g, &bound, cfg, x, forced);
    let raw = to_feature(g.value(trace.raw))
        .map_err(|_| Error::NonFinite("network output".into()))?;
    let restored = to_feature(g.value(trace.output))
        .map_err(|_| Error::NonFinite("fused output".into()))?;
    let mask = match trace.mask {
        Some(m) => {
            let t = g.value(m);
            let (h, w, _) = t.hwc();
            Some(MaskMap::new(h, w, t.data.clone())?)
        }
        None => None,
    };
    Ok(ForwardOutput {
        restored,
        raw,
        mask,
    })
}

/// The initial 3×3 convolution, `h × w × 3 → h × w × C`.
pub fn shallow_extract(img: &FeatureMap, state: &ModelState) -> Result<FeatureMap> {
    if img.channels() != 3 {
        return arg_err("shallow extraction needs 3 channels");
    }
    let mut g = Graph::<f32>::new();
    let x = g.constant(to_tensor(img));
    let w = g.constant(param_tensor(state, "shallow.w")?);
    let b = g.constant(param_tensor(state, "shallow.b")?);
    let y = g.conv3x3(x, w, b);
    to_feature(g.value(y))
}

fn param_tensor<F: Real>(state: &ModelState, name: &str) -> Result<Tensor<F>> {
    let p = state
        .param(name)
        .ok_or_else(|| Error::Argument(format!("missing parameter {name}")))?;
    Ok(Tensor::new(
        p.dims.clone(),
        p.data.iter().map(|&v| F::from_f32(v)).collect(),
    ))
}

/// Runs the block's selective scan (input-dependent Δ, B, C) over a sequence of
/// `D`-dimensional vectors. The block must carry `ssm.*` weights.
pub fn selective_scan(seq: &[Vec<f32>], block: &BlockParams) -> Result<Vec<Vec<f32>>> {
    if seq.is_empty() {
        return arg_err("sequence must not be empty");
    }
    let d = seq[0].len();
    if seq.iter().any(|v| v.len() != d) {
        return dim_err("sequence vectors differ in length");
    }
    block.require("ssm.a_log")?;
    let mut g = Graph::<f32>::new();
    let bound = Bound::block(&mut g, block, false);
    let u = g.constant(Tensor::new(vec![seq.len(), d], seq.concat()));
    let y = blocks::selective_scan(&mut g, &bound.scope(&block.prefix).sub("ssm"), u);
    Ok(g.value(y).data.chunks_exact(d).map(<[f32]>::to_vec).collect())
}

/// The bare recurrence with explicit per-step Δ, B, C (`n × d`, `n × s`, `n × s`).
#[allow(clippy::too_many_arguments)]
pub fn scan_reference(
    u: &[f32],
    delta: &[f32],
    a_log: &[f32],
    b: &[f32],
    c: &[f32],
    d_skip: &[f32],
    n: usize,
    d: usize,
    s: usize,
) -> Vec<f32> {
    scan_forward(u, delta, a_log, b, c, d_skip, n, d, s).0
}

fn run_block(
    block: &BlockParams,
    inputs: &[&FeatureMap],
    build: impl FnOnce(&mut Graph<f32>, &Bound, &[Var]) -> Var,
) -> Result<FeatureMap> {
    let mut g = Graph::<f32>::new();
    let bound = Bound::block(&mut g, block, false);
    let vars: Vec<Var> = inputs.iter().map(|x| g.constant(to_tensor(x))).collect();
    let out = build(&mut g, &bound, &vars);
    let f = to_feature(g.value(out))?;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("block {} output", block.prefix)));
    }
    Ok(f)
}

fn check_channels(f: &FeatureMap, block: &BlockParams, gain: &str) -> Result<()> {
    let c = block.require(gain)?.numel();
    if f.channels() != c {
        return dim_err(format!(
            "block {} expects {c} channels, input has {}",
            block.prefix,
            f.channels()
        ));
    }
    Ok(())
}

/// Low-frequency state-space block on one feature map.
pub fn lfssb(f_low: &FeatureMap, block: &BlockParams) -> Result<FeatureMap> {
    check_channels(f_low, block, "ln.g")?;
    let prefix = block.prefix.clone();
    run_block(block, &[f_low], |g, b, v| {
        blocks::lfssb(g, &b.scope(&prefix), v[0])
    })
}

/// Attention-weighted fusion of three same-shape detail bands.
pub fn skff(h: &FeatureMap, v: &FeatureMap, d: &FeatureMap, block: &BlockParams) -> Result<FeatureMap> {
    h.check_same_dims(v, "skff h/v")?;
    h.check_same_dims(d, "skff h/d")?;
    let c = block.require("excite.b")?.numel() / 3;
    if c != h.channels() {
        return dim_err(format!("skff expects {c} channels, input has {}", h.channels()));
    }
    let prefix = block.prefix.clone();
    run_block(block, &[h, v, d], |g, b, x| {
        blocks::skff(g, &b.scope(&prefix), x[0], x[1], x[2])
    })
}

/// High-frequency enhancement guided by a same-shape low-frequency feature.
pub fn hfeb(f_high: &FeatureMap, f_low_next: &FeatureMap, block: &BlockParams) -> Result<FeatureMap> {
    f_high.check_same_dims(f_low_next, "hfeb high/low")?;
    check_channels(f_high, block, "attn.ln.g")?;
    let prefix = block.prefix.clone();
    run_block(block, &[f_high, f_low_next], |g, b, x| {
        blocks::hfeb(g, &b.scope(&prefix), x[0], x[1])
    })
}

/// Training objective on one pair: L1 between the variant's final output
/// (fused for `dwt`/`map`, raw otherwise) and `target`.
pub fn training_loss<F: Real>(state: &ModelState, input: &FeatureMap, target: &FeatureMap) -> Result<F> {
    Ok(loss_graph::<F>(state, input, target, false)?.0)
}

/// [`training_loss`] and its gradient for every parameter, keyed by name.
/// Parameters that do not influence the loss get zero gradients.
pub fn loss_and_gradients<F: Real>(
    state: &ModelState,
    input: &FeatureMap,
    target: &FeatureMap,
) -> Result<(F, BTreeMap<String, Vec<F>>)> {
    let (loss, grads) = loss_graph::<F>(state, input, target, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

type LossGrads<F> = (F, Option<BTreeMap<String, Vec<F>>>);

fn loss_graph<F: Real>(state: &ModelState, input: &FeatureMap, target: &FeatureMap, grads: bool) -> Result<LossGrads<F>> {
    let cfg = &state.config;
    check_input(input, cfg)?;
    if !input.same_dims(target) {
        return dim_err("training pair sizes differ");
    }
    let mut g = Graph::<F>::new();
    let bound = Bound::model(&mut g, state, grads);
    let x = g.constant(to_tensor(input));
    let y = g.constant(to_tensor(target));
    let trace = build_forward(&mut g, &bound, cfg, x, None);
    let loss_var = g.l1_loss(trace.output, y);
    let loss = g.value(loss_var).data[0];
    if !grads {
        return Ok((loss, None));
    }
    let mut gr = g.backward(loss_var);
    let out = state
        .params
        .iter()
        .map(|(name, p)| {
            let v = bound.var(name);
            (name.clone(), gr.take(v).unwrap_or_else(|| vec![F::zero(); p.numel()]))
        })
        .collect();
    Ok((loss, Some(out)))
}
