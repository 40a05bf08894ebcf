//! Graph builders for the network's blocks.
//!
//! Each builder appends its computation to a [`Graph`] and reads weights
//! through a [`Scope`], which resolves `<prefix>.<local>` names to bound
//! parameter nodes.

use std::collections::HashMap;

use crate::graph::{Graph, Tensor, Var};
use crate::net::params::{BlockParams, ModelState, ParamTensor};
use crate::real::Real;

/// Parameter nodes bound into one graph, keyed by full name.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    /// Binds every array as a trainable leaf (`trainable`) or a constant.
    pub fn new<'a, F: Real>(
        g: &mut Graph<F>,
        params: impl IntoIterator<Item = (&'a String, &'a ParamTensor)>,
        trainable: bool,
    ) -> Self {
        let mut vars = HashMap::new();
        for (name, p) in params {
            let t = Tensor::new(p.dims.clone(), p.data.iter().map(|&v| F::from_f32(v)).collect());
            let v = if trainable { g.param(t) } else { g.constant(t) };
            vars.insert(name.clone(), v);
        }
        Self { vars }
    }

    pub fn model<F: Real>(g: &mut Graph<F>, m: &ModelState, trainable: bool) -> Self {
        Self::new(g, m.params.iter(), trainable)
    }

    pub fn block<F: Real>(g: &mut Graph<F>, b: &BlockParams, trainable: bool) -> Self {
        Self::new(g, b.tensors.iter(), trainable)
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn vars(&self) -> &HashMap<String, Var> {
        &self.vars
    }

    pub fn scope<'a>(&'a self, prefix: &str) -> Scope<'a> {
        Scope {
            bound: self,
            prefix: prefix.to_string(),
        }
    }
}

pub struct Scope<'a> {
    bound: &'a Bound,
    prefix: String,
}

impl Scope<'_> {
    pub fn p(&self, local: &str) -> Var {
        self.bound.var(&format!("{}.{local}", self.prefix))
    }

    pub fn sub(&self, child: &str) -> Scope<'_> {
        Scope {
            bound: self.bound,
            prefix: format!("{}.{child}", self.prefix),
        }
    }
}

fn dense<F: Real>(g: &mut Graph<F>, s: &Scope, x: Var, name: &str) -> Var {
    g.linear(x, s.p(&format!("{name}.w")), Some(s.p(&format!("{name}.b"))))
}

/// Projects a layer-normalised input to the scan's input-dependent Δ, B and C.
pub struct ScanProjections {
    pub delta: Var,
    pub b: Var,
    pub c: Var,
}

pub fn scan_projections<F: Real>(g: &mut Graph<F>, s: &Scope, u: Var) -> ScanProjections {
    let pre = dense(g, s, u, "dt");
    let delta = g.softplus(pre);
    let b = g.linear(u, s.p("bproj.w"), None);
    let c = g.linear(u, s.p("cproj.w"), None);
    ScanProjections { delta, b, c }
}

/// Selective scan over the raster order of an `h × w × d` map.
pub fn selective_scan<F: Real>(g: &mut Graph<F>, s: &Scope, u: Var) -> Var {
    let pr = scan_projections(g, s, u);
    g.scan(u, pr.delta, s.p("a_log"), pr.b, pr.c, s.p("d"))
}

/// Vision state-space module: input projection, depthwise 3×3 convolution,
/// scans over the raster and the transposed raster order (averaged), output
/// projection.
pub fn vss<F: Real>(g: &mut Graph<F>, s: &Scope, x: Var) -> Var {
    let pre = dense(g, s, x, "in");
    let local = g.dwconv3x3(pre, s.p("conv.w"), s.p("conv.b"));
    let u = g.silu(local);
    let forward = selective_scan(g, s, u);
    let ut = g.transpose_hw(u);
    let cross_t = selective_scan(g, s, ut);
    let cross = g.transpose_hw(cross_t);
    let sum = g.add(forward, cross);
    let avg = g.scale_const(sum, 0.5);
    dense(g, s, avg, "out")
}

/// Gated feed-forward: expand, split into value and gate, `value ⊙ silu(gate)`, project back.
pub fn gated_ffn<F: Real>(g: &mut Graph<F>, s: &Scope, x: Var) -> Var {
    let hidden = g.linear(x, s.p("w1"), Some(s.p("b1")));
    let half = g.value(hidden).last_dim() / 2;
    let value = g.slice_channels(hidden, 0, half);
    let gate = g.slice_channels(hidden, half, half);
    let act = g.silu(gate);
    let prod = g.mul(value, act);
    g.linear(prod, s.p("w2"), Some(s.p("b2")))
}

/// Low-frequency block:
/// `r = S(LN(x)) + β·x`, `out = G(r) + γ·r`.
pub fn lfssb<F: Real>(g: &mut Graph<F>, s: &Scope, x: Var) -> Var {
    let ln = g.layer_norm(x, s.p("ln.g"), s.p("ln.b"));
    let scanned = vss(g, &s.sub("ssm"), ln);
    let bx = g.scale_by(x, s.p("beta"), 0);
    let r = g.add(scanned, bx);
    let ff = gated_ffn(g, &s.sub("ffn"), r);
    let gr = g.scale_by(r, s.p("gamma"), 0);
    g.add(ff, gr)
}

/// Selective kernel fusion of the three detail bands into one feature map.
pub fn skff<F: Real>(g: &mut Graph<F>, s: &Scope, h: Var, v: Var, d: Var) -> Var {
    let hv = g.add(h, v);
    let all = g.add(hv, d);
    let pooled = g.global_avg_pool(all);
    let squeezed = dense(g, s, pooled, "squeeze");
    let z = g.silu(squeezed);
    let logits = dense(g, s, z, "excite");
    g.skff_combine([h, v, d], logits)
}

/// Channel-transposed cross attention: queries from `high`, keys and values
/// from `low`; attention runs over channels, per head.
pub fn frequency_attention<F: Real>(g: &mut Graph<F>, s: &Scope, high: Var, low: Var) -> Var {
    let q = dense(g, s, high, "q");
    let k = dense(g, s, low, "k");
    let v = dense(g, s, low, "v");
    let c = g.value(q).last_dim();
    let temp = s.p("temp");
    let heads = g.value(temp).len();
    let ch = c / heads;
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let qh = g.slice_channels(q, hd * ch, ch);
        let kh = g.slice_channels(k, hd * ch, ch);
        let vh = g.slice_channels(v, hd * ch, ch);
        let qn = g.l2_normalize_columns(qh);
        let kn = g.l2_normalize_columns(kh);
        let logits = g.matmul_tn(qn, kn);
        let scaled = g.scale_by(logits, temp, hd);
        let attn = g.softmax_rows(scaled);
        outs.push(g.matmul_nt(vh, attn));
    }
    let merged = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_channels(&outs)
    };
    dense(g, s, merged, "o")
}

/// Low-frequency-conditioned gated feed-forward.
pub fn frequency_correction<F: Real>(g: &mut Graph<F>, s: &Scope, x: Var, low: Var) -> Var {
    let cat = g.concat_channels(&[x, low]);
    gated_ffn(g, s, cat)
}

/// High-frequency block:
/// `f̃ = M(LN(h), low) + h`, `out = C(LN(f̃), low) + f̃`.
pub fn hfeb<F: Real>(g: &mut Graph<F>, s: &Scope, high: Var, low: Var) -> Var {
    let a = s.sub("attn");
    let ln = g.layer_norm(high, a.p("ln.g"), a.p("ln.b"));
    let m = frequency_attention(g, &a, ln, low);
    let tilde = g.add(m, high);
    let f = s.sub("ffn");
    let ln2 = g.layer_norm(tilde, f.p("ln.g"), f.p("ln.b"));
    let corr = frequency_correction(g, &f, ln2, low);
    g.add(corr, tilde)
}
