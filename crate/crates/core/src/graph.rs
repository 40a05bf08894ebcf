//! Tape-based reverse-mode differentiation over dense channel-last tensors.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! tape visits every node after all of its consumers. Each op stores exactly
//! what its backward rule needs (normalisation statistics, scan states,
//! argmin/argmax positions) in the node's auxiliary buffers.
//!
//! Tensors are row-major with the channel axis last. Ops that work on
//! matrices (`linear`, `matmul_*`, `softmax_rows`, ...) view a tensor as
//! `rows × last_dim`.

use crate::freqmask::{
    abs_sum_channel_mean, bilinear_taps, fuse_kernel, mean_of, minmax_kernel, upsample_bilinear,
};
use crate::real::Real;
use crate::wavelet::{haar_analysis, haar_synthesis};

const LN_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub dims: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(dims: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "tensor dims {dims:?}");
        Self { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![F::zero(); n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn last_dim(&self) -> usize {
        *self.dims.last().expect("rank >= 1")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    /// `(h, w, c)` of a rank-3 tensor.
    pub fn hwc(&self) -> (usize, usize, usize) {
        assert_eq!(self.dims.len(), 3, "expected h×w×c, got {:?}", self.dims);
        (self.dims[0], self.dims[1], self.dims[2])
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    ScaleConst(Var, f64),
    ScaleBy(Var, Var, usize),
    Linear(Var, Var, Option<Var>),
    Conv3x3(Var, Var, Var),
    DwConv3x3(Var, Var, Var),
    LayerNorm(Var, Var, Var),
    Silu(Var),
    Softplus(Var),
    SliceCh(Var, usize),
    ConcatCh(Vec<Var>),
    TransposeHw(Var),
    Dwt(Var),
    Band(Var, usize),
    Idwt([Var; 4]),
    Scan(ScanInputs),
    MatMulTn(Var, Var),
    MatMulNt(Var, Var),
    L2NormCols(Var),
    SoftmaxRows(Var),
    GlobalAvgPool(Var),
    SkffCombine([Var; 3], Var),
    AbsSumChannelMean(Vec<Var>),
    Upsample(Var),
    MeanOf(Vec<Var>),
    MinMax(Var),
    Fuse(Var, Var, Var),
    L1(Var, Var),
    Sum(Var),
}

#[derive(Clone, Copy, Debug)]
struct ScanInputs {
    u: Var,
    delta: Var,
    a_log: Var,
    b: Var,
    c: Var,
    d: Var,
}

struct Node<F> {
    value: Tensor<F>,
    op: Op,
    needs_grad: bool,
    aux: Vec<F>,
    idx: Vec<usize>,
}

/// One forward evaluation plus its differentiation tape.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op, inputs: &[Var]) -> Var {
        self.push_aux(value, op, inputs, Vec::new(), Vec::new())
    }

    fn push_aux(&mut self, value: Tensor<F>, op: Op, inputs: &[Var], aux: Vec<F>, idx: Vec<usize>) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux,
            idx,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
            aux: Vec::new(),
            idx: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is propagated into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
            aux: Vec::new(),
            idx: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        assert_eq!(x.dims, y.dims, "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p + q).collect();
        let t = Tensor::new(x.dims.clone(), data);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.val(a), self.val(b));
        assert_eq!(x.dims, y.dims, "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let t = Tensor::new(x.dims.clone(), data);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale_const(&mut self, a: Var, k: f64) -> Var {
        let x = self.val(a);
        let kf = F::lit(k);
        let t = Tensor::new(x.dims.clone(), x.data.iter().map(|&p| p * kf).collect());
        self.push(t, Op::ScaleConst(a, k), &[a])
    }

    /// Multiplies every element of `a` by the scalar `s[index]`.
    pub fn scale_by(&mut self, a: Var, s: Var, index: usize) -> Var {
        let k = self.val(s).data[index];
        let x = self.val(a);
        let t = Tensor::new(x.dims.clone(), x.data.iter().map(|&p| p * k).collect());
        self.push(t, Op::ScaleBy(a, s, index), &[a, s])
    }

    /// `x · W + b` over the last axis; `W` is `c_in × c_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xt = self.val(x);
        let wt = self.val(w);
        let cin = xt.last_dim();
        assert_eq!(wt.dims.len(), 2);
        assert_eq!(wt.dims[0], cin, "linear: input width {cin} vs weight {:?}", wt.dims);
        let cout = wt.dims[1];
        let rows = xt.rows();
        let mut out = vec![F::zero(); rows * cout];
        if let Some(b) = b {
            let bt = &self.val(b).data;
            assert_eq!(bt.len(), cout);
            for r in 0..rows {
                out[r * cout..(r + 1) * cout].copy_from_slice(bt);
            }
        }
        for r in 0..rows {
            let xr = &xt.data[r * cin..(r + 1) * cin];
            let orow = &mut out[r * cout..(r + 1) * cout];
            for (i, &xv) in xr.iter().enumerate() {
                let wr = &wt.data[i * cout..(i + 1) * cout];
                for (o, &wv) in orow.iter_mut().zip(wr) {
                    *o += xv * wv;
                }
            }
        }
        let mut dims = xt.dims.clone();
        *dims.last_mut().unwrap() = cout;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor::new(dims, out), Op::Linear(x, w, b), &inputs)
    }

    /// Zero-padded 3×3 convolution; `w` is `(9·c_in) × c_out` with taps in raster order.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xt = self.val(x);
        let (h, wd, cin) = xt.hwc();
        let wt = self.val(w);
        assert_eq!(wt.dims, vec![9 * cin, wt.dims[1]], "conv weight shape");
        let cout = wt.dims[1];
        let bt = &self.val(b).data;
        let mut out = vec![F::zero(); h * wd * cout];
        for y in 0..h {
            for xx in 0..wd {
                let o = (y * wd + xx) * cout;
                out[o..o + cout].copy_from_slice(bt);
                for (tap, (dy, dx)) in TAPS.iter().enumerate() {
                    let (sy, sx) = (y as isize + dy, xx as isize + dx);
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                        continue;
                    }
                    let si = (sy as usize * wd + sx as usize) * cin;
                    for ci in 0..cin {
                        let xv = xt.data[si + ci];
                        let wr = &wt.data[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
                        for (ov, &wv) in out[o..o + cout].iter_mut().zip(wr) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![h, wd, cout], out),
            Op::Conv3x3(x, w, b),
            &[x, w, b],
        )
    }

    /// Depthwise 3×3 convolution, zero padding. `w` is `[9, c]` (tap-major), `b` is `[c]`.
    pub fn dwconv3x3(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xt = self.val(x);
        let (h, wd, c) = xt.hwc();
        let wt = self.val(w);
        assert_eq!(wt.dims, vec![9, c], "depthwise weight shape");
        let bt = &self.val(b).data;
        let mut out = vec![F::zero(); h * wd * c];
        for y in 0..h {
            for xx in 0..wd {
                let o = (y * wd + xx) * c;
                out[o..o + c].copy_from_slice(bt);
                for (tap, (dy, dx)) in TAPS.iter().enumerate() {
                    let (sy, sx) = (y as isize + dy, xx as isize + dx);
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                        continue;
                    }
                    let si = (sy as usize * wd + sx as usize) * c;
                    let wr = &wt.data[tap * c..(tap + 1) * c];
                    for k in 0..c {
                        out[o + k] += xt.data[si + k] * wr[k];
                    }
                }
            }
        }
        self.push(Tensor::new(vec![h, wd, c], out), Op::DwConv3x3(x, w, b), &[x, w, b])
    }

    /// Layer normalisation over the last axis with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xt = self.val(x);
        let c = xt.last_dim();
        let rows = xt.rows();
        let (gt, bt) = (&self.val(gain).data, &self.val(bias).data);
        assert_eq!(gt.len(), c);
        let inv_c = F::one() / F::lit(c as f64);
        let eps = F::lit(LN_EPS);
        let mut out = vec![F::zero(); rows * c];
        let mut stats = Vec::with_capacity(2 * rows);
        for r in 0..rows {
            let xr = &xt.data[r * c..(r + 1) * c];
            let mean = xr.iter().copied().sum::<F>() * inv_c;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_c;
            let rstd = F::one() / (var + eps).sqrt();
            for k in 0..c {
                out[r * c + k] = (xr[k] - mean) * rstd * gt[k] + bt[k];
            }
            stats.push(mean);
            stats.push(rstd);
        }
        let dims = xt.dims.clone();
        self.push_aux(
            Tensor::new(dims, out),
            Op::LayerNorm(x, gain, bias),
            &[x, gain, bias],
            stats,
            Vec::new(),
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let data = xt.data.iter().map(|&v| v * sigmoid(v)).collect();
        let t = Tensor::new(xt.dims.clone(), data);
        self.push(t, Op::Silu(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let data = xt.data.iter().map(|&v| softplus(v)).collect();
        let t = Tensor::new(xt.dims.clone(), data);
        self.push(t, Op::Softplus(x), &[x])
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xt = self.val(x);
        let c = xt.last_dim();
        assert!(start + len <= c);
        let data = xt
            .data
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut dims = xt.dims.clone();
        *dims.last_mut().unwrap() = len;
        self.push(Tensor::new(dims, data), Op::SliceCh(x, start), &[x])
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let rows = self.val(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.val(p).last_dim()).collect();
        for &p in parts {
            assert_eq!(self.val(p).rows(), rows, "concat row mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &wdt) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.val(p).data[r * wdt..(r + 1) * wdt]);
            }
        }
        let mut dims = self.val(parts[0]).dims.clone();
        *dims.last_mut().unwrap() = total;
        self.push(Tensor::new(dims, data), Op::ConcatCh(parts.to_vec()), parts)
    }

    /// Swaps the two spatial axes of an `h × w × c` tensor.
    pub fn transpose_hw(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let (h, w, c) = xt.hwc();
        let data = transpose_hwc(&xt.data, h, w, c);
        self.push(Tensor::new(vec![w, h, c], data), Op::TransposeHw(x), &[x])
    }

    /// Haar analysis; the result is `4 × h/2 × w/2 × c` in band order ll, lh, hl, hh.
    pub fn dwt(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let (h, w, c) = xt.hwc();
        assert!(h % 2 == 0 && w % 2 == 0, "dwt needs even dimensions");
        let bands = haar_analysis(&xt.data, h, w, c);
        let data = bands.concat();
        self.push(Tensor::new(vec![4, h / 2, w / 2, c], data), Op::Dwt(x), &[x])
    }

    pub fn band(&mut self, x: Var, k: usize) -> Var {
        let xt = self.val(x);
        assert_eq!(xt.dims.len(), 4);
        let (h, w, c) = (xt.dims[1], xt.dims[2], xt.dims[3]);
        let n = h * w * c;
        let data = xt.data[k * n..(k + 1) * n].to_vec();
        self.push(Tensor::new(vec![h, w, c], data), Op::Band(x, k), &[x])
    }

    pub fn idwt(&mut self, ll: Var, lh: Var, hl: Var, hh: Var) -> Var {
        let (h, w, c) = self.val(ll).hwc();
        for v in [lh, hl, hh] {
            assert_eq!(self.val(v).dims, vec![h, w, c], "idwt band mismatch");
        }
        let data = haar_synthesis(
            &self.val(ll).data,
            &self.val(lh).data,
            &self.val(hl).data,
            &self.val(hh).data,
            h,
            w,
            c,
        );
        self.push(
            Tensor::new(vec![2 * h, 2 * w, c], data),
            Op::Idwt([ll, lh, hl, hh]),
            &[ll, lh, hl, hh],
        )
    }

    /// Selective state-space scan along the row axis of `u` (`n × d`).
    ///
    /// `delta` is `n × d` (already positive), `a_log` is `d × s` with
    /// `A = -exp(a_log)`, `b`/`c` are `n × s`, `d_skip` has `d` entries.
    /// Zero-order hold: `Ā = exp(Δ A)`, `B̄ = (Ā - 1) / A · B`.
    pub fn scan(&mut self, u: Var, delta: Var, a_log: Var, b: Var, c: Var, d_skip: Var) -> Var {
        let ut = self.val(u);
        let d = ut.last_dim();
        let n = ut.rows();
        let s = self.val(a_log).last_dim();
        assert_eq!(self.val(a_log).len(), d * s);
        assert_eq!(self.val(delta).len(), n * d);
        assert_eq!(self.val(b).len(), n * s);
        assert_eq!(self.val(c).len(), n * s);
        assert_eq!(self.val(d_skip).len(), d);
        let (y, states) = scan_forward(
            &ut.data,
            &self.val(delta).data,
            &self.val(a_log).data,
            &self.val(b).data,
            &self.val(c).data,
            &self.val(d_skip).data,
            n,
            d,
            s,
        );
        let dims = ut.dims.clone();
        self.push_aux(
            Tensor::new(dims, y),
            Op::Scan(ScanInputs {
                u,
                delta,
                a_log,
                b,
                c,
                d: d_skip,
            }),
            &[u, delta, a_log, b, c, d_skip],
            states,
            Vec::new(),
        )
    }

    /// `Aᵀ B` for `A: n × p`, `B: n × q`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.val(a), self.val(b));
        let (n, p, q) = (at.rows(), at.last_dim(), bt.last_dim());
        assert_eq!(bt.rows(), n);
        let mut out = vec![F::zero(); p * q];
        for t in 0..n {
            let ar = &at.data[t * p..(t + 1) * p];
            let br = &bt.data[t * q..(t + 1) * q];
            for (i, &av) in ar.iter().enumerate() {
                for (o, &bv) in out[i * q..(i + 1) * q].iter_mut().zip(br) {
                    *o += av * bv;
                }
            }
        }
        self.push(Tensor::new(vec![p, q], out), Op::MatMulTn(a, b), &[a, b])
    }

    /// `A Bᵀ` for `A: n × q`, `B: p × q`; keeps the leading dims of `A`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.val(a), self.val(b));
        let (n, q, p) = (at.rows(), at.last_dim(), bt.rows());
        assert_eq!(bt.last_dim(), q);
        let mut out = vec![F::zero(); n * p];
        for t in 0..n {
            let ar = &at.data[t * q..(t + 1) * q];
            for j in 0..p {
                let br = &bt.data[j * q..(j + 1) * q];
                out[t * p + j] = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
            }
        }
        let mut dims = at.dims.clone();
        *dims.last_mut().unwrap() = p;
        self.push(Tensor::new(dims, out), Op::MatMulNt(a, b), &[a, b])
    }

    /// Normalises every column (last-axis index) to unit L2 norm over the rows.
    pub fn l2_normalize_columns(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let (n, c) = (xt.rows(), xt.last_dim());
        let mut norms = vec![F::zero(); c];
        for t in 0..n {
            for k in 0..c {
                let v = xt.data[t * c + k];
                norms[k] += v * v;
            }
        }
        let eps = F::lit(L2_EPS);
        for v in &mut norms {
            *v = v.sqrt().max(eps);
        }
        let data = xt
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v / norms[i % c])
            .collect();
        let dims = xt.dims.clone();
        self.push_aux(Tensor::new(dims, data), Op::L2NormCols(x), &[x], norms, Vec::new())
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let c = xt.last_dim();
        let mut data = Vec::with_capacity(xt.len());
        for row in xt.data.chunks_exact(c) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let e: Vec<F> = row.iter().map(|&v| (v - m).exp()).collect();
            let z = e.iter().copied().sum::<F>();
            data.extend(e.into_iter().map(|v| v / z));
        }
        let dims = xt.dims.clone();
        self.push(Tensor::new(dims, data), Op::SoftmaxRows(x), &[x])
    }

    /// Spatial mean, `h × w × c → c`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let (c, n) = (xt.last_dim(), xt.rows());
        let mut out = vec![F::zero(); c];
        for row in xt.data.chunks_exact(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = F::one() / F::lit(n as f64);
        for o in &mut out {
            *o *= inv;
        }
        self.push(Tensor::new(vec![c], out), Op::GlobalAvgPool(x), &[x])
    }

    /// Softmax over the three branches per channel, then a weighted sum.
    /// `logits` holds `3·c` values laid out branch-major.
    pub fn skff_combine(&mut self, branches: [Var; 3], logits: Var) -> Var {
        let c = self.val(branches[0]).last_dim();
        let dims = self.val(branches[0]).dims.clone();
        for &b in &branches[1..] {
            assert_eq!(self.val(b).dims, dims, "skff branch mismatch");
        }
        let weights = branch_softmax(&self.val(logits).data, c);
        let (x0, x1, x2) = (
            &self.val(branches[0]).data,
            &self.val(branches[1]).data,
            &self.val(branches[2]).data,
        );
        let data = (0..x0.len())
            .map(|i| {
                let k = i % c;
                weights[k] * x0[i] + weights[c + k] * x1[i] + weights[2 * c + k] * x2[i]
            })
            .collect();
        self.push_aux(
            Tensor::new(dims, data),
            Op::SkffCombine(branches, logits),
            &[branches[0], branches[1], branches[2], logits],
            weights,
            Vec::new(),
        )
    }

    /// Per pixel, channel mean of the summed absolute values of `bands`; `h × w × 1`.
    pub fn abs_sum_channel_mean(&mut self, bands: &[Var]) -> Var {
        let (h, w, c) = self.val(bands[0]).hwc();
        let slices: Vec<&[F]> = bands.iter().map(|&b| self.val(b).data.as_slice()).collect();
        let data = abs_sum_channel_mean(&slices, h, w, c);
        self.push(
            Tensor::new(vec![h, w, 1], data),
            Op::AbsSumChannelMean(bands.to_vec()),
            bands,
        )
    }

    /// Half-pixel bilinear resize of an `h × w × 1` map.
    pub fn upsample(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (h, w, c) = self.val(x).hwc();
        assert_eq!(c, 1, "upsample works on single-channel maps");
        let data = upsample_bilinear(&self.val(x).data, h, w, oh, ow);
        self.push(Tensor::new(vec![oh, ow, 1], data), Op::Upsample(x), &[x])
    }

    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        let maps: Vec<Vec<F>> = parts.iter().map(|&p| self.val(p).data.clone()).collect();
        let dims = self.val(parts[0]).dims.clone();
        let data = mean_of(&maps);
        self.push(Tensor::new(dims, data), Op::MeanOf(parts.to_vec()), parts)
    }

    pub fn minmax_normalize(&mut self, x: Var) -> Var {
        let xt = self.val(x);
        let (data, arg) = minmax_kernel(&xt.data);
        let idx = arg.map(|(lo, hi)| vec![lo, hi]).unwrap_or_default();
        let dims = xt.dims.clone();
        self.push_aux(Tensor::new(dims, data), Op::MinMax(x), &[x], Vec::new(), idx)
    }

    /// `clamp(m·banded + (1 - m)·restored, 0, 1)` with an `h × w × 1` mask.
    pub fn fuse(&mut self, banded: Var, restored: Var, mask: Var) -> Var {
        let (h, w, c) = self.val(banded).hwc();
        assert_eq!(self.val(restored).dims, vec![h, w, c]);
        assert_eq!(self.val(mask).dims, vec![h, w, 1]);
        let data = fuse_kernel(
            &self.val(banded).data,
            &self.val(restored).data,
            &self.val(mask).data,
            c,
        );
        self.push(
            Tensor::new(vec![h, w, c], data),
            Op::Fuse(banded, restored, mask),
            &[banded, restored, mask],
        )
    }

    /// Mean absolute difference, a scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Var {
        let (p, t) = (self.val(pred), self.val(target));
        assert_eq!(p.dims, t.dims, "l1 shape mismatch");
        let n = F::lit(p.len() as f64);
        let sum: F = p.data.iter().zip(&t.data).map(|(&a, &b)| (a - b).abs()).sum();
        self.push(Tensor::new(vec![1], vec![sum / n]), Op::L1(pred, target), &[pred, target])
    }

    /// Sum of all elements, a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: F = self.val(x).data.iter().copied().sum();
        self.push(Tensor::new(vec![1], vec![total]), Op::Sum(x), &[x])
    }

    /// Reverse sweep from a scalar output. Returns one gradient slot per node.
    pub fn backward(&self, out: Var) -> Gradients<F> {
        assert_eq!(self.val(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![F::one()]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.backprop(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<F>>], v: Var) -> Option<&'a mut Vec<F>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn backprop(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(grads, v) {
                        add_into(ga, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (&self.val(*a).data, &self.val(*b).data);
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * x[i];
                    }
                }
            }
            Op::ScaleConst(a, k) => {
                let kf = F::lit(*k);
                if let Some(ga) = self.acc(grads, *a) {
                    for (o, &v) in ga.iter_mut().zip(g) {
                        *o += v * kf;
                    }
                }
            }
            Op::ScaleBy(a, s, index) => {
                let k = self.val(*s).data[*index];
                if let Some(ga) = self.acc(grads, *a) {
                    for (o, &v) in ga.iter_mut().zip(g) {
                        *o += v * k;
                    }
                }
                let x = &self.val(*a).data;
                let dot: F = x.iter().zip(g).map(|(&p, &q)| p * q).sum();
                if let Some(gs) = self.acc(grads, *s) {
                    gs[*index] += dot;
                }
            }
            Op::Linear(x, w, b) => {
                let (xt, wt) = (self.val(*x), self.val(*w));
                let (cin, cout, rows) = (xt.last_dim(), wt.dims[1], xt.rows());
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in g.chunks_exact(cout) {
                            add_into(gb, row);
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    for r in 0..rows {
                        let gr = &g[r * cout..(r + 1) * cout];
                        for i in 0..cin {
                            let xv = xt.data[r * cin + i];
                            for (o, &gv) in gw[i * cout..(i + 1) * cout].iter_mut().zip(gr) {
                                *o += xv * gv;
                            }
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..rows {
                        let gr = &g[r * cout..(r + 1) * cout];
                        for i in 0..cin {
                            let wr = &wt.data[i * cout..(i + 1) * cout];
                            let s: F = wr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            gx[r * cin + i] += s;
                        }
                    }
                }
            }
            Op::DwConv3x3(x, w, b) => {
                let xt = self.val(*x);
                let (h, wd, c) = xt.hwc();
                let wt = self.val(*w);
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks_exact(c) {
                        add_into(gb, row);
                    }
                }
                let want_w = self.nodes[w.0].needs_grad;
                let want_x = self.nodes[x.0].needs_grad;
                let mut gw = vec![F::zero(); if want_w { wt.len() } else { 0 }];
                let mut gx = vec![F::zero(); if want_x { xt.len() } else { 0 }];
                for y in 0..h {
                    for xx in 0..wd {
                        let o = (y * wd + xx) * c;
                        for (tap, (dy, dx)) in TAPS.iter().enumerate() {
                            let (sy, sx) = (y as isize + dy, xx as isize + dx);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            let si = (sy as usize * wd + sx as usize) * c;
                            for k in 0..c {
                                if want_w {
                                    gw[tap * c + k] += xt.data[si + k] * g[o + k];
                                }
                                if want_x {
                                    gx[si + k] += wt.data[tap * c + k] * g[o + k];
                                }
                            }
                        }
                    }
                }
                if let Some(t) = self.acc(grads, *w) {
                    add_into(t, &gw);
                }
                if let Some(t) = self.acc(grads, *x) {
                    add_into(t, &gx);
                }
            }
            Op::Conv3x3(x, w, b) => {
                let xt = self.val(*x);
                let (h, wd, cin) = xt.hwc();
                let wt = self.val(*w);
                let cout = wt.dims[1];
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks_exact(cout) {
                        add_into(gb, row);
                    }
                }
                let want_w = self.nodes[w.0].needs_grad;
                let want_x = self.nodes[x.0].needs_grad;
                let mut gw = vec![F::zero(); if want_w { wt.len() } else { 0 }];
                let mut gx = vec![F::zero(); if want_x { xt.len() } else { 0 }];
                for y in 0..h {
                    for xx in 0..wd {
                        let gr = &g[(y * wd + xx) * cout..(y * wd + xx + 1) * cout];
                        for (tap, (dy, dx)) in TAPS.iter().enumerate() {
                            let (sy, sx) = (y as isize + dy, xx as isize + dx);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            let si = (sy as usize * wd + sx as usize) * cin;
                            for ci in 0..cin {
                                let wi = (tap * cin + ci) * cout;
                                if want_w {
                                    let xv = xt.data[si + ci];
                                    for (o, &gv) in gw[wi..wi + cout].iter_mut().zip(gr) {
                                        *o += xv * gv;
                                    }
                                }
                                if want_x {
                                    let s: F = wt.data[wi..wi + cout]
                                        .iter()
                                        .zip(gr)
                                        .map(|(&a, &b)| a * b)
                                        .sum();
                                    gx[si + ci] += s;
                                }
                            }
                        }
                    }
                }
                if let Some(t) = self.acc(grads, *w) {
                    add_into(t, &gw);
                }
                if let Some(t) = self.acc(grads, *x) {
                    add_into(t, &gx);
                }
            }
            Op::LayerNorm(x, gain, bias) => {
                let xt = self.val(*x);
                let c = xt.last_dim();
                let rows = xt.rows();
                let gn = &self.val(*gain).data;
                let stats = &node.aux;
                let inv_c = F::one() / F::lit(c as f64);
                let mut ggain = vec![F::zero(); c];
                let mut gbias = vec![F::zero(); c];
                let mut gx = vec![F::zero(); xt.len()];
                let mut xhat = vec![F::zero(); c];
                let mut gxhat = vec![F::zero(); c];
                for r in 0..rows {
                    let (mean, rstd) = (stats[2 * r], stats[2 * r + 1]);
                    let gr = &g[r * c..(r + 1) * c];
                    let (mut m1, mut m2) = (F::zero(), F::zero());
                    for k in 0..c {
                        xhat[k] = (xt.data[r * c + k] - mean) * rstd;
                        gxhat[k] = gr[k] * gn[k];
                        ggain[k] += gr[k] * xhat[k];
                        gbias[k] += gr[k];
                        m1 += gxhat[k];
                        m2 += gxhat[k] * xhat[k];
                    }
                    m1 *= inv_c;
                    m2 *= inv_c;
                    for k in 0..c {
                        gx[r * c + k] = rstd * (gxhat[k] - m1 - xhat[k] * m2);
                    }
                }
                if let Some(t) = self.acc(grads, *gain) {
                    add_into(t, &ggain);
                }
                if let Some(t) = self.acc(grads, *bias) {
                    add_into(t, &gbias);
                }
                if let Some(t) = self.acc(grads, *x) {
                    add_into(t, &gx);
                }
            }
            Op::Silu(x) => {
                let xs = &self.val(*x).data;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        let s = sigmoid(xs[i]);
                        gx[i] += g[i] * s * (F::one() + xs[i] * (F::one() - s));
                    }
                }
            }
            Op::Softplus(x) => {
                let xs = &self.val(*x).data;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * sigmoid(xs[i]);
                    }
                }
            }
            Op::SliceCh(x, start) => {
                let c = self.val(*x).last_dim();
                let len = node.value.last_dim();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, row) in g.chunks_exact(len).enumerate() {
                        add_into(&mut gx[r * c + start..r * c + start + len], row);
                    }
                }
            }
            Op::ConcatCh(parts) => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let wdt = self.val(p).last_dim();
                    if let Some(gp) = self.acc(grads, p) {
                        for (r, row) in g.chunks_exact(total).enumerate() {
                            add_into(&mut gp[r * wdt..(r + 1) * wdt], &row[offset..offset + wdt]);
                        }
                    }
                    offset += wdt;
                }
            }
            Op::TransposeHw(x) => {
                let (h, w, c) = node.value.hwc();
                let back = transpose_hwc(g, h, w, c);
                if let Some(gx) = self.acc(grads, *x) {
                    add_into(gx, &back);
                }
            }
            Op::Dwt(x) => {
                let (h, w, c) = (node.value.dims[1], node.value.dims[2], node.value.dims[3]);
                let n = h * w * c;
                let back = haar_synthesis(
                    &g[..n],
                    &g[n..2 * n],
                    &g[2 * n..3 * n],
                    &g[3 * n..],
                    h,
                    w,
                    c,
                );
                if let Some(gx) = self.acc(grads, *x) {
                    add_into(gx, &back);
                }
            }
            Op::Band(x, k) => {
                let n = g.len();
                if let Some(gx) = self.acc(grads, *x) {
                    add_into(&mut gx[k * n..(k + 1) * n], g);
                }
            }
            Op::Idwt(bands) => {
                let (h2, w2, c) = node.value.hwc();
                let parts = haar_analysis(g, h2, w2, c);
                for (v, part) in bands.iter().zip(parts.iter()) {
                    if let Some(gv) = self.acc(grads, *v) {
                        add_into(gv, part);
                    }
                }
            }
            Op::Scan(inp) => self.scan_backward(node, inp, g, grads),
            Op::MatMulTn(a, b) => {
                let (at, bt) = (self.val(*a), self.val(*b));
                let (n, p, q) = (at.rows(), at.last_dim(), bt.last_dim());
                if let Some(ga) = self.acc(grads, *a) {
                    for t in 0..n {
                        let br = &bt.data[t * q..(t + 1) * q];
                        for i in 0..p {
                            let gr = &g[i * q..(i + 1) * q];
                            ga[t * p + i] += gr.iter().zip(br).map(|(&x, &y)| x * y).sum::<F>();
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for t in 0..n {
                        let ar = &at.data[t * p..(t + 1) * p];
                        let brow = &mut gb[t * q..(t + 1) * q];
                        for (i, &av) in ar.iter().enumerate() {
                            for (o, &gv) in brow.iter_mut().zip(&g[i * q..(i + 1) * q]) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            Op::MatMulNt(a, b) => {
                let (at, bt) = (self.val(*a), self.val(*b));
                let (n, q, p) = (at.rows(), at.last_dim(), bt.rows());
                if let Some(ga) = self.acc(grads, *a) {
                    for t in 0..n {
                        let arow = &mut ga[t * q..(t + 1) * q];
                        for j in 0..p {
                            let gv = g[t * p + j];
                            for (o, &bv) in arow.iter_mut().zip(&bt.data[j * q..(j + 1) * q]) {
                                *o += gv * bv;
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for t in 0..n {
                        let ar = &at.data[t * q..(t + 1) * q];
                        for j in 0..p {
                            let gv = g[t * p + j];
                            for (o, &av) in gb[j * q..(j + 1) * q].iter_mut().zip(ar) {
                                *o += gv * av;
                            }
                        }
                    }
                }
            }
            Op::L2NormCols(x) => {
                let y = &node.value.data;
                let c = node.value.last_dim();
                let norms = &node.aux;
                let mut dots = vec![F::zero(); c];
                for i in 0..g.len() {
                    dots[i % c] += g[i] * y[i];
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        let k = i % c;
                        gx[i] += (g[i] - y[i] * dots[k]) / norms[k];
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value.data;
                let c = node.value.last_dim();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, (yr, gr)) in y.chunks_exact(c).zip(g.chunks_exact(c)).enumerate() {
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for k in 0..c {
                            gx[r * c + k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let xt = self.val(*x);
                let (c, n) = (xt.last_dim(), xt.rows());
                let inv = F::one() / F::lit(n as f64);
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += g[i % c] * inv;
                    }
                }
            }
            Op::SkffCombine(branches, logits) => {
                let c = node.value.last_dim();
                let wts = &node.aux;
                let mut gw = vec![F::zero(); 3 * c];
                for (k, &bv) in branches.iter().enumerate() {
                    let xb = &self.val(bv).data;
                    for i in 0..g.len() {
                        gw[k * c + i % c] += g[i] * xb[i];
                    }
                    if let Some(gb) = self.acc(grads, bv) {
                        for i in 0..g.len() {
                            gb[i] += g[i] * wts[k * c + i % c];
                        }
                    }
                }
                if let Some(gl) = self.acc(grads, *logits) {
                    for ch in 0..c {
                        let dot = (0..3).map(|k| wts[k * c + ch] * gw[k * c + ch]).sum::<F>();
                        for k in 0..3 {
                            gl[k * c + ch] += wts[k * c + ch] * (gw[k * c + ch] - dot);
                        }
                    }
                }
            }
            Op::AbsSumChannelMean(bands) => {
                let c = self.val(bands[0]).last_dim();
                let inv = F::one() / F::lit(c as f64);
                for &bv in bands {
                    let xb = &self.val(bv).data;
                    if let Some(gb) = self.acc(grads, bv) {
                        for i in 0..xb.len() {
                            gb[i] += g[i / c] * inv * sign(xb[i]);
                        }
                    }
                }
            }
            Op::Upsample(x) => {
                let (h, w, _) = self.val(*x).hwc();
                let (oh, ow, _) = node.value.hwc();
                let ty = bilinear_taps::<F>(h, oh);
                let tx = bilinear_taps::<F>(w, ow);
                if let Some(gx) = self.acc(grads, *x) {
                    let one = F::one();
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let gv = g[oy * ow + ox];
                            gx[y0 * w + x0] += gv * (one - fy) * (one - fx);
                            gx[y0 * w + x1] += gv * (one - fy) * fx;
                            gx[y1 * w + x0] += gv * fy * (one - fx);
                            gx[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
            }
            Op::MeanOf(parts) => {
                let inv = F::one() / F::lit(parts.len() as f64);
                for &p in parts {
                    if let Some(gp) = self.acc(grads, p) {
                        for (o, &v) in gp.iter_mut().zip(g) {
                            *o += v * inv;
                        }
                    }
                }
            }
            Op::MinMax(x) => {
                if node.idx.is_empty() {
                    return;
                }
                let (lo, hi) = (node.idx[0], node.idx[1]);
                let s = &self.val(*x).data;
                let y = &node.value.data;
                let range = s[hi] - s[lo];
                if let Some(gx) = self.acc(grads, *x) {
                    let (mut g_min, mut g_max) = (F::zero(), F::zero());
                    for i in 0..g.len() {
                        gx[i] += g[i] / range;
                        g_min += g[i] * (y[i] - F::one());
                        g_max -= g[i] * y[i];
                    }
                    gx[lo] += g_min / range;
                    gx[hi] += g_max / range;
                }
            }
            Op::Fuse(banded, restored, mask) => {
                let (_, _, c) = node.value.hwc();
                let (b, r, m) = (
                    &self.val(*banded).data,
                    &self.val(*restored).data,
                    &self.val(*mask).data,
                );
                let one = F::one();
                let live: Vec<bool> = (0..g.len())
                    .map(|i| {
                        let w = m[i / c];
                        let pre = w * b[i] + (one - w) * r[i];
                        pre >= F::zero() && pre <= one
                    })
                    .collect();
                if let Some(gb) = self.acc(grads, *banded) {
                    for i in 0..g.len() {
                        if live[i] {
                            gb[i] += g[i] * m[i / c];
                        }
                    }
                }
                if let Some(gr) = self.acc(grads, *restored) {
                    for i in 0..g.len() {
                        if live[i] {
                            gr[i] += g[i] * (one - m[i / c]);
                        }
                    }
                }
                if let Some(gm) = self.acc(grads, *mask) {
                    for i in 0..g.len() {
                        if live[i] {
                            gm[i / c] += g[i] * (b[i] - r[i]);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::L1(pred, target) => {
                let (p, t) = (&self.val(*pred).data, &self.val(*target).data);
                let k = g[0] / F::lit(p.len() as f64);
                if let Some(gp) = self.acc(grads, *pred) {
                    for i in 0..p.len() {
                        gp[i] += k * sign(p[i] - t[i]);
                    }
                }
                if let Some(gt) = self.acc(grads, *target) {
                    for i in 0..p.len() {
                        gt[i] -= k * sign(p[i] - t[i]);
                    }
                }
            }
        }
    }

    fn scan_backward(&self, node: &Node<F>, inp: &ScanInputs, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let u = &self.val(inp.u).data;
        let delta = &self.val(inp.delta).data;
        let a_log = &self.val(inp.a_log).data;
        let bm = &self.val(inp.b).data;
        let cm = &self.val(inp.c).data;
        let dskip = &self.val(inp.d).data;
        let d = node.value.last_dim();
        let n = node.value.rows();
        let s = a_log.len() / d;
        let (hs, abars) = node.aux.split_at(n * d * s);

        let a: Vec<F> = a_log.iter().map(|&v| -v.exp()).collect();
        let mut gu = vec![F::zero(); n * d];
        let mut gdelta = vec![F::zero(); n * d];
        let mut ga = vec![F::zero(); d * s];
        let mut gb = vec![F::zero(); n * s];
        let mut gc = vec![F::zero(); n * s];
        let mut gd = vec![F::zero(); d];
        let mut carry = vec![F::zero(); d * s];
        let one = F::one();
        for t in (0..n).rev() {
            for di in 0..d {
                let gy = g[t * d + di];
                let ut = u[t * d + di];
                let dt = delta[t * d + di];
                gd[di] += gy * ut;
                let mut gut = gy * dskip[di];
                let mut gdt = F::zero();
                for si in 0..s {
                    let ds = di * s + si;
                    let st = t * d * s + ds;
                    let h = hs[st];
                    let h_prev = if t > 0 { hs[st - d * s] } else { F::zero() };
                    let abar = abars[st];
                    let av = a[ds];
                    let bt = bm[t * s + si];
                    gc[t * s + si] += gy * h;
                    let gh = gy * cm[t * s + si] + carry[ds];
                    let k = (abar - one) / av;
                    gut += gh * k * bt;
                    gb[t * s + si] += gh * k * ut;
                    let gk = gh * bt * ut;
                    let g_abar = gh * h_prev + gk / av;
                    gdt += g_abar * av * abar;
                    ga[ds] += g_abar * dt * abar - gk * (abar - one) / (av * av);
                    carry[ds] = gh * abar;
                }
                gu[t * d + di] += gut;
                gdelta[t * d + di] += gdt;
            }
        }
        for (x, &av) in ga.iter_mut().zip(&a) {
            *x *= av;
        }
        for (v, buf) in [
            (inp.u, gu),
            (inp.delta, gdelta),
            (inp.a_log, ga),
            (inp.b, gb),
            (inp.c, gc),
            (inp.d, gd),
        ] {
            if let Some(t) = self.acc(grads, v) {
                add_into(t, &buf);
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads[v.0].take()
    }
}

const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[inline]
fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
fn sign<F: Real>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

#[inline]
pub(crate) fn softplus<F: Real>(v: F) -> F {
    if v > F::lit(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn transpose_hwc<F: Real>(src: &[F], h: usize, w: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            let si = (y * w + x) * c;
            let di = (x * h + y) * c;
            out[di..di + c].copy_from_slice(&src[si..si + c]);
        }
    }
    out
}

fn branch_softmax<F: Real>(logits: &[F], c: usize) -> Vec<F> {
    assert_eq!(logits.len(), 3 * c, "skff logits must hold 3·c values");
    let mut w = vec![F::zero(); 3 * c];
    for ch in 0..c {
        let l = [logits[ch], logits[c + ch], logits[2 * c + ch]];
        let m = l[0].max(l[1]).max(l[2]);
        let e = l.map(|v| (v - m).exp());
        let z = e[0] + e[1] + e[2];
        for k in 0..3 {
            w[k * c + ch] = e[k] / z;
        }
    }
    w
}

/// Forward recurrence. Returns `(y, aux)` where `aux` holds all hidden states
/// followed by all `Ā` values, each laid out `n × d × s`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_forward<F: Real>(
    u: &[F],
    delta: &[F],
    a_log: &[F],
    b: &[F],
    c: &[F],
    d_skip: &[F],
    n: usize,
    d: usize,
    s: usize,
) -> (Vec<F>, Vec<F>) {
    let a: Vec<F> = a_log.iter().map(|&v| -v.exp()).collect();
    let mut y = vec![F::zero(); n * d];
    let mut aux = vec![F::zero(); 2 * n * d * s];
    let (hs, abars) = aux.split_at_mut(n * d * s);
    let mut h = vec![F::zero(); d * s];
    let one = F::one();
    for t in 0..n {
        let bt = &b[t * s..(t + 1) * s];
        let ct = &c[t * s..(t + 1) * s];
        for di in 0..d {
            let ut = u[t * d + di];
            let dt = delta[t * d + di];
            let mut acc = d_skip[di] * ut;
            for si in 0..s {
                let ds = di * s + si;
                let av = a[ds];
                let abar = (dt * av).exp();
                let hv = abar * h[ds] + (abar - one) / av * bt[si] * ut;
                h[ds] = hv;
                acc += ct[si] * hv;
                hs[t * d * s + ds] = hv;
                abars[t * d * s + ds] = abar;
            }
            y[t * d + di] = acc;
        }
    }
    (y, aux)
}
