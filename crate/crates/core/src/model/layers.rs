//! The layer vocabulary with hand-written backward passes.
//!
//! Feature maps are channels-last (`N×H×W×C`), so a token sequence is just
//! a map viewed as `rows × C`.

use super::params::{BufferId, Buffers, GradSink, Layout, ParamId, ParamKind, Weights};
use crate::aug::PcgState;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Map {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn rows(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn with_data(&self, c: usize, data: Vec<f64>) -> Map {
        debug_assert_eq!(data.len(), self.rows() * c);
        Map {
            n: self.n,
            h: self.h,
            w: self.w,
            c,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a training
/// forward pass; folded into the running averages afterwards.
#[derive(Debug, Clone)]
pub struct BnStat {
    pub mean_buf: BufferId,
    pub var_buf: BufferId,
    pub mean: Vec<f64>,
    /// Unbiased.
    pub var: Vec<f64>,
}

/// Per-pass state threaded through the forward.
pub struct Ctx<'a> {
    pub mode: Mode,
    pub buffers: &'a Buffers,
    pub stats: Vec<BnStat>,
    /// Source of stochastic-depth masks; `None` disables dropping.
    pub drop_rng: Option<&'a mut PcgState>,
}

impl<'a> Ctx<'a> {
    pub fn eval(buffers: &'a Buffers) -> Self {
        Ctx {
            mode: Mode::Eval,
            buffers,
            stats: Vec::new(),
            drop_rng: None,
        }
    }

    pub fn train(buffers: &'a Buffers, drop_rng: Option<&'a mut PcgState>) -> Self {
        Ctx {
            mode: Mode::Train,
            buffers,
            stats: Vec::new(),
            drop_rng,
        }
    }

    /// Per-sample keep scales for a residual branch with drop rate `p`:
    /// `0` for dropped samples, `1/(1-p)` for kept ones. `None` means
    /// the branch is always kept unscaled.
    pub fn drop_mask(&mut self, n: usize, p: f64) -> Option<Vec<f64>> {
        if self.mode != Mode::Train || p <= 0.0 {
            return None;
        }
        let rng = self.drop_rng.as_deref_mut()?;
        Some(
            (0..n)
                .map(|_| if rng.unit() < p { 0.0 } else { 1.0 / (1.0 - p) })
                .collect(),
        )
    }
}

/// `y[r] += scale[sample(r)] · branch[r]`, or plain addition without a mask.
pub fn add_branch(y: &mut [f64], branch: &[f64], mask: Option<&[f64]>, rows_per_sample: usize, c: usize) {
    match mask {
        None => y.iter_mut().zip(branch).for_each(|(a, b)| *a += b),
        Some(m) => {
            for (i, (a, b)) in y.iter_mut().zip(branch).enumerate() {
                *a += m[i / (rows_per_sample * c)] * b;
            }
        }
    }
}

pub fn scale_branch(dy: &[f64], mask: Option<&[f64]>, rows_per_sample: usize, c: usize) -> Vec<f64> {
    match mask {
        None => dy.to_vec(),
        Some(m) => dy
            .iter()
            .enumerate()
            .map(|(i, d)| m[i / (rows_per_sample * c)] * d)
            .collect(),
    }
}

/// `x (rows×k) · Wᵀ (k×out)` with `w` stored `out×k`.
fn matmul_nt(x: &[f64], w: &[f64], k: usize, out: usize) -> Vec<f64> {
    let rows = x.len() / k;
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        let yr = &mut y[r * out..(r + 1) * out];
        for (o, yv) in yr.iter_mut().enumerate() {
            let wr = &w[o * k..(o + 1) * k];
            *yv = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    y
}

/// Backward of [`matmul_nt`]: returns `dx` and accumulates `dw`.
fn matmul_nt_backward(x: &[f64], w: &[f64], dy: &[f64], k: usize, out: usize, dw: &mut [f64]) -> Vec<f64> {
    let rows = x.len() / k;
    let mut dx = vec![0.0; rows * k];
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        let dxr = &mut dx[r * k..(r + 1) * k];
        for o in 0..out {
            let g = dy[r * out + o];
            if g == 0.0 {
                continue;
            }
            let wr = &w[o * k..(o + 1) * k];
            let dwr = &mut dw[o * k..(o + 1) * k];
            for i in 0..k {
                dxr[i] += g * wr[i];
                dwr[i] += g * xr[i];
            }
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(layout: &mut Layout, name: &str, inp: usize, out: usize, bias: bool) -> Self {
        Linear {
            weight: layout.add(format!("{name}.weight"), vec![out, inp], ParamKind::LinearWeight),
            bias: bias.then(|| layout.add(format!("{name}.bias"), vec![out], ParamKind::Bias)),
            inp,
            out,
        }
    }

    pub fn forward(&self, p: &Weights, x: &[f64]) -> Vec<f64> {
        let mut y = matmul_nt(x, p.get(self.weight), self.inp, self.out);
        if let Some(b) = self.bias {
            let b = p.get(b);
            for row in y.chunks_exact_mut(self.out) {
                row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
            }
        }
        y
    }

    pub fn backward(&self, p: &Weights, g: &mut GradSink, x: &[f64], dy: &[f64]) -> Vec<f64> {
        if let Some(b) = self.bias {
            let db = g.get(b);
            for row in dy.chunks_exact(self.out) {
                db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
        matmul_nt_backward(x, p.get(self.weight), dy, self.inp, self.out, g.get(self.weight))
    }
}

/// 2-D convolution without bias (always followed by batch norm).
/// Weights are `Cout × Cin/groups × k × k`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: &mut Layout,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Self {
        assert!(cin % groups == 0 && cout % groups == 0);
        Conv {
            weight: layout.add(
                format!("{name}.weight"),
                vec![cout, cin / groups, k, k],
                ParamKind::ConvWeight,
            ),
            cin,
            cout,
            k,
            stride,
            pad,
            groups,
        }
    }

    pub fn out_size(&self, s: usize) -> usize {
        (s + 2 * self.pad - self.k) / self.stride + 1
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0 && self.groups == 1
    }

    pub fn forward(&self, p: &Weights, x: &Map) -> Map {
        debug_assert_eq!(x.c, self.cin);
        let wt = p.get(self.weight);
        if self.pointwise() {
            return x.with_data(self.cout, matmul_nt(&x.data, wt, self.cin, self.cout));
        }
        let (ho, wo) = (self.out_size(x.h), self.out_size(x.w));
        let (cig, cog, kk) = (self.cin / self.groups, self.cout / self.groups, self.k * self.k);
        let mut y = Map::zeros(x.n, ho, wo, self.cout);
        for b in 0..x.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let ybase = ((b * ho + oy) * wo + ox) * self.cout;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let xbase = ((b * x.h + iy as usize) * x.w + ix as usize) * self.cin;
                            let kpos = ky * self.k + kx;
                            for oc in 0..self.cout {
                                let g = oc / cog;
                                let wbase = oc * cig * kk + kpos;
                                let xs = &x.data[xbase + g * cig..xbase + (g + 1) * cig];
                                let mut acc = 0.0;
                                for (icl, xv) in xs.iter().enumerate() {
                                    acc += xv * wt[wbase + icl * kk];
                                }
                                y.data[ybase + oc] += acc;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &Weights, gs: &mut GradSink, x: &Map, dy: &Map) -> Map {
        let wt = p.get(self.weight);
        if self.pointwise() {
            let dx = matmul_nt_backward(&x.data, wt, &dy.data, self.cin, self.cout, gs.get(self.weight));
            return x.with_data(self.cin, dx);
        }
        let dw = gs.get(self.weight);
        let (ho, wo) = (dy.h, dy.w);
        let (cig, cog, kk) = (self.cin / self.groups, self.cout / self.groups, self.k * self.k);
        let mut dx = Map::zeros(x.n, x.h, x.w, self.cin);
        for b in 0..x.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let ybase = ((b * ho + oy) * wo + ox) * self.cout;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let xbase = ((b * x.h + iy as usize) * x.w + ix as usize) * self.cin;
                            let kpos = ky * self.k + kx;
                            for oc in 0..self.cout {
                                let gy = dy.data[ybase + oc];
                                if gy == 0.0 {
                                    continue;
                                }
                                let g = oc / cog;
                                let wbase = oc * cig * kk + kpos;
                                for icl in 0..cig {
                                    let xi = xbase + g * cig + icl;
                                    dx.data[xi] += gy * wt[wbase + icl * kk];
                                    dw[wbase + icl * kk] += gy * x.data[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub c: usize,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(layout: &mut Layout, buffers: &mut Buffers, name: &str, c: usize) -> Self {
        BatchNorm {
            weight: layout.add(format!("{name}.weight"), vec![c], ParamKind::NormScale),
            bias: layout.add(format!("{name}.bias"), vec![c], ParamKind::NormShift),
            running_mean: buffers.add(format!("{name}.running_mean"), vec![0.0; c]),
            running_var: buffers.add(format!("{name}.running_var"), vec![1.0; c]),
            c,
        }
    }

    /// Training mode normalizes with the batch statistics (biased variance)
    /// and logs them; evaluation uses the running averages.
    pub fn forward(&self, p: &Weights, x: Map, ctx: &mut Ctx) -> (Map, NormCache) {
        let c = self.c;
        let m = x.rows();
        let (mean, var) = match ctx.mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for row in x.data.chunks_exact(c) {
                    mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0.0; c];
                for row in x.data.chunks_exact(c) {
                    for j in 0..c {
                        var[j] += (row[j] - mean[j]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= m as f64);
                let unbiased = if m > 1 {
                    var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect()
                } else {
                    var.clone()
                };
                ctx.stats.push(BnStat {
                    mean_buf: self.running_mean,
                    var_buf: self.running_var,
                    mean: mean.clone(),
                    var: unbiased,
                });
                (mean, var)
            }
            Mode::Eval => (
                ctx.buffers.get(self.running_mean).to_vec(),
                ctx.buffers.get(self.running_var).to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let (gamma, beta) = (p.get(self.weight), p.get(self.bias));
        let mut xhat = x.data;
        let mut y = vec![0.0; xhat.len()];
        for (xr, yr) in xhat.chunks_exact_mut(c).zip(y.chunks_exact_mut(c)) {
            for j in 0..c {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
                yr[j] = gamma[j] * xr[j] + beta[j];
            }
        }
        let out = Map {
            n: x.n,
            h: x.h,
            w: x.w,
            c,
            data: y,
        };
        (
            out,
            NormCache {
                xhat,
                inv_std,
                batch_stats: ctx.mode == Mode::Train,
            },
        )
    }

    pub fn backward(&self, p: &Weights, g: &mut GradSink, cache: &NormCache, dy: &Map) -> Map {
        let c = self.c;
        let m = dy.rows() as f64;
        let gamma = p.get(self.weight);
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (dr, xr) in dy.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] += dr[j];
                sum_dy_xhat[j] += dr[j] * xr[j];
            }
        }
        g.get(self.weight).iter_mut().zip(&sum_dy_xhat).for_each(|(a, v)| *a += v);
        g.get(self.bias).iter_mut().zip(&sum_dy).for_each(|(a, v)| *a += v);
        let mut dx = vec![0.0; dy.data.len()];
        for ((dxr, dr), xr) in dx
            .chunks_exact_mut(c)
            .zip(dy.data.chunks_exact(c))
            .zip(cache.xhat.chunks_exact(c))
        {
            for j in 0..c {
                let s = gamma[j] * cache.inv_std[j];
                dxr[j] = if cache.batch_stats {
                    s * (dr[j] - sum_dy[j] / m - xr[j] * sum_dy_xhat[j] / m)
                } else {
                    s * dr[j]
                };
            }
        }
        dy.with_data(c, dx)
    }
}

/// Folds logged batch statistics into the running averages.
pub fn commit_stats(buffers: &mut Buffers, stats: &[BnStat]) {
    for s in stats {
        let mean = buffers.get_mut(s.mean_buf);
        mean.iter_mut()
            .zip(&s.mean)
            .for_each(|(r, b)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
        let var = buffers.get_mut(s.var_buf);
        var.iter_mut()
            .zip(&s.var)
            .for_each(|(r, b)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
    }
}

/// Convolution followed by batch norm.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

pub struct ConvBnCache {
    input: Map,
    norm: NormCache,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: &mut Layout,
        buffers: &mut Buffers,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Self {
        ConvBn {
            conv: Conv::new(layout, &format!("{name}.conv"), cin, cout, k, stride, k / 2, groups),
            bn: BatchNorm::new(layout, buffers, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward(&self, p: &Weights, x: Map, ctx: &mut Ctx) -> (Map, ConvBnCache) {
        let y = self.conv.forward(p, &x);
        let (y, norm) = self.bn.forward(p, y, ctx);
        (y, ConvBnCache { input: x, norm })
    }

    pub fn backward(&self, p: &Weights, g: &mut GradSink, cache: &ConvBnCache, dy: &Map) -> Map {
        let d = self.bn.backward(p, g, &cache.norm, dy);
        self.conv.backward(p, g, &cache.input, &d)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c: usize,
}

impl LayerNorm {
    pub fn new(layout: &mut Layout, name: &str, c: usize) -> Self {
        LayerNorm {
            weight: layout.add(format!("{name}.weight"), vec![c], ParamKind::NormScale),
            bias: layout.add(format!("{name}.bias"), vec![c], ParamKind::NormShift),
            c,
        }
    }

    pub fn forward(&self, p: &Weights, x: &[f64]) -> (Vec<f64>, NormCache) {
        let c = self.c;
        let (gamma, beta) = (p.get(self.weight), p.get(self.bias));
        let rows = x.len() / c;
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let xr = &x[r * c..(r + 1) * c];
            let mean = xr.iter().sum::<f64>() / c as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (xr[j] - mean) * is;
                xhat[r * c + j] = h;
                y[r * c + j] = gamma[j] * h + beta[j];
            }
        }
        (
            y,
            NormCache {
                xhat,
                inv_std,
                batch_stats: true,
            },
        )
    }

    pub fn backward(&self, p: &Weights, g: &mut GradSink, cache: &NormCache, dy: &[f64]) -> Vec<f64> {
        let c = self.c;
        let gamma = p.get(self.weight);
        let rows = dy.len() / c;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dx = vec![0.0; dy.len()];
        for r in 0..rows {
            let dr = &dy[r * c..(r + 1) * c];
            let xr = &cache.xhat[r * c..(r + 1) * c];
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in 0..c {
                dgamma[j] += dr[j] * xr[j];
                dbeta[j] += dr[j];
                let gj = dr[j] * gamma[j];
                s1 += gj;
                s2 += gj * xr[j];
            }
            let is = cache.inv_std[r];
            for j in 0..c {
                let gj = dr[j] * gamma[j];
                dx[r * c + j] = is * (gj - s1 / c as f64 - xr[j] * s2 / c as f64);
            }
        }
        g.get(self.weight).iter_mut().zip(&dgamma).for_each(|(a, v)| *a += v);
        g.get(self.bias).iter_mut().zip(&dbeta).for_each(|(a, v)| *a += v);
        dx
    }
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Exact (erf-based) GELU.
pub fn gelu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 0.5 * v * (1.0 + libm::erf(v * INV_SQRT2))).collect()
}

pub fn gelu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    let inv_sqrt_2pi = 0.5 * std::f64::consts::FRAC_2_SQRT_PI * INV_SQRT2;
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let cdf = 0.5 * (1.0 + libm::erf(v * INV_SQRT2));
            let pdf = inv_sqrt_2pi * libm::exp(-0.5 * v * v);
            d * (cdf + v * pdf)
        })
        .collect()
}

pub fn gelu_map(x: &Map) -> Map {
    x.with_data(x.c, gelu(&x.data))
}

pub fn gelu_map_backward(x: &Map, dy: &Map) -> Map {
    x.with_data(x.c, gelu_backward(&x.data, &dy.data))
}
