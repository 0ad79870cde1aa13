//! Windowed multi-head self-attention with relative-position biases.
//!
//! Tokens of one image form an `H×W` grid. The grid is split into `w×w`
//! windows from the top-left; when `w` does not divide the grid the last
//! windows are partial, which is the same as zero-padding bottom/right and
//! masking the padded keys out of the softmax. Each head owns a bias table
//! of `(2w−1)²` entries indexed by the relative offset `(Δy, Δx)` between
//! query and key.

/// Geometry of one attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
}

impl AttnShape {
    pub fn dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn table_side(&self) -> usize {
        2 * self.window - 1
    }

    /// Row indices of every window, image by image, top-left first.
    pub fn windows(&self) -> Vec<Vec<usize>> {
        let ws = self.window;
        let mut out = Vec::new();
        for b in 0..self.n {
            for wy in (0..self.h).step_by(ws) {
                for wx in (0..self.w).step_by(ws) {
                    let mut toks = Vec::with_capacity(ws * ws);
                    for y in wy..(wy + ws).min(self.h) {
                        for x in wx..(wx + ws).min(self.w) {
                            toks.push((b * self.h + y) * self.w + x);
                        }
                    }
                    out.push(toks);
                }
            }
        }
        out
    }

    fn rel_index(&self, a: usize, b: usize) -> usize {
        let (ya, xa) = ((a / self.w) % self.h, a % self.w);
        let (yb, xb) = ((b / self.w) % self.h, b % self.w);
        let s = self.table_side();
        let dy = ya + self.window - 1 - yb;
        let dx = xa + self.window - 1 - xb;
        dy * s + dx
    }
}

/// Softmax weights of every window and head, in [`AttnShape::windows`]
/// order; each block is `L×L` for a window of `L` tokens.
pub struct AttnCache {
    probs: Vec<f64>,
}

/// Attention on projected tokens. `qkv` is `rows × 3D` with head `h` owning
/// columns `[3hE, 3hE+E)` for queries, then keys, then values. Returns
/// `rows × D` with heads concatenated.
pub fn window_attention(
    shape: &AttnShape,
    qkv: &[f64],
    bias: Option<&[f64]>,
) -> (Vec<f64>, AttnCache) {
    let (e, d) = (shape.head_dim, shape.dim());
    let scale = 1.0 / (e as f64).sqrt();
    let tsz = shape.table_side() * shape.table_side();
    let rows = shape.n * shape.h * shape.w;
    let mut out = vec![0.0; rows * d];
    let mut probs = Vec::new();
    let mut logits = Vec::new();
    for toks in shape.windows() {
        let l = toks.len();
        let rel: Vec<usize> = match bias {
            Some(_) => toks
                .iter()
                .flat_map(|&a| toks.iter().map(move |&b| (a, b)))
                .map(|(a, b)| shape.rel_index(a, b))
                .collect(),
            None => Vec::new(),
        };
        for head in 0..shape.heads {
            let qo = head * 3 * e;
            let (ko, vo) = (qo + e, qo + 2 * e);
            logits.clear();
            logits.resize(l * l, 0.0);
            for (i, &a) in toks.iter().enumerate() {
                let q = &qkv[a * 3 * d + qo..a * 3 * d + qo + e];
                for (j, &b) in toks.iter().enumerate() {
                    let k = &qkv[b * 3 * d + ko..b * 3 * d + ko + e];
                    let mut s = scale * q.iter().zip(k).map(|(x, y)| x * y).sum::<f64>();
                    if let Some(t) = bias {
                        s += t[head * tsz + rel[i * l + j]];
                    }
                    logits[i * l + j] = s;
                }
            }
            for (i, &a) in toks.iter().enumerate() {
                let row = &mut logits[i * l..(i + 1) * l];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
                let o = &mut out[a * d + head * e..a * d + (head + 1) * e];
                for (j, &b) in toks.iter().enumerate() {
                    let v = &qkv[b * 3 * d + vo..b * 3 * d + vo + e];
                    let p = row[j];
                    o.iter_mut().zip(v).for_each(|(x, y)| *x += p * y);
                }
            }
            probs.extend_from_slice(&logits);
        }
    }
    (out, AttnCache { probs })
}

/// Returns `d qkv` and accumulates the bias-table gradient into `dbias`.
pub fn window_attention_backward(
    shape: &AttnShape,
    qkv: &[f64],
    cache: &AttnCache,
    dout: &[f64],
    mut dbias: Option<&mut [f64]>,
) -> Vec<f64> {
    let (e, d) = (shape.head_dim, shape.dim());
    let scale = 1.0 / (e as f64).sqrt();
    let tsz = shape.table_side() * shape.table_side();
    let mut dqkv = vec![0.0; qkv.len()];
    let mut offset = 0;
    let mut dlogit = Vec::new();
    for toks in shape.windows() {
        let l = toks.len();
        for head in 0..shape.heads {
            let p = &cache.probs[offset..offset + l * l];
            offset += l * l;
            let qo = head * 3 * e;
            let (ko, vo) = (qo + e, qo + 2 * e);
            dlogit.clear();
            dlogit.resize(l * l, 0.0);
            for (i, &a) in toks.iter().enumerate() {
                let go = &dout[a * d + head * e..a * d + (head + 1) * e];
                // dp_ij = go · v_j ; dv_j += p_ij go
                let mut dot = 0.0;
                for (j, &b) in toks.iter().enumerate() {
                    let v = &qkv[b * 3 * d + vo..b * 3 * d + vo + e];
                    let dp: f64 = go.iter().zip(v).map(|(x, y)| x * y).sum();
                    dlogit[i * l + j] = dp;
                    dot += p[i * l + j] * dp;
                    let pij = p[i * l + j];
                    let dv = &mut dqkv[b * 3 * d + vo..b * 3 * d + vo + e];
                    dv.iter_mut().zip(go).for_each(|(x, y)| *x += pij * y);
                }
                for j in 0..l {
                    dlogit[i * l + j] = p[i * l + j] * (dlogit[i * l + j] - dot);
                }
            }
            for (i, &a) in toks.iter().enumerate() {
                for (j, &b) in toks.iter().enumerate() {
                    let g = dlogit[i * l + j];
                    if let Some(db) = dbias.as_deref_mut() {
                        db[head * tsz + shape.rel_index(a, b)] += g;
                    }
                    let gs = g * scale;
                    for t in 0..e {
                        let qa = qkv[a * 3 * d + qo + t];
                        let kb = qkv[b * 3 * d + ko + t];
                        dqkv[a * 3 * d + qo + t] += gs * kb;
                        dqkv[b * 3 * d + ko + t] += gs * qa;
                    }
                }
            }
        }
    }
    dqkv
}

/// Resamples per-head `s×s` tables to `t×t` with bilinear interpolation at
/// half-pixel centers. `s == t` returns the input unchanged.
pub fn interpolate_bias(table: &[f64], heads: usize, s: usize, t: usize) -> Vec<f64> {
    if s == t {
        return table.to_vec();
    }
    let axis: Vec<(usize, usize, f64)> = (0..t)
        .map(|o| {
            let src = ((o as f64 + 0.5) * s as f64 / t as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(s - 1);
            let hi = (lo + 1).min(s - 1);
            (lo, hi, src - lo as f64)
        })
        .collect();
    let mut out = vec![0.0; heads * t * t];
    for h in 0..heads {
        let src = &table[h * s * s..(h + 1) * s * s];
        for (oy, &(y0, y1, fy)) in axis.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in axis.iter().enumerate() {
                let top = (1.0 - fx) * src[y0 * s + x0] + fx * src[y0 * s + x1];
                let bottom = (1.0 - fx) * src[y1 * s + x0] + fx * src[y1 * s + x1];
                out[h * t * t + oy * t + ox] = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
    out
}
