//! The TinyViT network: build, forward, backward.
//!
//! ```text
//! patch embed   conv3×3/2 → BN → GELU → conv3×3/2 → BN          R/4
//! stage 1       γN1 × MBConv(γR)                                R/4
//! downsample    1×1 → BN → GELU → dw3×3/2 → BN → GELU → 1×1 → BN
//! stages 2–4    γNi × [x += attn(LN x); x = dwconv3×3+BN(x); x += mlp(LN x)]
//! head          mean pool → LN → linear
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{window_attention, window_attention_backward, AttnCache, AttnShape};
use super::config::ModelConfig;
use super::layers::*;
use super::params::{Buffers, GradSink, Layout, ParamId, ParamKind, Weights};
use crate::aug::PcgState;
use crate::error::{Error, Result};
use crate::image::AugImage;

/// A batch of planar `3×R×R` images.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub resolution: usize,
    /// `N×3×R×R`.
    pub data: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, resolution: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * 3 * resolution * resolution {
            return Err(Error::InputShapeMismatch(format!(
                "{} values for {n} images of 3x{resolution}x{resolution}",
                data.len()
            )));
        }
        Ok(Batch {
            n,
            resolution,
            data,
        })
    }

    pub fn from_images(images: &[AugImage]) -> Result<Self> {
        let res = images.first().map_or(0, |i| i.size);
        if images.iter().any(|i| i.size != res) {
            return Err(Error::InputShapeMismatch("images of different sizes".into()));
        }
        let data = images
            .iter()
            .flat_map(|i| i.data.iter().map(|&v| v as f64))
            .collect();
        Batch::new(images.len(), res, data)
    }

    fn to_map(&self) -> Map {
        let r = self.resolution;
        let mut m = Map::zeros(self.n, r, r, 3);
        for b in 0..self.n {
            for c in 0..3 {
                for y in 0..r {
                    for x in 0..r {
                        m.data[((b * r + y) * r + x) * 3 + c] = self.data[((b * 3 + c) * r + y) * r + x];
                    }
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
struct PatchEmbed {
    conv1: ConvBn,
    conv2: ConvBn,
}

#[derive(Debug, Clone)]
struct MbConv {
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: ConvBn,
    drop: f64,
}

#[derive(Debug, Clone)]
struct PatchMerging {
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: ConvBn,
}

#[derive(Debug, Clone)]
struct VitBlock {
    norm1: LayerNorm,
    qkv: Linear,
    bias: Option<ParamId>,
    proj: Linear,
    heads: usize,
    head_dim: usize,
    window: usize,
    local_conv: ConvBn,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    drop: f64,
}

#[derive(Debug, Clone)]
struct Arch {
    patch_embed: PatchEmbed,
    stage1: Vec<MbConv>,
    downsample: Vec<PatchMerging>,
    stages: Vec<Vec<VitBlock>>,
    norm_head: LayerNorm,
    head: Linear,
}

/// A built model: configuration, parameter layout and values, buffers.
#[derive(Debug, Clone)]
pub struct TinyVit {
    config: ModelConfig,
    layout: Layout,
    theta: Vec<f64>,
    buffers: Buffers,
    arch: Arch,
}

fn make_arch(config: &ModelConfig) -> (Arch, Layout, Buffers) {
    let c = &config.contraction;
    let d = c.embed_dims;
    let mut l = Layout::default();
    let mut b = Buffers::default();
    let total_blocks: usize = c.depths.iter().sum();
    let drop_at = |i: usize| {
        if total_blocks > 1 {
            config.drop_path_rate * i as f64 / (total_blocks - 1) as f64
        } else {
            0.0
        }
    };
    let patch_embed = PatchEmbed {
        conv1: ConvBn::new(&mut l, &mut b, "patch_embed.conv1", 3, d[0] / 2, 3, 2, 1),
        conv2: ConvBn::new(&mut l, &mut b, "patch_embed.conv2", d[0] / 2, d[0], 3, 2, 1),
    };
    let hid = c.mbconv_hidden();
    let mut block_index = 0;
    let stage1 = (0..c.depths[0])
        .map(|j| {
            let p = format!("layers.0.blocks.{j}");
            let blk = MbConv {
                conv1: ConvBn::new(&mut l, &mut b, &format!("{p}.conv1"), d[0], hid, 1, 1, 1),
                conv2: ConvBn::new(&mut l, &mut b, &format!("{p}.conv2"), hid, hid, 3, 1, hid),
                conv3: ConvBn::new(&mut l, &mut b, &format!("{p}.conv3"), hid, d[0], 1, 1, 1),
                drop: drop_at(block_index),
            };
            block_index += 1;
            blk
        })
        .collect();
    let mut downsample = Vec::new();
    let mut stages = Vec::new();
    for s in 1..4 {
        let p = format!("layers.{}.downsample", s - 1);
        let (din, dout) = (d[s - 1], d[s]);
        downsample.push(PatchMerging {
            conv1: ConvBn::new(&mut l, &mut b, &format!("{p}.conv1"), din, dout, 1, 1, 1),
            conv2: ConvBn::new(&mut l, &mut b, &format!("{p}.conv2"), dout, dout, 3, 2, dout),
            conv3: ConvBn::new(&mut l, &mut b, &format!("{p}.conv3"), dout, dout, 1, 1, 1),
        });
        let dim = d[s];
        let heads = c.num_heads(s);
        let window = c.window_sizes[s - 1];
        let mlp = c.mlp_hidden(s);
        let blocks = (0..c.depths[s])
            .map(|j| {
                let p = format!("layers.{s}.blocks.{j}");
                let norm1 = LayerNorm::new(&mut l, &format!("{p}.attn.norm"), dim);
                let qkv = Linear::new(&mut l, &format!("{p}.attn.qkv"), dim, 3 * dim, true);
                let side = 2 * window - 1;
                let bias = config.attention_bias.then(|| {
                    l.add(
                        format!("{p}.attn.attention_biases"),
                        vec![heads, side, side],
                        ParamKind::AttentionBias,
                    )
                });
                let proj = Linear::new(&mut l, &format!("{p}.attn.proj"), dim, dim, true);
                let local_conv =
                    ConvBn::new(&mut l, &mut b, &format!("{p}.local_conv"), dim, dim, 3, 1, dim);
                let norm2 = LayerNorm::new(&mut l, &format!("{p}.mlp.norm"), dim);
                let fc1 = Linear::new(&mut l, &format!("{p}.mlp.fc1"), dim, mlp, true);
                let fc2 = Linear::new(&mut l, &format!("{p}.mlp.fc2"), mlp, dim, true);
                let blk = VitBlock {
                    norm1,
                    qkv,
                    bias,
                    proj,
                    heads,
                    head_dim: c.head_dim,
                    window,
                    local_conv,
                    norm2,
                    fc1,
                    fc2,
                    drop: drop_at(block_index),
                };
                block_index += 1;
                blk
            })
            .collect();
        stages.push(blocks);
    }
    let norm_head = LayerNorm::new(&mut l, "norm_head", d[3]);
    let head = Linear::new(&mut l, "head", d[3], config.num_classes, true);
    (
        Arch {
            patch_embed,
            stage1,
            downsample,
            stages,
            norm_head,
            head,
        },
        l,
        b,
    )
}

struct PatchEmbedCache {
    c1: ConvBnCache,
    a1: Map,
    c2: ConvBnCache,
}

struct MbConvCache {
    c1: ConvBnCache,
    a1: Map,
    c2: ConvBnCache,
    a2: Map,
    c3: ConvBnCache,
    sum: Map,
    mask: Option<Vec<f64>>,
}

struct MergeCache {
    c1: ConvBnCache,
    a1: Map,
    c2: ConvBnCache,
    a2: Map,
    c3: ConvBnCache,
}

struct VitCache {
    n1: NormCache,
    xn: Vec<f64>,
    qkv: Vec<f64>,
    attn: AttnCache,
    att: Vec<f64>,
    mask1: Option<Vec<f64>>,
    conv: ConvBnCache,
    n2: NormCache,
    xn2: Vec<f64>,
    h1: Vec<f64>,
    a1: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

/// Everything a training forward pass keeps for the backward pass.
pub struct Tape {
    embed: PatchEmbedCache,
    stage1: Vec<MbConvCache>,
    merges: Vec<MergeCache>,
    stages: Vec<Vec<VitCache>>,
    final_shape: (usize, usize, usize, usize),
    head_norm: NormCache,
    pooled_norm: Vec<f64>,
    /// Batch statistics of every batch-norm layer in forward order.
    pub bn_stats: Vec<BnStat>,
    /// `(H, W, C)` of each stage's output.
    pub stage_shapes: Vec<(usize, usize, usize)>,
}

impl TinyVit {
    /// Builds the model with freshly initialized parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (arch, layout, buffers) = make_arch(config);
        let theta = layout.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(TinyVit {
            config: config.clone(),
            layout,
            theta,
            buffers,
            arch,
        })
    }

    /// Reassembles a model from stored parameters and buffers.
    pub fn from_parts(config: &ModelConfig, theta: Vec<f64>, buffers: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let (arch, layout, mut bufs) = make_arch(config);
        if theta.len() != layout.total {
            return Err(Error::ModelFile(format!(
                "{} parameters for a layout of {}",
                theta.len(),
                layout.total
            )));
        }
        if buffers.len() != bufs.data.len()
            || buffers.iter().zip(&bufs.data).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ModelFile("buffer shapes do not match the config".into()));
        }
        bufs.data = buffers;
        Ok(TinyVit {
            config: config.clone(),
            layout,
            theta,
            buffers: bufs,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn buffers(&self) -> &Buffers {
        &self.buffers
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Parameter values of the named tensor.
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|s| &self.theta[s.range()])
    }

    /// Inference: batch norm uses running statistics. Returns `N×C` logits.
    pub fn forward(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut ctx = Ctx::eval(&self.buffers);
        Ok(self.run(&self.theta, batch, &mut ctx)?.0)
    }

    /// Forward pass at an arbitrary parameter vector, keeping the tape.
    pub fn forward_train(
        &self,
        theta: &[f64],
        batch: &Batch,
        mode: Mode,
        drop_rng: Option<&mut PcgState>,
    ) -> Result<(Vec<f64>, Tape)> {
        let mut ctx = match mode {
            Mode::Train => Ctx::train(&self.buffers, drop_rng),
            Mode::Eval => Ctx::eval(&self.buffers),
        };
        let (logits, mut tape) = self.run(theta, batch, &mut ctx)?;
        tape.bn_stats = ctx.stats;
        Ok((logits, tape))
    }

    /// Folds a training pass's batch statistics into the running averages.
    pub fn commit_batch_stats(&mut self, tape: &Tape) {
        commit_stats(&mut self.buffers, &tape.bn_stats);
    }

    fn run(&self, theta: &[f64], batch: &Batch, ctx: &mut Ctx) -> Result<(Vec<f64>, Tape)> {
        if batch.resolution != self.config.resolution {
            return Err(Error::InputShapeMismatch(format!(
                "model expects {r}x{r} inputs, got {s}x{s}",
                r = self.config.resolution,
                s = batch.resolution
            )));
        }
        if theta.len() != self.layout.total {
            return Err(Error::InputShapeMismatch("parameter vector length".into()));
        }
        let p = Weights {
            layout: &self.layout,
            theta,
        };
        let a = &self.arch;
        let x = batch.to_map();
        let mut stage_shapes = Vec::new();

        let (y, c1) = a.patch_embed.conv1.forward(&p, x, ctx);
        let g = gelu_map(&y);
        let (mut x, c2) = a.patch_embed.conv2.forward(&p, g, ctx);
        let embed = PatchEmbedCache { c1, a1: y, c2 };

        let mut stage1 = Vec::new();
        for blk in &a.stage1 {
            let (y, cache) = mbconv_forward(blk, &p, x, ctx);
            stage1.push(cache);
            x = y;
        }
        stage_shapes.push((x.h, x.w, x.c));

        let mut merges = Vec::new();
        let mut stages = Vec::new();
        for (merge, blocks) in a.downsample.iter().zip(&a.stages) {
            let (y, cache) = merge_forward(merge, &p, x, ctx);
            merges.push(cache);
            x = y;
            let mut caches = Vec::new();
            for blk in blocks {
                let (y, cache) = vit_forward(blk, &p, x, ctx);
                caches.push(cache);
                x = y;
            }
            stages.push(caches);
            stage_shapes.push((x.h, x.w, x.c));
        }

        let (n, l, dim) = (x.n, x.h * x.w, x.c);
        let mut pooled = vec![0.0; n * dim];
        for b in 0..n {
            for t in 0..l {
                let row = &x.data[(b * l + t) * dim..(b * l + t + 1) * dim];
                pooled[b * dim..(b + 1) * dim]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(s, v)| *s += v);
            }
        }
        pooled.iter_mut().for_each(|v| *v /= l as f64);
        let (pn, head_norm) = a.norm_head.forward(&p, &pooled);
        let logits = a.head.forward(&p, &pn);
        Ok((
            logits,
            Tape {
                embed,
                stage1,
                merges,
                stages,
                final_shape: (n, x.h, x.w, dim),
                head_norm,
                pooled_norm: pn,
                bn_stats: Vec::new(),
                stage_shapes,
            },
        ))
    }

    /// Gradient of `Σ dlogits · logits` with respect to `theta`.
    pub fn backward(&self, theta: &[f64], tape: &Tape, dlogits: &[f64]) -> Vec<f64> {
        let p = Weights {
            layout: &self.layout,
            theta,
        };
        let mut grad = vec![0.0; self.layout.total];
        let mut g = GradSink {
            layout: &self.layout,
            grad: &mut grad,
        };
        let a = &self.arch;
        let dpn = a.head.backward(&p, &mut g, &tape.pooled_norm, dlogits);
        let dpooled = a.norm_head.backward(&p, &mut g, &tape.head_norm, &dpn);
        let (n, h, w, dim) = tape.final_shape;
        let l = h * w;
        let mut dx = Map::zeros(n, h, w, dim);
        for b in 0..n {
            for t in 0..l {
                for j in 0..dim {
                    dx.data[(b * l + t) * dim + j] = dpooled[b * dim + j] / l as f64;
                }
            }
        }
        for s in (0..3).rev() {
            for (blk, cache) in a.stages[s].iter().zip(&tape.stages[s]).rev() {
                dx = vit_backward(blk, &p, &mut g, cache, dx);
            }
            dx = merge_backward(&a.downsample[s], &p, &mut g, &tape.merges[s], dx);
        }
        for (blk, cache) in a.stage1.iter().zip(&tape.stage1).rev() {
            dx = mbconv_backward(blk, &p, &mut g, cache, dx);
        }
        let c = &tape.embed;
        let dg = a.patch_embed.conv2.backward(&p, &mut g, &c.c2, &dx);
        let dy = gelu_map_backward(&c.a1, &dg);
        a.patch_embed.conv1.backward(&p, &mut g, &c.c1, &dy);
        grad
    }

    /// Replaces the configuration and parameters after resolution
    /// adaptation; the layout must stay name-compatible otherwise.
    pub(crate) fn rebuild(&self, config: ModelConfig, remap: impl Fn(&str, &[f64]) -> Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (arch, layout, mut buffers) = make_arch(&config);
        let mut theta = vec![0.0; layout.total];
        for spec in &layout.specs {
            let old = self
                .layout
                .find(&spec.name)
                .ok_or_else(|| Error::InvalidConfig(format!("no parameter {}", spec.name)))?;
            let v = remap(&spec.name, &self.theta[old.range()]);
            if v.len() != spec.len() {
                return Err(Error::InvalidConfig(format!("shape change for {}", spec.name)));
            }
            theta[spec.range()].copy_from_slice(&v);
        }
        buffers.data = self.buffers.data.clone();
        Ok(TinyVit {
            config,
            layout,
            theta,
            buffers,
            arch,
        })
    }
}

fn mbconv_forward(blk: &MbConv, p: &Weights, x: Map, ctx: &mut Ctx) -> (Map, MbConvCache) {
    let (y1, c1) = blk.conv1.forward(p, x.clone(), ctx);
    let g1 = gelu_map(&y1);
    let (y2, c2) = blk.conv2.forward(p, g1, ctx);
    let g2 = gelu_map(&y2);
    let (y3, c3) = blk.conv3.forward(p, g2, ctx);
    let mask = ctx.drop_mask(x.n, blk.drop);
    let mut sum = x;
    let per = sum.h * sum.w;
    add_branch(&mut sum.data, &y3.data, mask.as_deref(), per, sum.c);
    let out = gelu_map(&sum);
    (
        out,
        MbConvCache {
            c1,
            a1: y1,
            c2,
            a2: y2,
            c3,
            sum,
            mask,
        },
    )
}

fn mbconv_backward(blk: &MbConv, p: &Weights, g: &mut GradSink, c: &MbConvCache, dy: Map) -> Map {
    let ds = gelu_map_backward(&c.sum, &dy);
    let per = ds.h * ds.w;
    let dbranch = ds.with_data(ds.c, scale_branch(&ds.data, c.mask.as_deref(), per, ds.c));
    let d = blk.conv3.backward(p, g, &c.c3, &dbranch);
    let d = gelu_map_backward(&c.a2, &d);
    let d = blk.conv2.backward(p, g, &c.c2, &d);
    let d = gelu_map_backward(&c.a1, &d);
    let mut dx = blk.conv1.backward(p, g, &c.c1, &d);
    dx.data.iter_mut().zip(&ds.data).for_each(|(a, b)| *a += b);
    dx
}

fn merge_forward(m: &PatchMerging, p: &Weights, x: Map, ctx: &mut Ctx) -> (Map, MergeCache) {
    let (y1, c1) = m.conv1.forward(p, x, ctx);
    let g1 = gelu_map(&y1);
    let (y2, c2) = m.conv2.forward(p, g1, ctx);
    let g2 = gelu_map(&y2);
    let (y3, c3) = m.conv3.forward(p, g2, ctx);
    (
        y3,
        MergeCache {
            c1,
            a1: y1,
            c2,
            a2: y2,
            c3,
        },
    )
}

fn merge_backward(m: &PatchMerging, p: &Weights, g: &mut GradSink, c: &MergeCache, dy: Map) -> Map {
    let d = m.conv3.backward(p, g, &c.c3, &dy);
    let d = gelu_map_backward(&c.a2, &d);
    let d = m.conv2.backward(p, g, &c.c2, &d);
    let d = gelu_map_backward(&c.a1, &d);
    m.conv1.backward(p, g, &c.c1, &d)
}

fn attn_shape(blk: &VitBlock, x: &Map) -> AttnShape {
    AttnShape {
        n: x.n,
        h: x.h,
        w: x.w,
        heads: blk.heads,
        head_dim: blk.head_dim,
        window: blk.window,
    }
}

fn vit_forward(blk: &VitBlock, p: &Weights, x: Map, ctx: &mut Ctx) -> (Map, VitCache) {
    let shape = attn_shape(blk, &x);
    let per = x.h * x.w;
    let (xn, n1) = blk.norm1.forward(p, &x.data);
    let qkv = blk.qkv.forward(p, &xn);
    let (att, attn) = window_attention(&shape, &qkv, blk.bias.map(|b| p.get(b)));
    let y = blk.proj.forward(p, &att);
    let mask1 = ctx.drop_mask(x.n, blk.drop);
    let mut x1 = x;
    add_branch(&mut x1.data, &y, mask1.as_deref(), per, x1.c);
    let (mut x2, conv) = blk.local_conv.forward(p, x1, ctx);
    let (xn2, n2) = blk.norm2.forward(p, &x2.data);
    let h1 = blk.fc1.forward(p, &xn2);
    let a1 = gelu(&h1);
    let h2 = blk.fc2.forward(p, &a1);
    let mask2 = ctx.drop_mask(x2.n, blk.drop);
    add_branch(&mut x2.data, &h2, mask2.as_deref(), per, x2.c);
    (
        x2,
        VitCache {
            n1,
            xn,
            qkv,
            attn,
            att,
            mask1,
            conv,
            n2,
            xn2,
            h1,
            a1,
            mask2,
        },
    )
}

fn vit_backward(blk: &VitBlock, p: &Weights, g: &mut GradSink, c: &VitCache, dy: Map) -> Map {
    let shape = attn_shape(blk, &dy);
    let per = dy.h * dy.w;
    let dh2 = scale_branch(&dy.data, c.mask2.as_deref(), per, dy.c);
    let da1 = blk.fc2.backward(p, g, &c.a1, &dh2);
    let dh1 = gelu_backward(&c.h1, &da1);
    let dxn2 = blk.fc1.backward(p, g, &c.xn2, &dh1);
    let mut dx2 = dy;
    let dn2 = blk.norm2.backward(p, g, &c.n2, &dxn2);
    dx2.data.iter_mut().zip(&dn2).for_each(|(a, b)| *a += b);
    let dx1 = blk.local_conv.backward(p, g, &c.conv, &dx2);
    let dyb = scale_branch(&dx1.data, c.mask1.as_deref(), per, dx1.c);
    let datt = blk.proj.backward(p, g, &c.att, &dyb);
    let dqkv = match blk.bias {
        Some(b) => window_attention_backward(&shape, &c.qkv, &c.attn, &datt, Some(g.get(b))),
        None => window_attention_backward(&shape, &c.qkv, &c.attn, &datt, None),
    };
    let dxn = blk.qkv.backward(p, g, &c.xn, &dqkv);
    let dn1 = blk.norm1.backward(p, g, &c.n1, &dxn);
    let mut dx = dx1;
    dx.data.iter_mut().zip(&dn1).for_each(|(a, b)| *a += b);
    dx
}
