use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyvit::distill::{gradient_check, ModelObjective};
use tinyvit::model::{
    adapt_resolution, adapted_windows, analytic_macs, analytic_params, count_macs, count_params,
    model_from_bytes, model_to_bytes, Batch, ContractionConfig, ModelConfig, ModelStats, Mode,
    TinyVit, NORM_EPS,
};

fn preset(name: &str) -> ModelConfig {
    ModelConfig::preset(name).unwrap()
}

fn random_batch(n: usize, res: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 3 * res * res).map(|_| rng.random_range(-1.0..1.0)).collect();
    Batch::new(n, res, data).unwrap()
}

/// Runs training-mode passes so the running statistics move away from
/// their (0, 1) initial values.
fn warm_stats(model: &mut TinyVit, passes: u64) {
    let res = model.config().resolution;
    for s in 0..passes {
        let b = random_batch(8, res, 1000 + s);
        let (_, tape) = model.forward_train(model.theta(), &b, Mode::Train, None).unwrap();
        model.commit_batch_stats(&tape);
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn parameter_and_mac_accounting() {
    // (preset, params within 2%, GMACs within 5%)
    for (name, params, gmacs) in [
        ("tinyvit-5m", 5.4e6, 1.3),
        ("tinyvit-11m", 11e6, 2.0),
        ("tinyvit-21m", 21e6, 4.3),
    ] {
        let m = TinyVit::build(&preset(name), 0).unwrap();
        let p = count_params(&m) as f64;
        assert!(rel(p, params) < 0.02, "{name}: {p}");
        let g = count_macs(&m, 224) as f64 / 1e9;
        assert!(rel(g, gmacs) < 0.05, "{name}: {g} GMACs");
        assert_eq!(count_params(&m), analytic_params(m.config()));
    }
    let big = TinyVit::build(&preset("tinyvit-21m"), 0).unwrap();
    let at384 = adapt_resolution(&big, 384).unwrap();
    let g = ModelStats::of(at384.config()).macs as f64 / 1e9;
    assert!(rel(g, 13.8) < 0.05, "{g}");
}

#[test]
fn mac_ratio_tracks_token_count() {
    let m = TinyVit::build(&preset("tinyvit-21m"), 0).unwrap();
    let ratio = count_macs(&m, 448) as f64 / count_macs(&m, 224) as f64;
    assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
}

#[test]
fn micro_shapes_and_finiteness() {
    let mut cfg = preset("micro");
    assert!(count_params(&TinyVit::build(&cfg, 0).unwrap()) < 50_000);
    cfg.resolution = 224;
    let m = TinyVit::build(&cfg, 0).unwrap();
    let b = random_batch(1, 224, 1);
    let (logits, tape) = m.forward_train(m.theta(), &b, Mode::Eval, None).unwrap();
    assert_eq!(logits.len(), 10);
    assert!(logits.iter().all(|v| v.is_finite()));
    assert_eq!(
        tape.stage_shapes,
        vec![(56, 56, 8), (28, 28, 16), (14, 14, 32), (7, 7, 48)]
    );
}

#[test]
fn wrong_resolution_is_rejected() {
    let m = TinyVit::build(&preset("micro"), 0).unwrap();
    let e = m.forward(&random_batch(1, 64, 0)).unwrap_err();
    assert!(e.to_string().starts_with("input shape mismatch"));
}

#[test]
fn eval_forward_is_batch_permutation_equivariant() {
    let mut m = TinyVit::build(&preset("micro"), 3).unwrap();
    warm_stats(&mut m, 3);
    let b = random_batch(4, 32, 9);
    let per = 3 * 32 * 32;
    let perm = [2usize, 0, 3, 1];
    let data = perm
        .iter()
        .flat_map(|&i| b.data[i * per..(i + 1) * per].to_vec())
        .collect();
    let pb = Batch::new(4, 32, data).unwrap();
    let (z, pz) = (m.forward(&b).unwrap(), m.forward(&pb).unwrap());
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(&pz[k * 10..(k + 1) * 10], &z[i * 10..(i + 1) * 10]);
    }
}

#[test]
fn degenerate_heads_are_rejected() {
    let mut c = preset("micro");
    c.contraction.embed_dims[2] = 36;
    let e = c.validate().unwrap_err();
    assert!(e.to_string().starts_with("head dimension mismatch"));
}

#[test]
fn window_mapping_across_resolutions() {
    let m = TinyVit::build(&preset("tinyvit-21m"), 0).unwrap();
    assert_eq!(m.config().contraction.nominal_windows(), [7, 7, 14, 7]);
    assert_eq!(adapted_windows(&m, 384).unwrap(), [12, 12, 24, 12]);
    let m384 = adapt_resolution(&m, 384).unwrap();
    assert_eq!(adapted_windows(&m384, 512).unwrap(), [16, 16, 32, 16]);
    assert_eq!(adapted_windows(&m, 512).unwrap(), [16, 16, 32, 16]);
    let side = |m: &TinyVit| m.param("layers.2.blocks.0.attn.attention_biases").unwrap().len();
    assert_eq!(side(&m384), 12 * 47 * 47);
}

#[test]
fn adapting_to_the_same_resolution_is_identity() {
    let mut cfg = preset("micro");
    cfg.resolution = 64;
    cfg.contraction.window_sizes = [4, 2, 2];
    let mut m = TinyVit::build(&cfg, 4).unwrap();
    warm_stats(&mut m, 2);
    let same = adapt_resolution(&m, 64).unwrap();
    assert_eq!(same.config(), m.config());
    assert_eq!(
        same.theta().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        m.theta().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(same.buffers(), m.buffers());
    let b = random_batch(1, 64, 1);
    assert_eq!(m.forward(&b).unwrap(), same.forward(&b).unwrap());
}

#[test]
fn adapted_model_runs_at_the_new_resolution() {
    let mut cfg = preset("micro");
    cfg.resolution = 64;
    cfg.contraction.window_sizes = [4, 2, 2];
    let m = TinyVit::build(&cfg, 4).unwrap();
    let up = adapt_resolution(&m, 128).unwrap();
    assert_eq!(up.config().contraction.window_sizes, [8, 4, 4]);
    let z = up.forward(&random_batch(1, 128, 2)).unwrap();
    assert!(z.iter().all(|v| v.is_finite()));
}

#[test]
fn model_file_roundtrip_and_corruption() {
    let mut m = TinyVit::build(&preset("micro"), 8).unwrap();
    warm_stats(&mut m, 1);
    let bytes = model_to_bytes(&m);
    let back = model_from_bytes(&bytes).unwrap();
    assert_eq!(back.theta(), m.theta());
    assert_eq!(back.buffers(), m.buffers());
    assert_eq!(back.config(), m.config());
    for pos in [0, 9, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(model_from_bytes(&bad).is_err(), "flip at {pos} accepted");
    }
    assert!(model_from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn micro_gradients_in_training_mode() {
    let m = TinyVit::build(&preset("micro"), 1).unwrap();
    let batch = random_batch(8, 32, 5);
    let targets: Vec<Vec<f64>> = (0..8)
        .map(|i| (0..10).map(|j| if j == i { 0.82 } else { 0.02 }).collect())
        .collect();
    let obj = ModelObjective {
        model: &m,
        batch: &batch,
        targets: &targets,
        mode: Mode::Train,
    };
    let idx: Vec<usize> = (0..m.layout().total).step_by(97).collect();
    let r = gradient_check(&obj, m.theta(), 1e-4, Some(&idx));
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn micro_gradients_in_eval_mode() {
    let mut m = TinyVit::build(&preset("micro"), 1).unwrap();
    warm_stats(&mut m, 40);
    let batch = random_batch(2, 32, 5);
    let targets = vec![vec![0.1; 10], {
        let mut t = vec![0.0; 10];
        t[3] = 1.0;
        t
    }];
    let obj = ModelObjective {
        model: &m,
        batch: &batch,
        targets: &targets,
        mode: Mode::Eval,
    };
    let idx: Vec<usize> = (0..m.layout().total).step_by(53).collect();
    let r = gradient_check(&obj, m.theta(), 1e-4, Some(&idx));
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

mod oracle {
    //! Straight-line single-image forward pass in `C×H×W` layout, written
    //! from the architecture description without the library's kernels.
    use super::*;

    pub struct T {
        pub c: usize,
        pub h: usize,
        pub w: usize,
        pub d: Vec<f64>,
    }

    impl T {
        fn at(&self, c: usize, y: usize, x: usize) -> f64 {
            self.d[(c * self.h + y) * self.w + x]
        }
    }

    fn p<'a>(m: &'a TinyVit, name: &str) -> &'a [f64] {
        m.param(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    fn buf<'a>(m: &'a TinyVit, name: &str) -> &'a [f64] {
        let b = m.buffers();
        let i = b.names.iter().position(|n| n == name).unwrap();
        &b.data[i]
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
    }

    fn conv(x: &T, w: &[f64], cout: usize, k: usize, stride: usize, groups: usize) -> T {
        let pad = k / 2;
        let (ho, wo) = ((x.h + 2 * pad - k) / stride + 1, (x.w + 2 * pad - k) / stride + 1);
        let cin_g = x.c / groups;
        let cout_g = cout / groups;
        let mut d = vec![0.0; cout * ho * wo];
        for o in 0..cout {
            let g = o / cout_g;
            for y in 0..ho {
                for xx in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..cin_g {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                s += w[((o * cin_g + ci) * k + ky) * k + kx]
                                    * x.at(g * cin_g + ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    d[(o * ho + y) * wo + xx] = s;
                }
            }
        }
        T {
            c: cout,
            h: ho,
            w: wo,
            d,
        }
    }

    fn conv_bn(m: &TinyVit, name: &str, x: &T, cout: usize, k: usize, stride: usize, groups: usize) -> T {
        let mut y = conv(x, p(m, &format!("{name}.conv.weight")), cout, k, stride, groups);
        let (g, b) = (p(m, &format!("{name}.bn.weight")), p(m, &format!("{name}.bn.bias")));
        let (rm, rv) = (buf(m, &format!("{name}.bn.running_mean")), buf(m, &format!("{name}.bn.running_var")));
        let plane = y.h * y.w;
        for c in 0..cout {
            for v in &mut y.d[c * plane..(c + 1) * plane] {
                *v = (*v - rm[c]) / (rv[c] + NORM_EPS).sqrt() * g[c] + b[c];
            }
        }
        y
    }

    fn act(mut x: T) -> T {
        x.d.iter_mut().for_each(|v| *v = gelu(*v));
        x
    }

    fn layer_norm(m: &TinyVit, name: &str, v: &[f64]) -> Vec<f64> {
        let (g, b) = (p(m, &format!("{name}.weight")), p(m, &format!("{name}.bias")));
        let n = v.len() as f64;
        let mu = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
        v.iter()
            .enumerate()
            .map(|(i, x)| (x - mu) / (var + NORM_EPS).sqrt() * g[i] + b[i])
            .collect()
    }

    fn linear(m: &TinyVit, name: &str, v: &[f64]) -> Vec<f64> {
        let w = p(m, &format!("{name}.weight"));
        let b = p(m, &format!("{name}.bias"));
        let out = b.len();
        (0..out)
            .map(|o| b[o] + (0..v.len()).map(|i| w[o * v.len() + i] * v[i]).sum::<f64>())
            .collect()
    }

    fn tokens(x: &T) -> Vec<Vec<f64>> {
        (0..x.h * x.w)
            .map(|t| (0..x.c).map(|c| x.d[c * x.h * x.w + t]).collect())
            .collect()
    }

    fn untokens(t: &[Vec<f64>], h: usize, w: usize) -> T {
        let c = t[0].len();
        let mut d = vec![0.0; c * h * w];
        for (i, row) in t.iter().enumerate() {
            for (ch, v) in row.iter().enumerate() {
                d[ch * h * w + i] = *v;
            }
        }
        T { c, h, w, d }
    }

    fn attention(m: &TinyVit, pre: &str, x: &[Vec<f64>], h: usize, w: usize, heads: usize, e: usize, win: usize) -> Vec<Vec<f64>> {
        let qkv: Vec<Vec<f64>> = x
            .iter()
            .map(|t| linear(m, &format!("{pre}.qkv"), &layer_norm(m, &format!("{pre}.norm"), t)))
            .collect();
        let bias = m.param(&format!("{pre}.attention_biases"));
        let side = 2 * win - 1;
        let dim = heads * e;
        let mut out = vec![vec![0.0; dim]; x.len()];
        for wy in (0..h).step_by(win) {
            for wx in (0..w).step_by(win) {
                let toks: Vec<(usize, usize)> = (wy..(wy + win).min(h))
                    .flat_map(|y| (wx..(wx + win).min(w)).map(move |xx| (y, xx)))
                    .collect();
                for hd in 0..heads {
                    let q = |t: usize| &qkv[t][hd * 3 * e..hd * 3 * e + e];
                    let k = |t: usize| &qkv[t][hd * 3 * e + e..hd * 3 * e + 2 * e];
                    let v = |t: usize| &qkv[t][hd * 3 * e + 2 * e..hd * 3 * e + 3 * e];
                    for &(qy, qx) in &toks {
                        let qi = qy * w + qx;
                        let logits: Vec<f64> = toks
                            .iter()
                            .map(|&(ky, kx)| {
                                let ki = ky * w + kx;
                                let dot: f64 = q(qi).iter().zip(k(ki)).map(|(a, b)| a * b).sum();
                                let rb = bias.map_or(0.0, |b| {
                                    b[hd * side * side
                                        + (qy + win - 1 - ky) * side
                                        + (qx + win - 1 - kx)]
                                });
                                dot / (e as f64).sqrt() + rb
                            })
                            .collect();
                        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                        let s: f64 = ex.iter().sum();
                        for (j, &(ky, kx)) in toks.iter().enumerate() {
                            let ki = ky * w + kx;
                            for d in 0..e {
                                out[qi][hd * e + d] += ex[j] / s * v(ki)[d];
                            }
                        }
                    }
                }
            }
        }
        out.iter().map(|t| linear(m, &format!("{pre}.proj"), t)).collect()
    }

    pub fn forward(m: &TinyVit, img: T) -> Vec<f64> {
        let cc: &ContractionConfig = &m.config().contraction;
        let d = cc.embed_dims;
        let x = act(conv_bn(m, "patch_embed.conv1", &img, d[0] / 2, 3, 2, 1));
        let mut x = conv_bn(m, "patch_embed.conv2", &x, d[0], 3, 2, 1);
        let hid = cc.mbconv_hidden();
        for j in 0..cc.depths[0] {
            let pre = format!("layers.0.blocks.{j}");
            let a = act(conv_bn(m, &format!("{pre}.conv1"), &x, hid, 1, 1, 1));
            let a = act(conv_bn(m, &format!("{pre}.conv2"), &a, hid, 3, 1, hid));
            let a = conv_bn(m, &format!("{pre}.conv3"), &a, d[0], 1, 1, 1);
            x.d.iter_mut().zip(&a.d).for_each(|(u, v)| *u = gelu(*u + v));
        }
        for s in 1..4 {
            let pre = format!("layers.{}.downsample", s - 1);
            let a = act(conv_bn(m, &format!("{pre}.conv1"), &x, d[s], 1, 1, 1));
            let a = act(conv_bn(m, &format!("{pre}.conv2"), &a, d[s], 3, 2, d[s]));
            x = conv_bn(m, &format!("{pre}.conv3"), &a, d[s], 1, 1, 1);
            let (heads, e, win) = (cc.num_heads(s), cc.head_dim, cc.window_sizes[s - 1]);
            for j in 0..cc.depths[s] {
                let pre = format!("layers.{s}.blocks.{j}");
                let (h, w) = (x.h, x.w);
                let mut t = tokens(&x);
                let att = attention(m, &format!("{pre}.attn"), &t, h, w, heads, e, win);
                t.iter_mut().zip(&att).for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(u, v)| *u += v));
                let y = conv_bn(m, &format!("{pre}.local_conv"), &untokens(&t, h, w), d[s], 3, 1, d[s]);
                let mut t = tokens(&y);
                for row in &mut t {
                    let hdn: Vec<f64> = linear(m, &format!("{pre}.mlp.fc1"), &layer_norm(m, &format!("{pre}.mlp.norm"), row))
                        .into_iter()
                        .map(gelu)
                        .collect();
                    let o = linear(m, &format!("{pre}.mlp.fc2"), &hdn);
                    row.iter_mut().zip(&o).for_each(|(u, v)| *u += v);
                }
                x = untokens(&t, h, w);
            }
        }
        let t = tokens(&x);
        let pooled: Vec<f64> = (0..x.c)
            .map(|c| t.iter().map(|r| r[c]).sum::<f64>() / t.len() as f64)
            .collect();
        linear(m, "head", &layer_norm(m, "norm_head", &pooled))
    }
}

fn check_against_oracle(cfg: &ModelConfig, seed: u64) {
    let mut m = TinyVit::build(cfg, seed).unwrap();
    warm_stats(&mut m, 3);
    let res = cfg.resolution;
    let b = random_batch(2, res, seed + 7);
    let z = m.forward(&b).unwrap();
    let per = 3 * res * res;
    for i in 0..2 {
        let img = oracle::T {
            c: 3,
            h: res,
            w: res,
            d: b.data[i * per..(i + 1) * per].to_vec(),
        };
        let want = oracle::forward(&m, img);
        let c = cfg.num_classes;
        for (a, w) in z[i * c..(i + 1) * c].iter().zip(&want) {
            assert!((a - w).abs() < 1e-5, "{a} vs {w}");
        }
    }
}

#[test]
fn micro_forward_matches_straight_line_oracle() {
    check_against_oracle(&preset("micro"), 11);
}

#[test]
fn partial_windows_match_oracle() {
    // 96 px: stage grids 24, 12, 6, 3 with windows 5, 5, 2 leave partial
    // windows everywhere.
    let mut cfg = preset("micro");
    cfg.resolution = 96;
    cfg.contraction.window_sizes = [5, 5, 2];
    check_against_oracle(&cfg, 12);
}

fn arb_contraction() -> impl Strategy<Value = ModelConfig> {
    (
        prop::collection::vec(1usize..5, 4),
        prop::collection::vec(1usize..3, 4),
        prop::sample::select(vec![1usize, 2, 3, 5, 7]),
        prop::sample::select(vec![2.0f64, 2.5, 3.0, 4.0]),
        prop::sample::select(vec![8usize, 16]),
        1usize..4,
    )
        .prop_map(|(mult, depths, win, ratio, e, res)| {
            let mut c = ModelConfig::preset("micro").unwrap();
            c.contraction.head_dim = e;
            c.contraction.embed_dims = [
                8 * mult[0],
                e * mult[1],
                e * mult[2],
                e * mult[3],
            ];
            c.contraction.depths = [depths[0], depths[1], depths[2], depths[3]];
            c.contraction.window_sizes = [win, win, win];
            c.contraction.mbconv_expansion = ratio;
            c.contraction.mlp_ratio = ratio;
            c.resolution = 32 * res;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walked_parameters_match_closed_form(cfg in arb_contraction()) {
        let m = TinyVit::build(&cfg, 0).unwrap();
        prop_assert_eq!(count_params(&m), analytic_params(&cfg));
        prop_assert!(analytic_macs(&cfg) > 0);
    }
}
