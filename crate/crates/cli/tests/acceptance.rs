//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails or overruns its time budget.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyvit::aug::{splitmix64, MixChoice};
use tinyvit::cache::{epoch_path, estimate_storage, CacheRecord, ValuePrecision};
use tinyvit::corpus::{synth_corpus, SynthSpec};
use tinyvit::distill::{
    class_correlation, evaluate, gradient_check, student_train_online, student_train_replay,
    teacher_save, train_supervised, ModelObjective, OptimConfig, RunConfig,
};
use tinyvit::label_codec::{densify, normalize, sparsify, SparseLabel, Temperature};
use tinyvit::model::{
    adapt_resolution, adapted_windows, count_macs, count_params, Batch, ModelConfig, ModelStats,
    Mode, TinyVit,
};
use tinyvit::search::{
    recorded_scores, search, throughput_proxy, Constraint, DistillScorer, FnScorer,
    RecordedScorer, Scorer, Trajectory,
};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn micro() -> ModelConfig {
    ModelConfig::preset("micro").unwrap()
}

// ----------------------------------------------------------------------------

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    let c = match rng.random_range(0..4) {
        0 => rng.random_range(1..=8),
        1 => rng.random_range(8..=100),
        2 => rng.random_range(100..=1000),
        _ => rng.random_range(1000..=4000),
    };
    let k = rng.random_range(1..=c);
    let scale = [0.1, 1.0, 5.0, 30.0][rng.random_range(0..4)];
    // Coarse logits produce exact ties.
    let coarse = rng.random_bool(0.25);
    let logits: Vec<f64> = (0..c)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0) * scale;
            if coarse {
                z.round()
            } else {
                z
            }
        })
        .collect();
    (logits, k)
}

/// Absolute rounding slack for probabilities: `1 - Σ` over up to a few
/// thousand stored values loses a few hundred ulps of one.
const ROUNDING: f64 = 1e-12;

fn sparse_labels() -> Check {
    let s = SparseLabel::new(vec![1, 3], vec![0.6, 0.3]).map_err(|e| e.to_string())?;
    let d = densify(&s, 4).map_err(|e| e.to_string())?;
    for (got, want) in d.probs().iter().zip([0.05, 0.6, 0.05, 0.3]) {
        ensure!((got - want).abs() < 1e-15, "worked example: {:?}", d.probs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let n = 10_000;
    let mut worst_mass = 0.0f64;
    for case in 0..n {
        let (logits, k) = random_instance(&mut rng);
        let c = logits.len();
        let p = normalize(&logits, Temperature::UNIT).unwrap();
        let s = sparsify(&p, k).unwrap();
        let d = densify(&s, c).unwrap();
        // Kept entries are verbatim, the rest is flat and no larger than
        // anything kept.
        let mut kept = vec![false; c];
        for (&i, &v) in s.indices().iter().zip(s.values()) {
            kept[i as usize] = true;
            ensure!(d.probs()[i as usize] == v && v == p.probs()[i as usize], "case {case}: kept value changed");
        }
        let min_kept = *s.values().last().unwrap();
        let rest: Vec<f64> = (0..c).filter(|&i| !kept[i]).map(|i| d.probs()[i]).collect();
        ensure!(rest.windows(2).all(|w| w[0] == w[1]), "case {case}: uneven residual");
        ensure!(rest.first().is_none_or(|&r| r <= min_kept + ROUNDING), "case {case}: residual above kept");
        for i in (0..c).filter(|&i| !kept[i]) {
            ensure!(p.probs()[i] <= min_kept, "case {case}: class {i} should have been kept");
        }
        let mass: f64 = d.probs().iter().sum();
        worst_mass = worst_mass.max((mass - 1.0).abs());
        ensure!((mass - 1.0).abs() < 1e-9, "case {case}: mass {mass}");
        // The top class stays on top up to rounding of the residual.
        let top = d.probs()[p.argmax()];
        ensure!(d.probs()[d.argmax()] - top <= ROUNDING, "case {case}: argmax moved");
        // Sparsifying the densified label again is a fixed point, exactly
        // unless the residual comes within rounding of the smallest kept
        // value.
        let again = sparsify(&d, k).unwrap();
        let tie = rest.first().is_some_and(|&r| r >= min_kept - ROUNDING);
        if tie {
            let close = again.values().iter().zip(s.values()).all(|(a, b)| (a - b).abs() <= ROUNDING);
            ensure!(close, "case {case}: values not a fixed point");
        } else {
            ensure!(again == s, "case {case}: not a fixed point");
        }
        // Storage quantization keeps a valid label with unit dense mass.
        let q = CacheRecord::from_label(0, &s, ValuePrecision::Half).to_label().unwrap();
        let dq: f64 = densify(&q, c).unwrap().probs().iter().sum();
        ensure!(k == c || (dq - 1.0).abs() < 1e-9, "case {case}: quantized mass {dq}");
    }
    // Arbitrary sparse labels (not from a top-K) conserve mass too.
    for case in 0..n {
        let c = rng.random_range(2..=500);
        let k = rng.random_range(1..c);
        let mut ids: Vec<u32> = (0..c as u32).collect();
        for i in 0..k {
            let j = rng.random_range(i..c);
            ids.swap(i, j);
        }
        let budget: f64 = rng.random_range(0.0..1.0);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum::<f64>().max(1e-300);
        let pairs = ids[..k].iter().zip(&raw).map(|(&i, &v)| (i, v / total * budget)).collect();
        let s = SparseLabel::from_pairs(pairs).unwrap();
        let mass: f64 = densify(&s, c).unwrap().probs().iter().sum();
        worst_mass = worst_mass.max((mass - 1.0).abs());
        ensure!((mass - 1.0).abs() < 1e-9, "sparse case {case}: mass {mass}");
    }
    Ok(format!("{} instances, worst |mass - 1| = {worst_mass:.1e}", 2 * n))
}

// ----------------------------------------------------------------------------

fn replay_equivalence() -> Check {
    let data = synth_corpus(&SynthSpec::new(10, 7, 32, 11)).unwrap().subset(|i| i < 64).unwrap();
    let teacher = TinyVit::build(&micro(), 1).unwrap();
    let base = RunConfig {
        run_seed: 23,
        epochs: 2,
        batch_size: 16,
        k: 5,
        optim: OptimConfig {
            warmup_steps: 2,
            ..OptimConfig::default()
        },
        ..RunConfig::default()
    };
    let mut mixup = base.clone();
    mixup.mix_enabled = true;
    mixup.mix.choice = MixChoice::Mixup;
    let mut out = Vec::new();
    for (name, cfg) in [("augment", base), ("mixup", mixup)] {
        let dir = tempfile::tempdir().unwrap();
        teacher_save(&teacher, &data, &cfg, &[0, 1], dir.path(), 1).map_err(|e| e.to_string())?;
        let student = TinyVit::build(&micro(), 2).unwrap();
        let (a, ta) = student_train_replay(student.clone(), &data, dir.path(), &cfg).map_err(|e| e.to_string())?;
        let (b, tb) = student_train_online(student, &teacher, &data, &cfg).map_err(|e| e.to_string())?;
        ensure!(ta.entries.len() == 8, "{name}: {} steps", ta.entries.len());
        for (x, y) in ta.entries.iter().zip(&tb.entries) {
            ensure!(
                x.loss_bits == y.loss_bits && x.checksum == y.checksum,
                "{name}: step {} differs ({} vs {})",
                x.step,
                x.loss,
                y.loss
            );
        }
        ensure!(ta.to_jsonl() == tb.to_jsonl(), "{name}: traces differ");
        ensure!(
            a.theta().iter().zip(b.theta()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name}: final parameters differ"
        );
        out.push(format!("{name} {} steps bitwise equal", ta.entries.len()));
    }
    Ok(out.join("; "))
}

// ----------------------------------------------------------------------------

fn storage() -> Check {
    let h = ValuePrecision::Half;
    let est = |c, k, n, e| estimate_storage(c, k, n, e, h).unwrap().bytes_total;
    let a = est(1000, 10, 1_281_167, 300) as f64 / 1e9;
    let b = est(21_841, 100, 14_000_000, 90) as f64 / 1e9;
    ensure!(rel(a, 16.0) <= 0.2, "IN-1k point {a:.2} GB");
    ensure!(rel(b, 481.0) <= 0.2, "IN-21k point {b:.2} GB");
    for (c, n, e) in [(1000u32, 1_281_167u64, 300u32), (21_841, 14_000_000, 90)] {
        let step = est(c, 2, n, e) - est(c, 1, n, e);
        for k in 2..=c.min(200) {
            ensure!(est(c, k, n, e) - est(c, k - 1, n, e) == step, "not linear in K at C={c}, K={k}");
        }
        for epochs in 1..=e {
            ensure!(est(c, 10, n, epochs) == epochs as u64 * est(c, 10, n, 1), "not linear in epochs at {epochs}");
        }
    }
    // The estimate is the size of what the writer produces.
    let data = synth_corpus(&SynthSpec::new(10, 2, 32, 1)).unwrap();
    let cfg = RunConfig {
        epochs: 3,
        k: 7,
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let saved = teacher_save(&TinyVit::build(&micro(), 0).unwrap(), &data, &cfg, &[0, 1, 2], dir.path(), 1)
        .map_err(|e| e.to_string())?;
    let on_disk: u64 = (0..3).map(|e| std::fs::metadata(epoch_path(dir.path(), e)).unwrap().len()).sum();
    ensure!(saved.iter().map(|s| s.bytes).sum::<u64>() == on_disk, "reported sizes differ from disk");
    ensure!(on_disk == est(10, 7, 20, 3), "written {on_disk} bytes, estimated {}", est(10, 7, 20, 3));
    Ok(format!("{a:.2} GB and {b:.2} GB; exactly linear in K and epochs; writer matches estimate"))
}

// ----------------------------------------------------------------------------

fn accounting() -> Check {
    let mut out = Vec::new();
    for (name, params, gmacs) in [("tinyvit-5m", 5.4e6, 1.3), ("tinyvit-11m", 11e6, 2.0), ("tinyvit-21m", 21e6, 4.3)] {
        let m = TinyVit::build(&ModelConfig::preset(name).unwrap(), 0).unwrap();
        let p = count_params(&m) as f64;
        let g = count_macs(&m, 224) as f64 / 1e9;
        ensure!(rel(p, params) <= 0.02, "{name}: {p} parameters");
        ensure!(rel(g, gmacs) <= 0.05, "{name}: {g:.3} GMACs");
        ensure!(ModelStats::of(m.config()).params == count_params(&m), "{name}: analytic count differs");
        out.push(format!("{name} {:.2}M/{g:.2}G", p / 1e6));
        if name == "tinyvit-21m" {
            let big = adapt_resolution(&m, 384).map_err(|e| e.to_string())?;
            let g = count_macs(&big, 384) as f64 / 1e9;
            ensure!(rel(g, 13.8) <= 0.05, "21M@384: {g:.3} GMACs");
            out.push(format!("21M@384 {g:.2}G"));
        }
    }
    Ok(out.join(", "))
}

// ----------------------------------------------------------------------------

fn window_mapping() -> Check {
    let m = TinyVit::build(&ModelConfig::preset("tinyvit-21m").unwrap(), 0).unwrap();
    let w384 = adapted_windows(&m, 384).map_err(|e| e.to_string())?;
    let w512 = adapted_windows(&m, 512).map_err(|e| e.to_string())?;
    ensure!(m.config().contraction.nominal_windows() == [7, 7, 14, 7], "base windows");
    ensure!(w384 == [12, 12, 24, 12], "384: {w384:?}");
    ensure!(w512 == [16, 16, 32, 16], "512: {w512:?}");
    let chained = adapt_resolution(&adapt_resolution(&m, 384).unwrap(), 512).unwrap();
    ensure!(chained.config().contraction.window_sizes == [16, 32, 16], "chained 384→512");
    let same = adapt_resolution(&m, 224).map_err(|e| e.to_string())?;
    ensure!(same.config() == m.config(), "224→224 changed the config");
    ensure!(
        same.theta().iter().zip(m.theta()).all(|(a, b)| a.to_bits() == b.to_bits()),
        "224→224 changed parameters"
    );
    ensure!(same.buffers() == m.buffers(), "224→224 changed buffers");
    Ok("{7,7,14,7}→{12,12,24,12}→{16,16,32,16}; 224→224 bit-identical".into())
}

// ----------------------------------------------------------------------------

fn random_batch(n: usize, res: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 3 * res * res).map(|_| rng.random_range(-1.0..1.0)).collect();
    Batch::new(n, res, data).unwrap()
}

fn gradients() -> Check {
    let mut m = TinyVit::build(&micro(), 1).unwrap();
    let dim = m.layout().total;
    ensure!(dim < 50_000, "micro has {dim} parameters");
    // Train-mode batch statistics, a strided subset: the batch-norm
    // curvature that a batch of 8 brings makes a full pass too slow.
    let batch8 = random_batch(8, 32, 5);
    let t8: Vec<Vec<f64>> = (0..8).map(|i| (0..10).map(|j| if j == i { 0.82 } else { 0.02 }).collect()).collect();
    let train = ModelObjective {
        model: &m,
        batch: &batch8,
        targets: &t8,
        mode: Mode::Train,
    };
    let idx: Vec<usize> = (0..dim).step_by(97).collect();
    let r_train = gradient_check(&train, m.theta(), 1e-4, Some(&idx));
    ensure!(r_train.max_rel_error < 1e-4, "train mode: {r_train:?}");
    // Every parameter, with running statistics moved off their initial
    // values.
    for s in 0..40 {
        let b = random_batch(8, 32, 1000 + s);
        let (_, tape) = m.forward_train(m.theta(), &b, Mode::Train, None).unwrap();
        m.commit_batch_stats(&tape);
    }
    let batch2 = random_batch(2, 32, 5);
    let mut hot = vec![0.0; 10];
    hot[3] = 1.0;
    let t2 = vec![vec![0.1; 10], hot];
    let eval = ModelObjective {
        model: &m,
        batch: &batch2,
        targets: &t2,
        mode: Mode::Eval,
    };
    let r_eval = gradient_check(&eval, m.theta(), 1e-4, None);
    ensure!(r_eval.checked == dim, "checked {} of {dim}", r_eval.checked);
    ensure!(r_eval.max_rel_error < 1e-4, "eval mode: {r_eval:?}");
    Ok(format!(
        "{dim} params; all-parameter max rel err {:.2e}; train-mode subset ({}) {:.2e}",
        r_eval.max_rel_error, r_train.checked, r_train.max_rel_error
    ))
}

// ----------------------------------------------------------------------------

fn check_trajectory(t: &Trajectory, cons: &Constraint) -> Result<usize, String> {
    let mut prev = ModelStats::of(&t.seed).params;
    for c in t.path() {
        let s = ModelStats::of(&c);
        ensure!(cons.admits(&c, &s), "config violates constraint: {:?}", c.contraction);
        ensure!(c.validate().is_ok(), "invalid config on path");
        ensure!(s.params < prev, "params did not decrease ({} → {})", prev, s.params);
        prev = s.params;
    }
    for step in &t.steps {
        for cand in &step.candidates {
            ensure!(cand.feasible == cand.score.is_some(), "infeasible candidate was scored");
        }
    }
    Ok(t.path().len())
}

fn replays(t: &Trajectory, cons: &Constraint, target: u64, steps: usize) -> Result<(), String> {
    let text = t.to_jsonl();
    let loaded = Trajectory::from_jsonl(&text).map_err(|e| e.to_string())?;
    let scorer = RecordedScorer::new(recorded_scores(&loaded));
    let again = search(&loaded.seed, cons, target, &scorer, steps).map_err(|e| e.to_string())?;
    ensure!(scorer.misses() == 0, "replay asked for unrecorded configs");
    ensure!(again.to_jsonl() == text, "replayed trajectory differs");
    Ok(())
}

fn contraction() -> Check {
    let mut runs = 0;
    let mut steps_total = 0;
    for name in ["tinyvit-21m", "tinyvit-11m", "tinyvit-5m"] {
        let seed = ModelConfig::preset(name).unwrap();
        let p0 = ModelStats::of(&seed).params;
        let t0 = throughput_proxy(&seed, 224);
        for salt in 0..4u64 {
            let hashed = FnScorer(move |c: &ModelConfig| (splitmix64(salt ^ ModelStats::of(c).params) % 997) as f64);
            let neg = FnScorer(|c: &ModelConfig| -(ModelStats::of(c).params as f64));
            let fast = FnScorer(|c: &ModelConfig| throughput_proxy(c, 224));
            let scorers: [&dyn Scorer; 3] = [&hashed, &neg, &fast];
            let cons = Constraint {
                max_params: p0 + salt * 500_000,
                min_throughput: (salt % 2 == 1).then_some(t0),
            };
            for scorer in scorers {
                let t = search(&seed, &cons, p0 / 2, scorer, 300).map_err(|e| e.to_string())?;
                steps_total += check_trajectory(&t, &cons)?;
                replays(&t, &cons, p0 / 2, 300)?;
                runs += 1;
            }
        }
    }
    // Short-horizon distillation scoring on micro-scale candidates.
    let mut seed = micro();
    seed.contraction.embed_dims = [8, 16, 32, 64];
    let data = synth_corpus(&SynthSpec::new(10, 2, 32, 5)).unwrap();
    let run = RunConfig {
        run_seed: 3,
        epochs: 1,
        batch_size: 10,
        k: 4,
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    teacher_save(&TinyVit::build(&micro(), 9).unwrap(), &data, &run, &[0], dir.path(), 1).map_err(|e| e.to_string())?;
    let scorer = DistillScorer {
        corpus: data,
        cache_dir: dir.path().to_path_buf(),
        run,
        init_seed: 1,
    };
    let p0 = ModelStats::of(&seed).params;
    let cons = Constraint {
        max_params: p0,
        min_throughput: None,
    };
    let a = search(&seed, &cons, p0 / 2, &scorer, 3).map_err(|e| e.to_string())?;
    let b = search(&seed, &cons, p0 / 2, &scorer, 3).map_err(|e| e.to_string())?;
    ensure!(a.to_jsonl() == b.to_jsonl(), "distill-scored search is not deterministic");
    steps_total += check_trajectory(&a, &cons)?;
    replays(&a, &cons, p0 / 2, 3)?;
    Ok(format!("{} trajectories, {steps_total} steps; constraints held, params decreasing, replays exact", runs + 1))
}

// ----------------------------------------------------------------------------

/// A teacher that learned from a clean pool distills into students whose own
/// data carries noisy labels, the setting large-scale pretraining is in:
/// scratch students fit the noisy labels, distilled students never read them.
fn distillation_benefit() -> Check {
    let mut spec = SynthSpec::new(10, 70, 32, 7);
    spec.noise = 30.0;
    spec.jitter = 1.5;
    let clean = synth_corpus(&spec).unwrap();
    spec.label_noise = 0.3;
    let noisy = synth_corpus(&spec).unwrap();
    // Rows 0–39 teach the teacher, 20–49 carry the students, 50–69 test.
    let teacher_pool = clean.subset(|i| i / 10 < 40).unwrap();
    let student_pool = noisy.subset(|i| (20..50).contains(&(i / 10))).unwrap();
    let test = clean.subset(|i| i / 10 >= 50).unwrap();
    let mut wide = micro();
    wide.contraction.embed_dims = [16, 32, 64, 96];
    let tcfg = RunConfig {
        run_seed: 1,
        epochs: 30,
        batch_size: 16,
        optim: OptimConfig {
            lr: 3e-3,
            warmup_steps: 20,
            ..OptimConfig::default()
        },
        ..RunConfig::default()
    };
    let (teacher, _) = train_supervised(TinyVit::build(&wide, 100).unwrap(), &teacher_pool, &tcfg).map_err(|e| e.to_string())?;
    let teacher_acc = evaluate(&teacher, &test).unwrap();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let cfg = RunConfig {
            run_seed: 10 + seed,
            epochs: 30,
            batch_size: 16,
            k: 10,
            optim: OptimConfig {
                lr: 3e-3,
                warmup_steps: 10,
                ..OptimConfig::default()
            },
            ..RunConfig::default()
        };
        let (scratch, _) = train_supervised(TinyVit::build(&micro(), seed).unwrap(), &student_pool, &cfg).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().unwrap();
        let epochs: Vec<u32> = (0..cfg.epochs).collect();
        teacher_save(&teacher, &student_pool, &cfg, &epochs, dir.path(), 1).map_err(|e| e.to_string())?;
        let (distilled, _) =
            student_train_replay(TinyVit::build(&micro(), seed).unwrap(), &student_pool, dir.path(), &cfg).map_err(|e| e.to_string())?;
        let (a, b) = (evaluate(&scratch, &test).unwrap(), evaluate(&distilled, &test).unwrap());
        wins += (b >= a) as usize;
        rows.push(format!("{b:.3}/{a:.3}"));
    }
    let detail = format!("teacher {teacher_acc:.3}; distilled/scratch {}; {wins}/5 wins", rows.join(" "));
    ensure!(wins >= 4, "{detail}");
    Ok(detail)
}

// ----------------------------------------------------------------------------

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tinyvit"))
        .args(args)
        .env_remove("TINYVIT_CACHE_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Check {
    let root = tempfile::tempdir().unwrap();
    let p = |n: &str| root.path().join(n).to_str().unwrap().to_string();
    cli(&["synth-corpus", "--out", &p("corpus"), "--classes", "10", "--per-class", "4", "--seed", "3"])?;
    cli(&["init-model", "--config", "micro", "--seed", "1", "--out", &p("teacher.tvm")])?;
    let save = |out: &str, parallel: &str| {
        cli(&[
            "save-logits", "--teacher", &p("teacher.tvm"), "--corpus", &p("corpus"), "--epochs", "3", "--k", "5",
            "--run-seed", "9", "--batch-size", "8", "--mix", "mixup", "--out-dir", &p(out), "--parallel", parallel,
        ])
    };
    save("serial_a", "1")?;
    save("serial_b", "1")?;
    save("parallel", "2")?;
    let a = dir_bytes(Path::new(&p("serial_a")));
    ensure!(a.len() == 4, "expected 3 epoch files and a run file, found {}", a.len());
    ensure!(a == dir_bytes(Path::new(&p("serial_b"))), "serial reruns differ");
    ensure!(a == dir_bytes(Path::new(&p("parallel"))), "--parallel 2 differs from serial");
    let train = |cache: &str, tag: &str| {
        cli(&[
            "train", "--student-config", "micro", "--init-seed", "2", "--cache-dir", &p(cache), "--corpus",
            &p("corpus"), "--trace-out", &p(&format!("{tag}.jsonl")), "--model-out", &p(&format!("{tag}.tvm")),
        ])
    };
    train("serial_a", "t1")?;
    train("serial_a", "t2")?;
    train("parallel", "t3")?;
    let read = |n: &str| std::fs::read(p(n)).unwrap();
    let trace = read("t1.jsonl");
    ensure!(trace.iter().filter(|&&b| b == b'\n').count() == 3 * 5, "unexpected trace length");
    for t in ["t2", "t3"] {
        ensure!(read(&format!("{t}.jsonl")) == trace, "{t} trace differs");
        ensure!(read(&format!("{t}.tvm")) == read("t1.tvm"), "{t} model differs");
    }
    Ok("3 cache runs and 3 training runs byte-identical".into())
}

// ----------------------------------------------------------------------------

/// Pearson correlation written out from sums of products.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|y| y * y).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn correlation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let c = rng.random_range(2..=30);
        let n = c * rng.random_range(1..=6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
        for raw in [true, false] {
            let m = class_correlation(&rows, &labels, c, raw).map_err(|e| e.to_string())?;
            let pred: Vec<Vec<f64>> = if raw { rows.clone() } else { rows.iter().map(|r| softmax(r)).collect() };
            let means: Vec<Vec<f64>> = (0..c)
                .map(|k| {
                    let members: Vec<&Vec<f64>> = (0..n).filter(|&i| labels[i] as usize == k).map(|i| &pred[i]).collect();
                    (0..c).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64).collect()
                })
                .collect();
            for i in 0..c {
                for j in 0..c {
                    let want = if i == j { 1.0 } else { pearson(&means[i], &means[j]) };
                    let err = (m.get(i, j) - want).abs();
                    worst = worst.max(err);
                    ensure!(err < 1e-10, "trial {trial} raw={raw} ({i},{j}): {} vs {want}", m.get(i, j));
                }
            }
        }
    }
    let row: Vec<f64> = (0..12).map(|j| (j as f64 * 0.7).cos()).collect();
    let rows = vec![row; 36];
    let labels: Vec<u32> = (0..36).map(|i| i % 12).collect();
    for raw in [true, false] {
        let m = class_correlation(&rows, &labels, 12, raw).map_err(|e| e.to_string())?;
        ensure!(m.values.iter().all(|v| (v - 1.0).abs() < 1e-10), "identical predictions: not all ones");
        ensure!(m.degenerate.is_empty(), "identical non-constant predictions flagged degenerate");
    }
    Ok(format!("40 random matrices, worst error {worst:.1e}; identical predictions → all ones"))
}

// ----------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("sparse-label roundtrip and mass conservation", sparse_labels, Duration::from_secs(10)),
        ("cached replay equals online distillation", replay_equivalence, Duration::from_secs(120)),
        ("storage estimates and linearity", storage, Duration::MAX),
        ("parameter and MAC accounting", accounting, Duration::from_secs(30)),
        ("resolution adaptation", window_mapping, Duration::MAX),
        ("gradient fidelity", gradients, Duration::from_secs(300)),
        ("contraction search", contraction, Duration::MAX),
        ("distillation benefit", distillation_benefit, Duration::from_secs(600)),
        ("determinism of save-logits and train", determinism, Duration::MAX),
        ("class correlation", correlation, Duration::MAX),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > limit => Err(format!("{detail}; took {took:.1?}, limit {limit:.0?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{took:.1?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
