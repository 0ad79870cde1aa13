use std::path::Path;

use tinyvit::cache::{epoch_path, EpochReader, ValuePrecision};
use tinyvit::corpus::{synth_corpus, Corpus, LabelAudit, SynthSpec};
use tinyvit::distill::{
    class_correlation, student_train_online, student_train_replay, teacher_save, train_supervised,
    LossTrace, OptimConfig, RunConfig,
};
use tinyvit::model::{ModelConfig, TinyVit};

fn corpus(n_per_class: usize) -> Corpus {
    synth_corpus(&SynthSpec::new(10, n_per_class, 40, 3)).unwrap()
}

fn micro(seed: u64) -> TinyVit {
    TinyVit::build(&ModelConfig::preset("micro").unwrap(), seed).unwrap()
}

fn run(epochs: u32, k: usize) -> RunConfig {
    RunConfig {
        run_seed: 17,
        epochs,
        batch_size: 8,
        k,
        optim: OptimConfig {
            warmup_steps: 2,
            ..OptimConfig::default()
        },
        ..RunConfig::default()
    }
}

fn epochs(cfg: &RunConfig) -> Vec<u32> {
    (0..cfg.epochs).collect()
}

fn bits(t: &LossTrace) -> Vec<(u64, u64)> {
    t.entries.iter().map(|e| (e.loss_bits, e.checksum)).collect()
}

fn replay_vs_online(cfg: &RunConfig) {
    let data = corpus(3);
    let teacher = micro(1);
    let dir = tempfile::tempdir().unwrap();
    teacher_save(&teacher, &data, cfg, &epochs(cfg), dir.path(), 1).unwrap();
    let (a, ta) = student_train_replay(micro(2), &data, dir.path(), cfg).unwrap();
    let (b, tb) = student_train_online(micro(2), &teacher, &data, cfg).unwrap();
    assert_eq!(ta.entries.len(), 2 * 4);
    assert_eq!(bits(&ta), bits(&tb));
    assert_eq!(a.theta(), b.theta());
}

#[test]
fn replay_matches_online_with_augmentation() {
    replay_vs_online(&run(2, 10));
}

#[test]
fn replay_matches_online_with_mixup_and_sparse_labels() {
    let mut cfg = run(2, 3);
    cfg.mix_enabled = true;
    cfg.mix.choice = tinyvit::aug::MixChoice::Either { cutmix_prob: 0.5 };
    replay_vs_online(&cfg);
}

#[test]
fn teacher_pass_never_reads_labels() {
    let data = corpus(2);
    let audit = LabelAudit::new(&data);
    let dir = tempfile::tempdir().unwrap();
    teacher_save(&micro(1), &audit, &run(1, 4), &[0], dir.path(), 1).unwrap();
    assert_eq!(audit.label_reads(), 0);
}

#[test]
fn replay_without_ground_truth_never_reads_labels() {
    let data = corpus(2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = run(1, 4);
    teacher_save(&micro(1), &data, &cfg, &[0], dir.path(), 1).unwrap();
    let audit = LabelAudit::new(&data);
    student_train_replay(micro(2), &audit, dir.path(), &cfg).unwrap();
    assert_eq!(audit.label_reads(), 0);
    let with_gt = RunConfig {
        use_ground_truth: true,
        ..cfg.clone()
    };
    let (_, a) = student_train_replay(micro(2), &audit, dir.path(), &with_gt).unwrap();
    assert!(audit.label_reads() > 0);
    let (_, b) = student_train_replay(micro(2), &data, dir.path(), &cfg).unwrap();
    assert_ne!(bits(&a), bits(&b));
}

fn cache_bytes(dir: &Path, n: u32) -> Vec<Vec<u8>> {
    (0..n).map(|e| std::fs::read(epoch_path(dir, e)).unwrap()).collect()
}

#[test]
fn parallel_teacher_pass_is_byte_identical() {
    let data = corpus(2);
    let cfg = RunConfig {
        value_precision: ValuePrecision::Single,
        ..run(3, 5)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    teacher_save(&micro(1), &data, &cfg, &epochs(&cfg), a.path(), 1).unwrap();
    let saved = teacher_save(&micro(1), &data, &cfg, &epochs(&cfg), b.path(), 2).unwrap();
    assert_eq!(saved.len(), 3);
    assert_eq!(cache_bytes(a.path(), 3), cache_bytes(b.path(), 3));
    for s in saved {
        assert_eq!(std::fs::metadata(&s.path).unwrap().len(), s.bytes);
    }
}

#[test]
fn stored_labels_are_the_teacher_top_k() {
    let data = corpus(1);
    let cfg = run(1, 3);
    let dir = tempfile::tempdir().unwrap();
    teacher_save(&micro(1), &data, &cfg, &[0], dir.path(), 1).unwrap();
    let r = EpochReader::open(&epoch_path(dir.path(), 0)).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(rec.indices.len(), 3);
        assert!(rec.indices.windows(2).all(|w| w[0] < w[1]));
        // Top-3 of 10 classes holds at least 3/10 of the mass.
        assert!(rec.mass() <= 1.0 && rec.mass() >= 0.3 - 1e-3, "{}", rec.mass());
    }
}

#[test]
fn header_mismatches_are_refused() {
    let data = corpus(1);
    let cfg = run(1, 4);
    let dir = tempfile::tempdir().unwrap();
    teacher_save(&micro(1), &data, &cfg, &[0], dir.path(), 1).unwrap();
    let cases = [
        RunConfig { k: 5, ..cfg.clone() },
        RunConfig { run_seed: 18, ..cfg.clone() },
        RunConfig { epochs: 2, ..cfg.clone() },
    ];
    for bad in &cases {
        // A missing epoch file is an I/O error, the rest are mismatches.
        let e = student_train_replay(micro(2), &data, dir.path(), bad).unwrap_err();
        if bad.epochs == 1 {
            assert!(e.to_string().starts_with("cache/config mismatch"), "{e}");
        }
    }
    let fewer = data.subset(|i| i < 5).unwrap();
    let e = student_train_replay(micro(2), &fewer, dir.path(), &cfg).unwrap_err();
    assert!(e.to_string().starts_with("cache/config mismatch"));
    let mut c8 = ModelConfig::preset("micro").unwrap();
    c8.num_classes = 8;
    let e = student_train_replay(TinyVit::build(&c8, 0).unwrap(), &data, dir.path(), &cfg).unwrap_err();
    assert!(e.to_string().starts_with("cache/config mismatch"));
}

#[test]
fn zero_steps_leave_the_student_unchanged() {
    let data = corpus(1);
    let cfg = run(0, 4);
    let dir = tempfile::tempdir().unwrap();
    let s = micro(2);
    let (t, trace) = student_train_replay(s.clone(), &data, dir.path(), &cfg).unwrap();
    assert!(trace.entries.is_empty());
    assert_eq!(t.theta(), s.theta());
    assert_eq!(t.buffers(), s.buffers());
}

#[test]
fn label_smoothing_of_the_tail_changes_traces() {
    let mut c8 = ModelConfig::preset("micro").unwrap();
    c8.num_classes = 8;
    let data = synth_corpus(&SynthSpec::new(8, 2, 40, 4)).unwrap();
    let teacher = TinyVit::build(&c8, 1).unwrap();
    let student = TinyVit::build(&c8, 2).unwrap();
    let traces: Vec<LossTrace> = [8, 7]
        .iter()
        .map(|&k| {
            let cfg = run(1, k);
            let dir = tempfile::tempdir().unwrap();
            teacher_save(&teacher, &data, &cfg, &[0], dir.path(), 1).unwrap();
            student_train_replay(student.clone(), &data, dir.path(), &cfg).unwrap().1
        })
        .collect();
    assert_ne!(bits(&traces[0]), bits(&traces[1]));
    assert_eq!(traces[0].entries[0].checksum, traces[1].entries[0].checksum);
}

#[test]
fn replay_is_deterministic_across_runs() {
    let data = corpus(2);
    let cfg = run(2, 4);
    let dir = tempfile::tempdir().unwrap();
    teacher_save(&micro(1), &data, &cfg, &epochs(&cfg), dir.path(), 1).unwrap();
    let (_, a) = student_train_replay(micro(2), &data, dir.path(), &cfg).unwrap();
    let (_, b) = student_train_replay(micro(2), &data, dir.path(), &cfg).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
}

#[test]
fn supervised_training_lowers_the_loss() {
    let data = corpus(4);
    let cfg = RunConfig {
        augment: false,
        optim: OptimConfig {
            lr: 5e-3,
            warmup_steps: 1,
            ..OptimConfig::default()
        },
        ..run(6, 10)
    };
    let (_, trace) = train_supervised(micro(3), &data, &cfg).unwrap();
    let means = trace.epoch_means();
    assert!(means.last().unwrap().1 < means[0].1, "{means:?}");
}

#[test]
fn correlation_matches_direct_formula() {
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.5).collect())
        .collect();
    let labels: Vec<u32> = (0..12).map(|i| i % 4).collect();
    let m = class_correlation(&rows, &labels, 4, true).unwrap();
    let mean = |c: u32| -> Vec<f64> {
        let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        (0..4).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64).collect()
    };
    for i in 0..4 {
        for j in 0..4 {
            let (a, b) = (mean(i), mean(j));
            let (ma, mb) = (a.iter().sum::<f64>() / 4.0, b.iter().sum::<f64>() / 4.0);
            let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            let want = cov / (va * vb).sqrt();
            assert!((m.get(i as usize, j as usize) - want).abs() < 1e-10);
        }
    }
}
