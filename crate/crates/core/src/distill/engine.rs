//! Teacher pass, student replay and plain supervised training.

use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};
use rayon::prelude::*;

use super::config::RunConfig;
use super::loss::batch_loss;
use super::optim::{AdamW, OptimConfig};
use super::trace::LossTrace;
use crate::aug::{apply, decode, encode, shuffle_seed, splitmix64, AugParams, AugSeed, PcgState, PipelineSpec, PIPELINE_VERSION};
use crate::cache::{epoch_path, write_epoch, CacheRecord, EpochHeader, EpochReader, FORMAT_VERSION};
use crate::corpus::{epoch_plan, EpochPlan, SampleSource};
use crate::error::{Error, Result};
use crate::image::AugImage;
use crate::label_codec::{densify, normalize, sparsify, SparseLabel, Temperature};
use crate::model::{Batch, Mode, TinyVit};

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const DROP_STREAM: u64 = 0x4452_4F50;
const EVAL_BATCH: usize = 64;

/// A sample after augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub params: AugParams,
    pub image: AugImage,
}

/// Decodes `seed` and renders the sample it belongs to, pairing it with its
/// mix partner from `plan`.
pub fn render_sample<S: SampleSource>(
    corpus: &S,
    spec: &PipelineSpec,
    plan: &EpochPlan,
    seed: AugSeed,
) -> Result<Rendered> {
    let id = seed.sample_id;
    let mut params = decode(&seed, spec)?;
    if let Some(p) = &plan.partner {
        params = params.with_partner(p[id as usize]);
    }
    let partner = params
        .mix
        .and_then(|m| m.partner)
        .map(|p| corpus.image(p as usize));
    let image = apply(corpus.image(id as usize), &params, spec.image_size, partner)?;
    Ok(Rendered { params, image })
}

/// CRC-64/XZ over the batch's pixels, as stored in loss traces.
pub fn batch_checksum(images: &[AugImage]) -> u64 {
    let mut d = CRC64.digest();
    for img in images {
        d.update(&img.to_le_bytes());
    }
    d.finalize()
}

/// Teacher inference on a batch: tempered softmax then top-`k`.
pub fn teacher_labels(
    teacher: &TinyVit,
    images: &[AugImage],
    temperature: Temperature,
    k: usize,
) -> Result<Vec<SparseLabel>> {
    let c = teacher.num_classes();
    let logits = teacher.forward(&Batch::from_images(images)?)?;
    logits
        .chunks(c)
        .map(|z| sparsify(&normalize(z, temperature)?, k))
        .collect()
}

/// Model predictions without augmentation: `N×C` logits. Inputs are the
/// corpus images resized to the model's resolution and normalized.
pub fn predict<S: SampleSource>(model: &TinyVit, corpus: &S) -> Result<Vec<Vec<f64>>> {
    let params = AugParams::identity(corpus.image_size());
    let r = model.config().resolution;
    let c = model.num_classes();
    let mut out = Vec::with_capacity(corpus.num_samples());
    for start in (0..corpus.num_samples()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(corpus.num_samples());
        let images = (start..end)
            .map(|i| apply(corpus.image(i), &params, r, None))
            .collect::<Result<Vec<_>>>()?;
        let logits = model.forward(&Batch::from_images(&images)?)?;
        out.extend(logits.chunks(c).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Top-1 accuracy against the corpus labels.
pub fn evaluate<S: SampleSource>(model: &TinyVit, corpus: &S) -> Result<f64> {
    let preds = predict(model, corpus)?;
    let mut correct = 0usize;
    for (i, z) in preds.iter().enumerate() {
        let y = corpus
            .label(i)
            .ok_or_else(|| Error::Corpus(format!("sample {i} has no label")))?;
        let best = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
            .0;
        correct += (best == y as usize) as usize;
    }
    Ok(correct as f64 / preds.len() as f64)
}

/// Written epoch file.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedEpoch {
    pub epoch: u32,
    pub path: PathBuf,
    pub bytes: u64,
}

fn epoch_header(cfg: &RunConfig, epoch: u32, num_samples: usize, num_classes: usize) -> EpochHeader {
    EpochHeader {
        format_version: FORMAT_VERSION,
        pipeline_version: PIPELINE_VERSION,
        epoch,
        run_seed: cfg.run_seed,
        num_samples: num_samples as u64,
        num_classes: num_classes as u32,
        k: cfg.k as u32,
        value_precision: cfg.value_precision,
        shuffle_seed: shuffle_seed(cfg.run_seed, epoch),
    }
}

fn check_compatible<S: SampleSource>(model: &TinyVit, corpus: &S, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    if corpus.num_samples() == 0 {
        return Err(Error::Corpus("empty corpus".into()));
    }
    if model.num_classes() != corpus.num_classes() {
        return Err(Error::CacheConfigMismatch(format!(
            "model has {} classes, corpus {}",
            model.num_classes(),
            corpus.num_classes()
        )));
    }
    if cfg.k > corpus.num_classes() {
        return Err(Error::KExceedsClassCount {
            k: cfg.k,
            classes: corpus.num_classes(),
        });
    }
    Ok(())
}

/// Renders one epoch's augmented samples in sample-id order, runs the
/// teacher on them and returns the records of the epoch file.
pub fn teacher_epoch<S: SampleSource>(
    teacher: &TinyVit,
    corpus: &S,
    cfg: &RunConfig,
    epoch: u32,
) -> Result<Vec<CacheRecord>> {
    check_compatible(teacher, corpus, cfg)?;
    let spec = cfg.pipeline(teacher.config().resolution, corpus.image_size());
    let plan = epoch_plan(cfg.run_seed, epoch, corpus.num_samples(), cfg.mix_enabled);
    let temperature = Temperature::new(cfg.temperature)?;
    let n = corpus.num_samples() as u64;
    let mut records = Vec::with_capacity(n as usize);
    for start in (0..n).step_by(cfg.batch_size) {
        let seeds: Vec<AugSeed> = (start..(start + cfg.batch_size as u64).min(n))
            .map(|id| encode(cfg.run_seed, epoch, id))
            .collect();
        let images = seeds
            .iter()
            .map(|s| Ok(render_sample(corpus, &spec, &plan, *s)?.image))
            .collect::<Result<Vec<_>>>()?;
        for (s, label) in seeds.iter().zip(teacher_labels(teacher, &images, temperature, cfg.k)?) {
            records.push(CacheRecord::from_label(s.d0, &label, cfg.value_precision));
        }
    }
    Ok(records)
}

/// The teacher pass: writes one epoch file per entry of `epochs` into
/// `dir`, with up to `threads` epochs in flight. Output does not depend on
/// `threads`. Never reads ground-truth labels.
pub fn teacher_save<S: SampleSource>(
    teacher: &TinyVit,
    corpus: &S,
    cfg: &RunConfig,
    epochs: &[u32],
    dir: &Path,
    threads: usize,
) -> Result<Vec<SavedEpoch>> {
    check_compatible(teacher, corpus, cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let one = |epoch: u32| -> Result<SavedEpoch> {
        let records = teacher_epoch(teacher, corpus, cfg, epoch)?;
        let header = epoch_header(cfg, epoch, corpus.num_samples(), corpus.num_classes());
        let path = epoch_path(dir, epoch);
        write_epoch(&path, &header, records)?;
        Ok(SavedEpoch {
            epoch,
            path,
            bytes: header.file_size(),
        })
    };
    if threads <= 1 {
        return epochs.iter().map(|&e| one(e)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidRunConfig(format!("thread pool: {e}")))?;
    pool.install(|| epochs.par_iter().map(|&e| one(e)).collect())
}

/// Gradient-descent driver shared by every training mode.
pub struct Trainer {
    model: TinyVit,
    opt: AdamW,
    optim: OptimConfig,
    decays: Vec<bool>,
    total_steps: u64,
    step: u64,
    run_seed: u64,
    trace: LossTrace,
}

impl Trainer {
    pub fn new(model: TinyVit, optim: OptimConfig, total_steps: u64, run_seed: u64) -> Self {
        let mut decays = vec![false; model.layout().total];
        for s in &model.layout().specs {
            if s.kind.decays() {
                decays[s.range()].iter_mut().for_each(|d| *d = true);
            }
        }
        Trainer {
            opt: AdamW::new(optim, model.layout().total),
            model,
            optim,
            decays,
            total_steps,
            step: 0,
            run_seed,
            trace: LossTrace::default(),
        }
    }

    /// One optimizer step on `images` against dense `targets`. Batch norm
    /// runs on batch statistics, which are committed afterwards.
    pub fn step(
        &mut self,
        epoch: u32,
        images: &[AugImage],
        targets: &[Vec<f64>],
        hard: Option<(&[Vec<f64>], f64)>,
    ) -> Result<f64> {
        let checksum = batch_checksum(images);
        let batch = Batch::from_images(images)?;
        let mut drop = (self.model.config().drop_path_rate > 0.0)
            .then(|| PcgState::new(splitmix64(self.run_seed ^ self.step), DROP_STREAM));
        let (logits, tape) =
            self.model
                .forward_train(self.model.theta(), &batch, Mode::Train, drop.as_mut())?;
        let (loss, dlogits) = batch_loss(&logits, targets, hard)?;
        let mut grad = self.model.backward(self.model.theta(), &tape, &dlogits);
        self.model.commit_batch_stats(&tape);
        let lr = self.optim.lr_at(self.step, self.total_steps);
        self.opt.step(self.model.theta_mut(), &mut grad, &self.decays, lr);
        self.trace.push(epoch, self.step, loss, checksum);
        self.step += 1;
        Ok(loss)
    }

    pub fn model(&self) -> &TinyVit {
        &self.model
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }

    pub fn finish(self) -> (TinyVit, LossTrace) {
        (self.model, self.trace)
    }
}

/// Ground-truth target of a rendered sample: one-hot, blended with the
/// partner's label when the sample was mixed.
fn hard_target<S: SampleSource>(corpus: &S, id: u64, params: &AugParams) -> Result<Vec<f64>> {
    let label = |i: u64| {
        corpus
            .label(i as usize)
            .ok_or_else(|| Error::Corpus(format!("sample {i} has no label")))
    };
    let mut t = vec![0.0; corpus.num_classes()];
    match params.mix.and_then(|m| m.partner.map(|p| (m.lambda, p))) {
        Some((lambda, p)) => {
            t[label(id)? as usize] += lambda;
            t[label(p)? as usize] += 1.0 - lambda;
        }
        None => t[label(id)? as usize] = 1.0,
    }
    Ok(t)
}

type Soft<'a> = dyn FnMut(u32, &[u64], &[Rendered]) -> Result<Vec<Vec<f64>>> + 'a;

fn train_loop<S: SampleSource>(
    trainer: &mut Trainer,
    corpus: &S,
    cfg: &RunConfig,
    seed_of: &dyn Fn(u32, u64) -> Result<u32>,
    soft: &mut Soft<'_>,
    with_hard: bool,
) -> Result<()> {
    let spec = cfg.pipeline(trainer.model().config().resolution, corpus.image_size());
    for epoch in 0..cfg.epochs {
        let plan = epoch_plan(cfg.run_seed, epoch, corpus.num_samples(), cfg.mix_enabled);
        for ids in plan.order.chunks(cfg.batch_size) {
            let rendered = ids
                .iter()
                .map(|&id| {
                    let seed = AugSeed::stored(seed_of(epoch, id)?, epoch, id);
                    render_sample(corpus, &spec, &plan, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let targets = soft(epoch, ids, &rendered)?;
            let hard = if with_hard {
                Some(
                    ids.iter()
                        .zip(&rendered)
                        .map(|(&id, r)| hard_target(corpus, id, &r.params))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            let images: Vec<AugImage> = rendered.into_iter().map(|r| r.image).collect();
            trainer.step(
                epoch,
                &images,
                &targets,
                hard.as_deref().map(|h| (h, cfg.ground_truth_weight)),
            )?;
        }
    }
    Ok(())
}

fn trainer_for<S: SampleSource>(model: TinyVit, corpus: &S, cfg: &RunConfig) -> Trainer {
    let total = cfg.epochs as u64 * cfg.steps_per_epoch(corpus.num_samples());
    Trainer::new(model, cfg.optim, total, cfg.run_seed)
}

/// Opens and checks the epoch files `0..cfg.epochs` of `dir` against the
/// run. Every mismatch is reported before any training happens.
pub fn open_cache<S: SampleSource>(
    dir: &Path,
    student: &TinyVit,
    corpus: &S,
    cfg: &RunConfig,
) -> Result<Vec<EpochReader>> {
    check_compatible(student, corpus, cfg)?;
    (0..cfg.epochs)
        .map(|e| {
            let reader = EpochReader::open(&epoch_path(dir, e))?;
            let h = reader.header();
            let mismatch = |what: String| Err(Error::CacheConfigMismatch(what));
            if h.epoch != e {
                return mismatch(format!("file for epoch {e} holds epoch {}", h.epoch));
            }
            if h.num_classes as usize != student.num_classes() {
                return mismatch(format!(
                    "cache has {} classes, student {}",
                    h.num_classes,
                    student.num_classes()
                ));
            }
            if h.k as usize != cfg.k {
                return mismatch(format!("cache has k = {}, run k = {}", h.k, cfg.k));
            }
            if h.run_seed != cfg.run_seed {
                return mismatch(format!(
                    "cache run_seed {}, run {}",
                    h.run_seed, cfg.run_seed
                ));
            }
            if h.pipeline_version != PIPELINE_VERSION {
                return mismatch(format!(
                    "cache pipeline version {}, this build {PIPELINE_VERSION}",
                    h.pipeline_version
                ));
            }
            if h.num_samples != corpus.num_samples() as u64 {
                return mismatch(format!(
                    "cache has {} samples, corpus {}",
                    h.num_samples,
                    corpus.num_samples()
                ));
            }
            if h.shuffle_seed != shuffle_seed(cfg.run_seed, e) {
                return mismatch(format!("shuffle seed of epoch {e} does not match the run"));
            }
            Ok(reader)
        })
        .collect()
}

/// Trains `student` from the teacher's cache in `dir`: augmentations are
/// replayed from the stored seeds and targets are the densified stored
/// labels. No teacher is involved.
pub fn student_train_replay<S: SampleSource>(
    student: TinyVit,
    corpus: &S,
    dir: &Path,
    cfg: &RunConfig,
) -> Result<(TinyVit, LossTrace)> {
    let readers = open_cache(dir, &student, corpus, cfg)?;
    let c = corpus.num_classes();
    let mut trainer = trainer_for(student, corpus, cfg);
    let seed_of = |e: u32, id: u64| Ok(readers[e as usize].read_record(id)?.d0);
    let mut soft = |e: u32, ids: &[u64], _: &[Rendered]| {
        ids.iter()
            .map(|&id| {
                let label = readers[e as usize].read_record(id)?.to_label()?;
                Ok(densify(&label, c)?.into_probs())
            })
            .collect()
    };
    train_loop(&mut trainer, corpus, cfg, &seed_of, &mut soft, cfg.use_ground_truth)?;
    Ok(trainer.finish())
}

/// Reference path without a cache: the teacher runs on every batch and its
/// labels go through the same sparsify / quantize / densify steps the cache
/// would apply.
pub fn student_train_online<S: SampleSource>(
    student: TinyVit,
    teacher: &TinyVit,
    corpus: &S,
    cfg: &RunConfig,
) -> Result<(TinyVit, LossTrace)> {
    check_compatible(&student, corpus, cfg)?;
    check_compatible(teacher, corpus, cfg)?;
    let temperature = Temperature::new(cfg.temperature)?;
    let c = corpus.num_classes();
    let mut trainer = trainer_for(student, corpus, cfg);
    let seed_of = |e: u32, id: u64| Ok(encode(cfg.run_seed, e, id).d0);
    let mut soft = |_: u32, _: &[u64], rendered: &[Rendered]| {
        let images: Vec<AugImage> = rendered.iter().map(|r| r.image.clone()).collect();
        teacher_labels(teacher, &images, temperature, cfg.k)?
            .iter()
            .map(|l| {
                let stored = CacheRecord::from_label(0, l, cfg.value_precision).to_label()?;
                Ok(densify(&stored, c)?.into_probs())
            })
            .collect()
    };
    train_loop(&mut trainer, corpus, cfg, &seed_of, &mut soft, cfg.use_ground_truth)?;
    Ok(trainer.finish())
}

/// Supervised training on ground-truth labels with the run's augmentation;
/// fits teachers and from-scratch baselines.
pub fn train_supervised<S: SampleSource>(
    model: TinyVit,
    corpus: &S,
    cfg: &RunConfig,
) -> Result<(TinyVit, LossTrace)> {
    check_compatible(&model, corpus, &RunConfig { k: 1, ..cfg.clone() })?;
    let mut trainer = trainer_for(model, corpus, cfg);
    let seed_of = |e: u32, id: u64| Ok(encode(cfg.run_seed, e, id).d0);
    let mut soft = |_: u32, ids: &[u64], rendered: &[Rendered]| {
        ids.iter()
            .zip(rendered)
            .map(|(&id, r)| hard_target(corpus, id, &r.params))
            .collect()
    };
    train_loop(&mut trainer, corpus, cfg, &seed_of, &mut soft, false)?;
    Ok(trainer.finish())
}
