use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::corpus::Corpus;
use crate::distill::{student_train_replay, RunConfig};
use crate::model::{ContractionConfig, ModelConfig, TinyVit};

/// Candidate quality; higher is better. Must be deterministic for the
/// search to be.
pub trait Scorer: Sync {
    fn score(&self, config: &ModelConfig) -> f64;
}

/// Wraps a closure.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&ModelConfig) -> f64 + Sync> Scorer for FnScorer<F> {
    fn score(&self, config: &ModelConfig) -> f64 {
        (self.0)(config)
    }
}

pub(crate) fn key(c: &ContractionConfig) -> String {
    serde_json::to_string(c).expect("plain data")
}

/// Replays the scores a trajectory recorded. Unknown configs score −∞ and
/// are counted.
pub struct RecordedScorer {
    scores: BTreeMap<String, f64>,
    misses: AtomicUsize,
}

impl RecordedScorer {
    pub fn new(scores: BTreeMap<String, f64>) -> Self {
        RecordedScorer {
            scores,
            misses: AtomicUsize::new(0),
        }
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}

impl Scorer for RecordedScorer {
    fn score(&self, config: &ModelConfig) -> f64 {
        match self.scores.get(&key(&config.contraction)) {
            Some(&v) => v,
            None => {
                self.misses.fetch_add(1, Ordering::SeqCst);
                f64::NEG_INFINITY
            }
        }
    }
}

/// Short-horizon distillation: trains the candidate from a teacher cache
/// and scores it by the negated mean loss of its last epoch.
pub struct DistillScorer {
    pub corpus: Corpus,
    pub cache_dir: PathBuf,
    pub run: RunConfig,
    pub init_seed: u64,
}

impl Scorer for DistillScorer {
    fn score(&self, config: &ModelConfig) -> f64 {
        let result = TinyVit::build(config, self.init_seed)
            .and_then(|m| student_train_replay(m, &self.corpus, &self.cache_dir, &self.run));
        match result {
            Ok((_, trace)) => trace.epoch_means().last().map_or(f64::NEG_INFINITY, |e| -e.1),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}
