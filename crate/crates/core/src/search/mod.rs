//! Progressive model contraction: constrained local search over the
//! contraction factors.

mod neighbors;
mod scorer;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContractionConfig, ModelConfig, ModelStats};

pub use neighbors::neighbors;
pub use scorer::{DistillScorer, FnScorer, RecordedScorer, Scorer};

/// Seconds per multiply-accumulate of the proxy device (7 TMAC/s).
pub const PROXY_SECONDS_PER_MAC: f64 = 1.0 / 7.0e12;
/// Seconds per byte of memory traffic (900 GB/s).
pub const PROXY_SECONDS_PER_BYTE: f64 = 1.0 / 9.0e11;
/// Bytes per stored value (half precision inference).
const PROXY_VALUE_BYTES: f64 = 2.0;

/// Memory traffic of one forward pass, in values: every weight is read
/// once, and every block reads and writes its input map plus its widest
/// intermediate (MBConv hidden map, MLP hidden map).
fn traffic_values(config: &ModelConfig) -> f64 {
    let c = &config.contraction;
    let res = config.stage_resolutions();
    let mut v = ModelStats::of(config).params as f64;
    for s in 0..4 {
        let tokens = (res[s] * res[s]) as f64;
        let dim = c.embed_dims[s] as f64;
        let hidden = if s == 0 { c.mbconv_hidden() } else { c.mlp_hidden(s) } as f64;
        v += c.depths[s] as f64 * 2.0 * tokens * (dim + hidden);
    }
    v
}

/// Images per second of the proxy device: `1 / (a·MACs + b·bytes)` with
/// `a` = [`PROXY_SECONDS_PER_MAC`] and `b` = [`PROXY_SECONDS_PER_BYTE`].
pub fn throughput_proxy(config: &ModelConfig, resolution: usize) -> f64 {
    let mut c = config.clone();
    c.resolution = resolution;
    let macs = ModelStats::of(&c).macs as f64;
    let bytes = traffic_values(&c) * PROXY_VALUE_BYTES;
    1.0 / (PROXY_SECONDS_PER_MAC * macs + PROXY_SECONDS_PER_BYTE * bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub max_params: u64,
    /// Proxy images/second floor; `None` leaves throughput unconstrained.
    pub min_throughput: Option<f64>,
}

impl Constraint {
    pub fn validate(&self) -> Result<()> {
        if self.max_params == 0 {
            return Err(Error::InvalidSearch("max_params must be positive".into()));
        }
        Ok(())
    }

    pub fn admits(&self, config: &ModelConfig, stats: &ModelStats) -> bool {
        stats.params <= self.max_params
            && self
                .min_throughput
                .is_none_or(|t| throughput_proxy(config, config.resolution) >= t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: ContractionConfig,
    pub stats: ModelStats,
    pub feasible: bool,
    /// Only feasible candidates are scored.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub step: usize,
    pub parent: ContractionConfig,
    pub candidates: Vec<Candidate>,
    pub chosen: Option<usize>,
}

impl SearchStep {
    pub fn chosen_candidate(&self) -> Option<&Candidate> {
        self.chosen.map(|i| &self.candidates[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The last chosen config is at or below the target.
    Reached,
    /// No feasible neighbor was left before the target.
    Stuck,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: ModelConfig,
    pub steps: Vec<SearchStep>,
    pub outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Seed { config: String },
    Step(SearchStep),
    End { outcome: Outcome },
}

impl Trajectory {
    /// The config chosen at each step, in order.
    pub fn path(&self) -> Vec<ModelConfig> {
        self.steps
            .iter()
            .filter_map(|s| s.chosen_candidate())
            .map(|c| ModelConfig {
                contraction: c.config.clone(),
                ..self.seed.clone()
            })
            .collect()
    }

    pub fn final_config(&self) -> ModelConfig {
        self.path().pop().unwrap_or_else(|| self.seed.clone())
    }

    /// One JSON object per line: the seed, every step, the outcome.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |l: &Line| {
            out.push_str(&serde_json::to_string(l).expect("plain data"));
            out.push('\n');
        };
        line(&Line::Seed {
            config: self.seed.to_text(),
        });
        for s in &self.steps {
            line(&Line::Step(s.clone()));
        }
        line(&Line::End {
            outcome: self.outcome,
        });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidSearch(format!("trajectory: {m}"));
        let mut seed = None;
        let mut steps = Vec::new();
        let mut outcome = None;
        for l in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<Line>(l).map_err(|e| bad(e.to_string()))? {
                Line::Seed { config } => seed = Some(ModelConfig::from_text(&config)?),
                Line::Step(s) => steps.push(s),
                Line::End { outcome: o } => outcome = Some(o),
            }
        }
        Ok(Trajectory {
            seed: seed.ok_or_else(|| bad("missing seed line".into()))?,
            steps,
            outcome: outcome.ok_or_else(|| bad("missing end line".into()))?,
        })
    }
}

fn config_key(c: &ContractionConfig) -> (Vec<usize>, u64, u64, usize) {
    let mut v: Vec<usize> = c.embed_dims.to_vec();
    v.extend(c.depths);
    v.extend(c.window_sizes);
    (v, c.mbconv_expansion.to_bits(), c.mlp_ratio.to_bits(), c.head_dim)
}

/// Higher score first, then fewer parameters, then the lexicographically
/// smaller config.
fn better(a: &Candidate, b: &Candidate) -> Ordering {
    let (sa, sb) = (a.score.unwrap_or(f64::NEG_INFINITY), b.score.unwrap_or(f64::NEG_INFINITY));
    sb.total_cmp(&sa)
        .then(a.stats.params.cmp(&b.stats.params))
        .then_with(|| config_key(&a.config).cmp(&config_key(&b.config)))
}

/// Greedy constrained descent from `seed` until the chosen config has at
/// most `target_params` parameters, no feasible neighbor is left, or
/// `max_steps` steps have run. Scoring within a step runs in parallel; the
/// selection does not depend on completion order.
pub fn search(
    seed: &ModelConfig,
    constraint: &Constraint,
    target_params: u64,
    scorer: &dyn Scorer,
    max_steps: usize,
) -> Result<Trajectory> {
    seed.validate()?;
    constraint.validate()?;
    let seed_stats = ModelStats::of(seed);
    if !constraint.admits(seed, &seed_stats) {
        return Err(Error::SeedViolatesConstraint(format!(
            "{} parameters, limit {}",
            seed_stats.params, constraint.max_params
        )));
    }
    if target_params >= seed_stats.params {
        return Err(Error::InvalidSearch(format!(
            "target {target_params} is not below the seed's {} parameters",
            seed_stats.params
        )));
    }
    let mut current = seed.clone();
    let mut steps = Vec::new();
    for step in 0..max_steps {
        let candidates: Vec<Candidate> = neighbors(&current)
            .par_iter()
            .map(|c| {
                let stats = ModelStats::of(c);
                let feasible = constraint.admits(c, &stats);
                Candidate {
                    config: c.contraction.clone(),
                    stats,
                    feasible,
                    score: feasible.then(|| scorer.score(c)),
                }
            })
            .collect();
        let chosen = (0..candidates.len())
            .filter(|&i| candidates[i].feasible)
            .min_by(|&a, &b| better(&candidates[a], &candidates[b]));
        let record = SearchStep {
            step,
            parent: current.contraction.clone(),
            candidates,
            chosen,
        };
        let Some(i) = chosen else {
            steps.push(record);
            return Ok(Trajectory {
                seed: seed.clone(),
                steps,
                outcome: Outcome::Stuck,
            });
        };
        current.contraction = record.candidates[i].config.clone();
        let params = record.candidates[i].stats.params;
        steps.push(record);
        if params <= target_params {
            return Ok(Trajectory {
                seed: seed.clone(),
                steps,
                outcome: Outcome::Reached,
            });
        }
    }
    Ok(Trajectory {
        seed: seed.clone(),
        steps,
        outcome: Outcome::MaxSteps,
    })
}

/// Every `(config, score)` pair a trajectory recorded.
pub fn recorded_scores(t: &Trajectory) -> BTreeMap<String, f64> {
    t.steps
        .iter()
        .flat_map(|s| s.candidates.iter())
        .filter_map(|c| c.score.map(|v| (scorer::key(&c.config), v)))
        .collect()
}
