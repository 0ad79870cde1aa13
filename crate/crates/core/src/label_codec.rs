//! Sparse soft labels.
//!
//! A teacher distribution over `C` classes is reduced to its `K` largest
//! probabilities plus their class indices. Training recovers a full
//! distribution by keeping the stored entries and spreading the leftover
//! mass `1 - Σ stored` uniformly over the `C - K` classes that were dropped.

use crate::error::{Error, Result};

/// Tolerance on probability mass checks.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Divisor applied to logits before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub const UNIT: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(Error::InvalidTemperature(t))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::UNIT
    }
}

/// A probability vector over all classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDistribution {
    probs: Vec<f64>,
}

impl DenseDistribution {
    /// Validates that `probs` is a distribution: entries in `[0, 1]` summing
    /// to one within [`MASS_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyClassAxis);
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbabilityMass(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidProbabilityMass(format!("sum {total}")));
        }
        Ok(DenseDistribution { probs })
    }

    /// One-hot distribution on `class`.
    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::EmptyClassAxis);
        }
        if class >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: class,
                classes: num_classes,
            });
        }
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Ok(DenseDistribution { probs })
    }

    /// Wraps a vector without checking the mass. Used for targets recovered
    /// from quantized storage, whose mass may fall short of one.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        DenseDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Total-variation distance to `other`.
    pub fn total_variation(&self, other: &DenseDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Top-K class indices and their probabilities, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLabel {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseLabel {
    /// Builds a label from entries already in rank order (values
    /// non-increasing). Indices must be distinct.
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidRecord(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.is_empty() {
            return Err(Error::KNotPositive);
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidRecord("values not in rank order".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProbabilityMass(
                "negative or non-finite value".into(),
            ));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidRecord("duplicate class index".into()));
        }
        Ok(SparseLabel { indices, values })
    }

    /// Builds a label from `(index, value)` pairs in any order, restoring
    /// rank order: larger values first, lower class index on ties.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (indices, values) = pairs.into_iter().unzip();
        SparseLabel::new(indices, values)
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Stored probability mass, summed in rank order.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Temperature-scaled softmax with max subtraction.
pub fn normalize(logits: &[f64], temperature: Temperature) -> Result<DenseDistribution> {
    if logits.is_empty() {
        return Err(Error::EmptyClassAxis);
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    let t = temperature.get();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / t).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(DenseDistribution {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Keeps the `k` largest probabilities; ties at equal value go to the lower
/// class index.
pub fn sparsify(dense: &DenseDistribution, k: usize) -> Result<SparseLabel> {
    let c = dense.num_classes();
    if k == 0 {
        return Err(Error::KNotPositive);
    }
    if k > c {
        return Err(Error::KExceedsClassCount { k, classes: c });
    }
    let probs = dense.probs();
    let mut order: Vec<u32> = (0..c as u32).collect();
    let rank = |a: &u32, b: &u32| {
        probs[*b as usize]
            .total_cmp(&probs[*a as usize])
            .then(a.cmp(b))
    };
    if k < c {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable_by(rank);
    let values = order.iter().map(|&i| probs[i as usize]).collect();
    Ok(SparseLabel {
        indices: order,
        values,
    })
}

/// Recovers a full distribution from a sparse label.
///
/// Stored entries are kept verbatim; every other class receives
/// `(1 - Σ stored) / (C - K)`. With `K = C` no residual is distributed.
pub fn densify(sparse: &SparseLabel, num_classes: usize) -> Result<DenseDistribution> {
    let k = sparse.k();
    if num_classes == 0 {
        return Err(Error::EmptyClassAxis);
    }
    if k > num_classes {
        return Err(Error::KExceedsClassCount {
            k,
            classes: num_classes,
        });
    }
    if let Some(&bad) = sparse.indices.iter().find(|&&i| i as usize >= num_classes) {
        return Err(Error::IndexOutOfRange {
            index: bad as usize,
            classes: num_classes,
        });
    }
    let mass = sparse.mass();
    if mass > 1.0 + MASS_TOLERANCE {
        return Err(Error::InvalidProbabilityMass(format!(
            "stored mass {mass} exceeds one"
        )));
    }
    let residual = if k == num_classes {
        0.0
    } else {
        ((1.0 - mass) / (num_classes - k) as f64).max(0.0)
    };
    let mut probs = vec![residual; num_classes];
    for (&i, &v) in sparse.indices.iter().zip(&sparse.values) {
        probs[i as usize] = v;
    }
    Ok(DenseDistribution::from_raw(probs))
}
