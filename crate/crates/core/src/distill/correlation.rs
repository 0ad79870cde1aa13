//! Class-correlation matrix of a model's predictions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub num_classes: usize,
    /// Row-major `C×C`.
    pub values: Vec<f64>,
    /// Classes whose mean prediction is constant; their off-diagonal
    /// entries are 0.
    pub degenerate: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.num_classes + j]
    }

    /// Little-endian `u32 C` followed by `C×C` `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.num_classes as u32).to_le_bytes().to_vec();
        out.extend(self.values.iter().flat_map(|v| v.to_le_bytes()));
        out
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Pearson correlation between the per-class mean prediction vectors.
/// `rows` are logits; they are mapped through a softmax unless
/// `raw_logits` is set. Every class needs at least one sample.
pub fn class_correlation(
    rows: &[Vec<f64>],
    labels: &[u32],
    num_classes: usize,
    raw_logits: bool,
) -> Result<CorrelationMatrix> {
    let c = num_classes;
    if c < 2 {
        return Err(Error::TooFewClasses);
    }
    if rows.len() != labels.len() {
        return Err(Error::InvalidPredictions(format!(
            "{} rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let mut mean = vec![vec![0.0; c]; c];
    let mut count = vec![0usize; c];
    for (row, &y) in rows.iter().zip(labels) {
        if row.len() != c {
            return Err(Error::InvalidPredictions(format!("row of {} values, {c} classes", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogits);
        }
        let y = y as usize;
        if y >= c {
            return Err(Error::IndexOutOfRange { index: y, classes: c });
        }
        let p = if raw_logits { row.clone() } else { softmax(row) };
        mean[y].iter_mut().zip(&p).for_each(|(m, v)| *m += v);
        count[y] += 1;
    }
    if let Some(missing) = count.iter().position(|&n| n == 0) {
        return Err(Error::InvalidPredictions(format!("class {missing} has no samples")));
    }
    let mut centred = Vec::with_capacity(c);
    let mut norms = Vec::with_capacity(c);
    for (m, &n) in mean.iter_mut().zip(&count) {
        m.iter_mut().for_each(|v| *v /= n as f64);
        let mu = m.iter().sum::<f64>() / c as f64;
        let d: Vec<f64> = m.iter().map(|v| v - mu).collect();
        norms.push(d.iter().map(|v| v * v).sum::<f64>().sqrt());
        centred.push(d);
    }
    let degenerate: Vec<usize> = (0..c).filter(|&i| norms[i] <= 1e-12 * (1.0 + mean[i].iter().map(|v| v.abs()).sum::<f64>())).collect();
    let mut values = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            values[i * c + j] = if i == j {
                1.0
            } else if degenerate.contains(&i) || degenerate.contains(&j) {
                0.0
            } else {
                let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
        }
    }
    Ok(CorrelationMatrix {
        num_classes: c,
        values,
        degenerate,
    })
}
