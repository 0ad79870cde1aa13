//! Central finite-difference checks of analytic gradients.

use rayon::prelude::*;

use super::loss::batch_loss;
use crate::error::Result;
use crate::model::{Batch, Mode, TinyVit};

/// A scalar function of a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |g_i − fd_i| / (|g_i| + 1e-8)`; 0 for an empty parameter set.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Compares `obj.gradient(theta)` against `(f(θ+h) − f(θ−h)) / 2h` at the
/// coordinates `indices` (all of them when `None`).
pub fn gradient_check(
    obj: &dyn Objective,
    theta: &[f64],
    h: f64,
    indices: Option<&[usize]>,
) -> GradCheckReport {
    let analytic = obj.gradient(theta);
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..obj.dim()).collect();
            &all
        }
    };
    let errs: Vec<(usize, f64)> = idx
        .par_iter()
        .map(|&i| {
            let mut t = theta.to_vec();
            t[i] = theta[i] + h;
            let up = obj.value(&t);
            t[i] = theta[i] - h;
            let down = obj.value(&t);
            let fd = (up - down) / (2.0 * h);
            (i, (analytic[i] - fd).abs() / (analytic[i].abs() + 1e-8))
        })
        .collect();
    let worst = errs
        .iter()
        .copied()
        .fold(None, |b: Option<(usize, f64)>, e| match b {
            Some(b) if b.1 >= e.1 => Some(b),
            _ => Some(e),
        });
    GradCheckReport {
        max_rel_error: worst.map_or(0.0, |w| w.1),
        worst_index: worst.map(|w| w.0),
        checked: idx.len(),
    }
}

/// Mean distillation loss of a model on a fixed batch, in training mode
/// (batch-statistic normalization).
pub struct ModelObjective<'a> {
    pub model: &'a TinyVit,
    pub batch: &'a Batch,
    pub targets: &'a [Vec<f64>],
    pub mode: Mode,
}

impl ModelObjective<'_> {
    fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (logits, tape) = self.model.forward_train(theta, self.batch, self.mode, None)?;
        let (loss, dlogits) = batch_loss(&logits, self.targets, None)?;
        Ok((loss, self.model.backward(theta, &tape, &dlogits)))
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.model.layout().total
    }

    /// The loss less its θ-independent part `ln C · Σ_c t_c`. Near the
    /// uniform prediction the full loss sits at `≈ ln C`, and rounding at
    /// that scale would swamp the finite differences of small gradients;
    /// `ln mean(e^z)` is computed through `log1p`/`expm1` instead.
    fn value(&self, theta: &[f64]) -> f64 {
        let (logits, _) = self
            .model
            .forward_train(theta, self.batch, self.mode, None)
            .expect("shapes checked at construction");
        let c = self.model.num_classes();
        let mut total = 0.0;
        for (z, t) in logits.chunks(c).zip(self.targets) {
            let ell = (z.iter().map(|v| v.exp_m1()).sum::<f64>() / c as f64).ln_1p();
            total += t.iter().zip(z).map(|(t, z)| t * (ell - z)).sum::<f64>();
        }
        total / self.targets.len() as f64
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.eval(theta).map_or_else(|_| vec![f64::NAN; theta.len()], |r| r.1)
    }
}

/// Softmax regression `z = W x + b` under cross-entropy; the smallest model
/// the checker must pass to 1e-7.
pub struct LinearToy {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub classes: usize,
}

impl LinearToy {
    fn features(&self) -> usize {
        self.inputs[0].len()
    }

    fn logits(&self, theta: &[f64]) -> Vec<f64> {
        let (c, d) = (self.classes, self.features());
        self.inputs
            .iter()
            .flat_map(|x| {
                (0..c).map(move |j| {
                    theta[c * d + j] + (0..d).map(|i| theta[j * d + i] * x[i]).sum::<f64>()
                })
            })
            .collect()
    }
}

impl Objective for LinearToy {
    fn dim(&self) -> usize {
        self.classes * (self.features() + 1)
    }

    fn value(&self, theta: &[f64]) -> f64 {
        batch_loss(&self.logits(theta), &self.targets, None).map_or(f64::NAN, |r| r.0)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (c, d) = (self.classes, self.features());
        let Ok((_, dz)) = batch_loss(&self.logits(theta), &self.targets, None) else {
            return vec![f64::NAN; theta.len()];
        };
        let mut g = vec![0.0; self.dim()];
        for (n, x) in self.inputs.iter().enumerate() {
            for j in 0..c {
                let e = dz[n * c + j];
                for i in 0..d {
                    g[j * d + i] += e * x[i];
                }
                g[c * d + j] += e;
            }
        }
        g
    }
}
