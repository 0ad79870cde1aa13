//! Flat parameter storage with a named layout.
//!
//! All learnable scalars of a model live in one `Vec<f64>`; a [`Layout`]
//! maps names to `(offset, shape)`. Forward passes read parameters through
//! a [`Weights`] view, so the same code evaluates the model at perturbed
//! parameter vectors without cloning the model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a tensor is, which decides its initialization and whether weight
/// decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    LinearWeight,
    ConvWeight,
    Bias,
    NormScale,
    NormShift,
    AttentionBias,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::LinearWeight | ParamKind::ConvWeight)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Handle to one registered tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

impl Layout {
    pub(crate) fn add(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> ParamId {
        let spec = ParamSpec {
            name,
            shape,
            kind,
            offset: self.total,
        };
        self.total += spec.len();
        self.specs.push(spec);
        ParamId(self.specs.len() - 1)
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Fresh initial values: truncated normal (σ = 0.02, cut at 2σ) for
    /// linear weights and attention-bias tables, uniform ±1/√fan_in for
    /// convolutions, zeros for biases and norm shifts, ones for norm
    /// scales. Draws happen in registration order.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut theta = vec![0.0; self.total];
        for s in &self.specs {
            let out = &mut theta[s.range()];
            match s.kind {
                ParamKind::LinearWeight | ParamKind::AttentionBias => {
                    out.iter_mut().for_each(|v| *v = trunc_normal(rng, 0.02))
                }
                ParamKind::ConvWeight => {
                    let fan_in: usize = s.shape[1..].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    out.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
                }
                ParamKind::Bias | ParamKind::NormShift => {}
                ParamKind::NormScale => out.fill(1.0),
            }
        }
        theta
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Read-only view of a parameter vector.
#[derive(Clone, Copy)]
pub struct Weights<'a> {
    pub layout: &'a Layout,
    pub theta: &'a [f64],
}

impl<'a> Weights<'a> {
    #[inline]
    pub fn get(&self, id: ParamId) -> &'a [f64] {
        &self.theta[self.layout.specs[id.0].range()]
    }
}

/// Gradient accumulator aligned with a [`Layout`].
pub struct GradSink<'a> {
    pub layout: &'a Layout,
    pub grad: &'a mut [f64],
}

impl GradSink<'_> {
    #[inline]
    pub fn get(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.layout.specs[id.0].range();
        &mut self.grad[r]
    }
}

/// Non-learnable state (batch-norm running statistics).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Buffers {
    pub names: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(pub(crate) usize);

impl Buffers {
    pub(crate) fn add(&mut self, name: String, value: Vec<f64>) -> BufferId {
        self.names.push(name);
        self.data.push(value);
        BufferId(self.data.len() - 1)
    }

    pub fn get(&self, id: BufferId) -> &[f64] {
        &self.data[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: BufferId) -> &mut Vec<f64> {
        &mut self.data[id.0]
    }
}
