use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{indexed_substream, substream, streams, Rng};

pub type TaskId = u32;

/// Layer sizes of the masked trunk. Heads are sized per task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: impl Into<Vec<usize>>) -> Self {
        Self {
            input_dim,
            hidden: hidden.into(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    /// `(fan_in, fan_out)` of each masked layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len());
        let mut fan_in = self.input_dim;
        for &h in &self.hidden {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("zero-size layer in {self:?}")));
        }
        Ok(())
    }
}

/// Masked layer: weights `(fan_in, fan_out)`, bias and one score per weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub scores: Array2<f64>,
}

/// Per-task classifier. Never masked, carries no scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredParamStore {
    pub layers: Vec<Layer>,
    pub heads: BTreeMap<TaskId, Head>,
    pub rng_seed: u64,
    spec: NetworkSpec,
    version: u64,
}

fn kaiming_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Array2<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound))
}

impl ScoredParamStore {
    /// Kaiming-uniform weights, zero biases and U(0,1) scores, all drawn from
    /// the `init` stream of `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = substream(seed, streams::INIT);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let weights = kaiming_uniform(fan_in, fan_out, &mut rng);
                let scores = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen::<f64>());
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    scores,
                }
            })
            .collect();
        Ok(Self {
            layers,
            heads: BTreeMap::new(),
            rng_seed: seed,
            spec: spec.clone(),
            version: 0,
        })
    }

    /// Builds a store from explicit parameters; scores default to zeros.
    pub fn from_parts(input_dim: usize, layers: Vec<(Array2<f64>, Array1<f64>)>, seed: u64) -> Result<Self> {
        let mut hidden = Vec::with_capacity(layers.len());
        let mut fan_in = input_dim;
        let mut out = Vec::with_capacity(layers.len());
        for (w, b) in layers {
            if w.nrows() != fan_in || w.ncols() != b.len() {
                return Err(Error::dim("from_parts", format!("({fan_in}, {})", b.len()), format!("{:?}", w.dim())));
            }
            fan_in = w.ncols();
            hidden.push(fan_in);
            let scores = Array2::zeros(w.dim());
            out.push(Layer {
                weights: w,
                bias: b,
                scores,
            });
        }
        let spec = NetworkSpec::new(input_dim, hidden);
        spec.validate()?;
        Ok(Self {
            layers: out,
            heads: BTreeMap::new(),
            rng_seed: seed,
            spec,
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    pub fn num_masked_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Monotone counter bumped by every parameter mutation through this API.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn scores(&self) -> Vec<Array2<f64>> {
        self.layers.iter().map(|l| l.scores.clone()).collect()
    }

    /// Fresh randomly initialized head for `task`, drawn from a per-task stream
    /// so the result does not depend on when the head is created.
    pub fn add_head(&mut self, task: TaskId, classes: usize) -> Result<()> {
        if classes == 0 {
            return Err(Error::Config(format!("head for task {task} needs at least one class")));
        }
        let mut rng = indexed_substream(self.rng_seed, streams::HEADS, u64::from(task));
        let fan_in = self.feature_dim();
        let head = Head {
            weights: kaiming_uniform(fan_in, classes, &mut rng),
            bias: Array1::zeros(classes),
        };
        self.heads.insert(task, head);
        self.bump_version();
        Ok(())
    }

    pub fn set_head(&mut self, task: TaskId, head: Head) -> Result<()> {
        if head.weights.nrows() != self.feature_dim() || head.weights.ncols() != head.bias.len() {
            return Err(Error::dim(
                "set_head",
                format!("({}, k)", self.feature_dim()),
                format!("{:?}", head.weights.dim()),
            ));
        }
        self.heads.insert(task, head);
        self.bump_version();
        Ok(())
    }

    pub fn head(&self, task: TaskId) -> Result<&Head> {
        self.heads.get(&task).ok_or(Error::MissingHead(task))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite())
                && l.bias.iter().all(|v| v.is_finite())
                && l.scores.iter().all(|v| v.is_finite())
        }) && self
            .heads
            .values()
            .all(|h| h.weights.iter().all(|v| v.is_finite()) && h.bias.iter().all(|v| v.is_finite()))
    }
}
