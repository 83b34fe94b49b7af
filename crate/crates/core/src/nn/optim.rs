use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayViewMut, Dimension, Zip};
use serde::{Deserialize, Serialize};

use super::pass::GradientBundle;
use super::store::{ScoredParamStore, TaskId};
use crate::error::{Error, Result};
use crate::mask::AccumMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::adam(),
            lr,
        }
    }

    pub fn state(&self) -> OptimizerState {
        OptimizerState::new(*self)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<D: Dimension> {
    m: ndarray::Array<f64, D>,
    v: ndarray::Array<f64, D>,
}

impl<D: Dimension> Moments<D> {
    fn zeros(shape: D) -> Self {
        Self {
            m: ndarray::Array::zeros(shape.clone()),
            v: ndarray::Array::zeros(shape),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerMoments {
    weights: Moments<ndarray::Ix2>,
    bias: Moments<ndarray::Ix1>,
    scores: Moments<ndarray::Ix2>,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadMoments {
    weights: Moments<ndarray::Ix2>,
    bias: Moments<ndarray::Ix1>,
}

/// SGD or Adam state. Adam moments are allocated on the first update.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub spec: OptimizerSpec,
    step: u64,
    layers: Vec<LayerMoments>,
    heads: BTreeMap<TaskId, HeadMoments>,
}

/// Multiplier applied to weight gradients before they reach the optimizer.
/// Coordinates whose multiplier is zero are skipped entirely.
#[derive(Debug, Clone, Copy)]
pub enum WeightGate<'a> {
    Open,
    /// `1 - M`: only weights outside the accumulated mask move.
    Freeze(&'a AccumMask),
    Scale(&'a [Array2<f64>]),
    Closed,
}

#[derive(Debug, Clone, Copy)]
pub enum ScoreGate<'a> {
    Open,
    Scale(&'a [Array2<f64>]),
    Closed,
}

#[derive(Debug, Clone, Copy)]
pub struct UpdatePlan<'a> {
    pub weights: WeightGate<'a>,
    pub biases: bool,
    pub scores: ScoreGate<'a>,
    pub head: bool,
}

impl<'a> UpdatePlan<'a> {
    pub fn all() -> Self {
        Self {
            weights: WeightGate::Open,
            biases: true,
            scores: ScoreGate::Open,
            head: true,
        }
    }
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self {
            spec,
            step: 0,
            layers: Vec::new(),
            heads: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Adam first and second moments of layer `l`'s weights, if allocated.
    pub fn weight_moments(&self, layer: usize) -> Option<(&Array2<f64>, &Array2<f64>)> {
        self.layers.get(layer).map(|m| (&m.weights.m, &m.weights.v))
    }

    pub fn score_moments(&self, layer: usize) -> Option<(&Array2<f64>, &Array2<f64>)> {
        self.layers.get(layer).map(|m| (&m.scores.m, &m.scores.v))
    }

    fn ensure_moments(&mut self, store: &ScoredParamStore, task: Option<TaskId>) {
        if !matches!(self.spec.kind, OptimizerKind::Adam { .. }) {
            return;
        }
        if self.layers.is_empty() {
            self.layers = store
                .layers
                .iter()
                .map(|l| LayerMoments {
                    weights: Moments::zeros(l.weights.raw_dim()),
                    bias: Moments::zeros(l.bias.raw_dim()),
                    scores: Moments::zeros(l.scores.raw_dim()),
                })
                .collect();
        }
        if let Some(t) = task {
            if let Some(h) = store.heads.get(&t) {
                self.heads.entry(t).or_insert_with(|| HeadMoments {
                    weights: Moments::zeros(h.weights.raw_dim()),
                    bias: Moments::zeros(h.bias.raw_dim()),
                });
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Rule {
    kind: OptimizerKind,
    lr: f64,
    bias_correction1: f64,
    bias_correction2: f64,
}

impl Rule {
    /// Applies one step to every coordinate whose multiplier is non-zero.
    fn apply<D: Dimension>(
        &self,
        param: ArrayViewMut<'_, f64, D>,
        grad: &ndarray::Array<f64, D>,
        mult: Option<&ndarray::Array<f64, D>>,
        moments: Option<&mut Moments<D>>,
    ) {
        let one = |p: &mut f64, g: f64, k: f64, mv: Option<(&mut f64, &mut f64)>| {
            if k == 0.0 {
                return;
            }
            let g = if k == 1.0 { g } else { g * k };
            match (self.kind, mv) {
                (OptimizerKind::Adam { beta1, beta2, eps }, Some((m, v))) => {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / self.bias_correction1;
                    let v_hat = *v / self.bias_correction2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
                _ => *p -= self.lr * g,
            }
        };
        match (mult, moments) {
            (Some(k), Some(mo)) => Zip::from(param)
                .and(grad)
                .and(k)
                .and(&mut mo.m)
                .and(&mut mo.v)
                .for_each(|p, &g, &k, m, v| one(p, g, k, Some((m, v)))),
            (None, Some(mo)) => Zip::from(param)
                .and(grad)
                .and(&mut mo.m)
                .and(&mut mo.v)
                .for_each(|p, &g, m, v| one(p, g, 1.0, Some((m, v)))),
            (Some(k), None) => Zip::from(param).and(grad).and(k).for_each(|p, &g, &k| one(p, g, k, None)),
            (None, None) => Zip::from(param).and(grad).for_each(|p, &g| one(p, g, 1.0, None)),
        }
    }
}

fn check_shapes(store: &ScoredParamStore, grads: &GradientBundle, plan: &UpdatePlan<'_>) -> Result<()> {
    if grads.layers.len() != store.layers.len() {
        return Err(Error::dim("gradient layers", store.layers.len(), grads.layers.len()));
    }
    for (l, (layer, g)) in store.layers.iter().zip(&grads.layers).enumerate() {
        let shape = layer.weights.dim();
        let bad = g.weights.dim() != shape || g.scores.dim() != shape || g.bias.len() != layer.bias.len();
        let gate_shape = match plan.weights {
            WeightGate::Freeze(acc) => acc.layers.get(l).map(|m| m.shape()),
            WeightGate::Scale(s) => s.get(l).map(|m| m.dim()),
            _ => Some(shape),
        };
        let score_shape = match plan.scores {
            ScoreGate::Scale(s) => s.get(l).map(|m| m.dim()),
            _ => Some(shape),
        };
        if bad || gate_shape != Some(shape) || score_shape != Some(shape) {
            return Err(Error::dim("update layer", format!("{shape:?}"), format!("layer {l}")));
        }
    }
    Ok(())
}

/// One optimizer step. Gates multiply gradients before any moment
/// accumulation, and zero-gated coordinates are never written, so frozen
/// parameters stay bit-identical.
pub fn apply_update(
    store: &mut ScoredParamStore,
    grads: &GradientBundle,
    opt: &mut OptimizerState,
    plan: UpdatePlan<'_>,
) -> Result<()> {
    check_shapes(store, grads, &plan)?;
    let head_task = grads.head.as_ref().map(|h| h.task).filter(|_| plan.head);
    if let Some(t) = head_task {
        store.head(t)?;
    }
    opt.ensure_moments(store, head_task);
    opt.step += 1;
    let rule = match opt.spec.kind {
        OptimizerKind::Adam { beta1, beta2, .. } => Rule {
            kind: opt.spec.kind,
            lr: opt.spec.lr,
            bias_correction1: 1.0 - beta1.powi(opt.step as i32),
            bias_correction2: 1.0 - beta2.powi(opt.step as i32),
        },
        OptimizerKind::Sgd => Rule {
            kind: opt.spec.kind,
            lr: opt.spec.lr,
            bias_correction1: 1.0,
            bias_correction2: 1.0,
        },
    };
    let adam = matches!(opt.spec.kind, OptimizerKind::Adam { .. });

    for (l, g) in grads.layers.iter().enumerate() {
        let layer = &mut store.layers[l];
        let mut mo = if adam { opt.layers.get_mut(l) } else { None };

        let freeze_mult;
        let weight_mult = match plan.weights {
            WeightGate::Open => Some(None),
            WeightGate::Closed => None,
            WeightGate::Freeze(acc) => {
                freeze_mult = acc.layers[l].not().to_f64();
                Some(Some(&freeze_mult))
            }
            WeightGate::Scale(s) => Some(Some(&s[l])),
        };
        if let Some(mult) = weight_mult {
            rule.apply(layer.weights.view_mut(), &g.weights, mult, mo.as_deref_mut().map(|m| &mut m.weights));
        }
        if plan.biases {
            let none: Option<&Array1<f64>> = None;
            rule.apply(layer.bias.view_mut(), &g.bias, none, mo.as_deref_mut().map(|m| &mut m.bias));
        }
        let score_mult = match plan.scores {
            ScoreGate::Open => Some(None),
            ScoreGate::Closed => None,
            ScoreGate::Scale(s) => Some(Some(&s[l])),
        };
        if let Some(mult) = score_mult {
            rule.apply(layer.scores.view_mut(), &g.scores, mult, mo.map(|m| &mut m.scores));
        }
    }

    if let (Some(t), Some(hg)) = (head_task, grads.head.as_ref()) {
        let head = store.heads.get_mut(&t).expect("head checked above");
        if hg.weights.dim() != head.weights.dim() || hg.bias.len() != head.bias.len() {
            return Err(Error::dim(
                "head gradient",
                format!("{:?}", head.weights.dim()),
                format!("{:?}", hg.weights.dim()),
            ));
        }
        let mut hm = if adam { opt.heads.get_mut(&t) } else { None };
        let none2: Option<&Array2<f64>> = None;
        let none1: Option<&Array1<f64>> = None;
        rule.apply(head.weights.view_mut(), &hg.weights, none2, hm.as_deref_mut().map(|m| &mut m.weights));
        rule.apply(head.bias.view_mut(), &hg.bias, none1, hm.map(|m| &mut m.bias));
    }
    store.bump_version();
    Ok(())
}
