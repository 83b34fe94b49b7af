//! Masked forward pass and its analytic backward pass.
//!
//! Every trunk layer computes `relu(a · (θ ⊙ m) + b)`; the task head is a plain
//! affine map over the last trunk activation. Score gradients use the
//! straight-through rule: `ds = ∂L/∂(θ⊙m) ⊙ θ`.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::store::{ScoredParamStore, TaskId};
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Activations recorded by [`forward`], consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    task: Option<TaskId>,
    /// Input of each trunk layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each trunk layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// Mask multipliers used for each trunk layer.
    multipliers: Vec<Array2<f64>>,
    /// Last trunk activation (penultimate features).
    pub features: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    /// `∂L/∂(θ⊙m)`, the gradient with respect to the effective weights.
    pub effective: Array2<f64>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub scores: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub task: TaskId,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    pub head: Option<HeadGrad>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| {
            g.weights.iter().all(|v| v.is_finite())
                && g.bias.iter().all(|v| v.is_finite())
                && g.scores.iter().all(|v| v.is_finite())
        }) && self
            .head
            .as_ref()
            .is_none_or(|h| h.weights.iter().all(|v| v.is_finite()) && h.bias.iter().all(|v| v.is_finite()))
    }
}

fn check_mask(store: &ScoredParamStore, mask: &Mask<'_>) -> Result<()> {
    if let Some(n) = mask.num_layers() {
        if n != store.layers.len() {
            return Err(Error::dim("mask layer count", store.layers.len(), n));
        }
        for (l, layer) in store.layers.iter().enumerate() {
            let shape = mask.shape(l).expect("layer count checked");
            if shape != layer.weights.dim() {
                return Err(Error::dim(
                    "mask layer shape",
                    format!("{:?}", layer.weights.dim()),
                    format!("{shape:?}"),
                ));
            }
        }
    }
    Ok(())
}

fn relu(mut z: Array2<f64>) -> Array2<f64> {
    z.mapv_inplace(|v| v.max(0.0));
    z
}

/// Trunk only: penultimate features for `batch`.
pub fn forward_features(store: &ScoredParamStore, mask: Mask<'_>, batch: &Array2<f64>) -> Result<ForwardCache> {
    check_mask(store, &mask)?;
    if batch.ncols() != store.spec().input_dim {
        return Err(Error::dim("batch columns", store.spec().input_dim, batch.ncols()));
    }
    let n = store.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre_activations = Vec::with_capacity(n);
    let mut multipliers = Vec::with_capacity(n);
    let mut a = batch.to_owned();
    for (l, layer) in store.layers.iter().enumerate() {
        let m = mask.multiplier(l, layer.weights.dim());
        let effective = &layer.weights * &m;
        let z = a.dot(&effective) + &layer.bias;
        inputs.push(a);
        a = relu(z.clone());
        pre_activations.push(z);
        multipliers.push(m);
    }
    Ok(ForwardCache {
        version: store.version(),
        task: None,
        inputs,
        pre_activations,
        multipliers,
        features: a,
    })
}

/// Logits of `task`'s head over the masked trunk.
pub fn forward(store: &ScoredParamStore, mask: Mask<'_>, task: TaskId, batch: &Array2<f64>) -> Result<ForwardOutput> {
    let head = store.head(task)?;
    let mut cache = forward_features(store, mask, batch)?;
    let logits = cache.features.dot(&head.weights) + &head.bias;
    cache.task = Some(task);
    Ok(ForwardOutput { logits, cache })
}

fn row_log_softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (rows, classes) = logits.dim();
    if labels.len() != rows {
        return Err(Error::dim("labels", rows, labels.len()));
    }
    if rows == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let mut grad = Array2::zeros((rows, classes));
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Range(format!("label {y} for a {classes}-class head")));
        }
        let logp = row_log_softmax(logits.row(i));
        loss -= logp[y];
        let mut g = grad.row_mut(i);
        g.assign(&logp.mapv(f64::exp));
        g[y] -= 1.0;
    }
    let scale = 1.0 / rows as f64;
    grad.mapv_inplace(|v| v * scale);
    Ok((loss * scale, grad))
}

fn check_cache(store: &ScoredParamStore, cache: &ForwardCache) -> Result<()> {
    if cache.version != store.version() {
        return Err(Error::InvalidCache("parameters changed since the forward pass"));
    }
    if cache.inputs.len() != store.layers.len() {
        return Err(Error::InvalidCache("cache has a different layer count"));
    }
    Ok(())
}

/// Backpropagates `d_features` (gradient at the last trunk activation)
/// through the masked trunk.
pub fn backward_from_features(
    store: &ScoredParamStore,
    cache: &ForwardCache,
    d_features: Array2<f64>,
) -> Result<Vec<LayerGrad>> {
    check_cache(store, cache)?;
    if d_features.dim() != cache.features.dim() {
        return Err(Error::dim(
            "feature gradient",
            format!("{:?}", cache.features.dim()),
            format!("{:?}", d_features.dim()),
        ));
    }
    let mut grads = Vec::with_capacity(store.layers.len());
    let mut da = d_features;
    for l in (0..store.layers.len()).rev() {
        let layer = &store.layers[l];
        let m = &cache.multipliers[l];
        let mut dz = da;
        ndarray::Zip::from(&mut dz)
            .and(&cache.pre_activations[l])
            .for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        let effective = cache.inputs[l].t().dot(&dz);
        let weights = &effective * m;
        let scores = &effective * &layer.weights;
        let bias = dz.sum_axis(Axis(0));
        if l > 0 {
            let w_eff = &layer.weights * m;
            da = dz.dot(&w_eff.t());
        } else {
            da = Array2::zeros((0, 0));
        }
        grads.push(LayerGrad {
            effective,
            weights,
            bias,
            scores,
        });
    }
    grads.reverse();
    Ok(grads)
}

/// Exact gradients of the mean softmax cross-entropy. Returns the loss too.
pub fn backward(store: &ScoredParamStore, cache: &ForwardCache, labels: &[usize]) -> Result<(f64, GradientBundle)> {
    check_cache(store, cache)?;
    let task = cache
        .task
        .ok_or(Error::InvalidCache("cache was produced without a head"))?;
    let head = store.head(task)?;
    let logits = cache.features.dot(&head.weights) + &head.bias;
    let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;
    let head_grad = HeadGrad {
        task,
        weights: cache.features.t().dot(&d_logits),
        bias: d_logits.sum_axis(Axis(0)),
    };
    let d_features = d_logits.dot(&head.weights.t());
    let layers = backward_from_features(store, cache, d_features)?;
    Ok((
        loss,
        GradientBundle {
            layers,
            head: Some(head_grad),
        },
    ))
}

/// Mean cross-entropy without building a cache.
pub fn loss(store: &ScoredParamStore, mask: Mask<'_>, task: TaskId, batch: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let out = forward(store, mask, task, batch)?;
    Ok(softmax_cross_entropy(&out.logits, labels)?.0)
}
