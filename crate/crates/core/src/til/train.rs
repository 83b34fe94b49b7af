use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::config::{TilMode, TilRunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{inject_inference_noise, topc_mask, AccumMask, Mask, TaskMask};
use crate::nn::{apply_update, backward, forward, NetworkSpec, ScoreGate, ScoredParamStore, TaskId, UpdatePlan, WeightGate};
use crate::rng::{indexed_substream, streams};

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedTask {
    pub mask: TaskMask,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains `task` on `data`: the mask is the live top-c% of the scores at
/// every batch, weights inside `accum` are frozen, scores always move.
/// Hidden biases only train while nothing has been accumulated yet.
pub fn train_task(
    store: &mut ScoredParamStore,
    accum: &AccumMask,
    task: TaskId,
    data: &Dataset,
    head_size: usize,
    config: &TilRunConfig,
) -> Result<TrainedTask> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config(format!("task {task} has no training data")));
    }
    if accum.layers.len() != store.layers.len() {
        return Err(Error::dim("accumulated mask layers", store.layers.len(), accum.layers.len()));
    }
    if store.head(task).is_err() {
        store.add_head(task, head_size)?;
    }
    let fresh = accum.count_ones() == 0;
    let plan = UpdatePlan {
        weights: if fresh { WeightGate::Open } else { WeightGate::Freeze(accum) },
        biases: fresh,
        scores: ScoreGate::Open,
        head: true,
    };
    let mut opt = config.optimizer.state();
    let mut rng = indexed_substream(config.seed, streams::SHUFFLE, u64::from(task));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let mask = topc_mask(&store.scores(), config.capacity)?;
            let x = data.features.select(Axis(0), rows);
            let y: Vec<usize> = rows.iter().map(|&r| data.labels[r]).collect();
            let out = forward(store, Mask::task(&mask), task, &x)?;
            let (loss, grads) = backward(store, &out.cache, &y)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    task,
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            apply_update(store, &grads, &mut opt, plan)?;
            total += loss * rows.len() as f64;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(TrainedTask {
        mask: topc_mask(&store.scores(), config.capacity)?,
        epoch_losses,
    })
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Predicted classes (argmax of logits, ties to the lowest index).
pub fn predict(store: &ScoredParamStore, mask: Mask<'_>, task: TaskId, x: &Array2<f64>) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        let logits = forward(store, mask, task, &x.slice(ndarray::s![start..end, ..]).to_owned())?.logits;
        out.extend(logits.rows().into_iter().map(argmax));
    }
    Ok(out)
}

pub fn evaluate(store: &ScoredParamStore, mask: Mask<'_>, task: TaskId, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config(format!("task {task} has no test data")));
    }
    let pred = predict(store, mask, task, &test.features)?;
    let correct = pred.iter().zip(&test.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Accuracy on unseen `task` using only what the learner owns before
/// training it: the accumulated mask and a fresh head.
pub fn probe_future(
    store: &ScoredParamStore,
    accum: &AccumMask,
    task: TaskId,
    head_size: usize,
    test: &Dataset,
    mode: TilMode,
    epsilon: f64,
) -> Result<f64> {
    let mut probe = store.clone();
    probe.add_head(task, head_size)?;
    match mode {
        TilMode::Wsn => evaluate(&probe, Mask::accum(accum), task, test),
        TilMode::Softnet => {
            let mut rng = indexed_substream(store.rng_seed, streams::PROBES, u64::from(task));
            let soft = inject_inference_noise(&accum.layers, epsilon, &mut rng)?;
            evaluate(&probe, Mask::Soft(&soft), task, test)
        }
    }
}

/// Accuracy of a freshly initialized dense network with a fresh head.
pub fn random_baseline(spec: &NetworkSpec, seed: u64, task: TaskId, head_size: usize, test: &Dataset) -> Result<f64> {
    let fresh_seed: u64 = indexed_substream(seed, streams::PROBES, u64::from(task)).gen();
    let mut store = ScoredParamStore::init(spec, fresh_seed)?;
    store.add_head(task, head_size)?;
    evaluate(&store, Mask::Dense, task, test)
}
