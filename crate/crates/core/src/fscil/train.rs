use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::proto::{compute_prototypes, prototype_loss, PrototypeStore};
use crate::data::{Dataset, SessionSpec};
use crate::error::{Error, Result};
use crate::mask::{make_soft_mask, topc_mask, validate_capacity, Mask, SoftMask};
use crate::nn::{
    apply_update, backward, backward_from_features, forward, forward_features, GradientBundle, Head, OptimizerSpec,
    ScoreGate, ScoredParamStore, TaskId, UpdatePlan, WeightGate,
};
use crate::rng::{indexed_substream, streams};

/// Head id used for the base-session classifier.
pub const BASE_HEAD: TaskId = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FscilConfig {
    /// Percent of weights in the major support.
    pub capacity: f64,
    pub base_epochs: usize,
    pub base_batch_size: usize,
    pub base_optimizer: OptimizerSpec,
    pub incremental_epochs: usize,
    /// SGD step size for minor weights.
    pub incremental_lr: f64,
    /// Zero means one batch per epoch.
    pub incremental_batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Accuracy per session of a reference method, for the gap column.
    pub reference: Option<Vec<f64>>,
}

impl Default for FscilConfig {
    fn default() -> Self {
        Self {
            capacity: 80.0,
            base_epochs: 50,
            base_batch_size: 32,
            base_optimizer: OptimizerSpec::adam(1e-3),
            incremental_epochs: 6,
            incremental_lr: 0.02,
            incremental_batch_size: 0,
            temperature: 1.0,
            seed: 0,
            hidden: vec![64, 64],
            reference: None,
        }
    }
}

impl FscilConfig {
    pub fn validate(&self) -> Result<()> {
        validate_capacity(self.capacity)?;
        if self.base_epochs == 0 || self.base_batch_size == 0 {
            return Err(Error::Config("base epochs and batch size must be positive".into()));
        }
        if !(self.base_optimizer.lr > 0.0 && self.incremental_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseOutcome {
    /// Frozen soft mask used for every later session.
    pub soft: SoftMask,
    pub head: Head,
    pub epoch_losses: Vec<f64>,
}

fn diverged(task: TaskId, epoch: usize, batch: usize, loss: f64) -> Error {
    Error::Diverged { task, epoch, batch, loss }
}

/// Base session: each epoch redraws the minor part and rebuilds the major
/// support from the current scores. Weight gradients are scaled by the soft
/// mask, scores move freely.
pub fn train_base(store: &mut ScoredParamStore, data: &Dataset, config: &FscilConfig) -> Result<BaseOutcome> {
    config.validate()?;
    if data.classes < 2 {
        return Err(Error::Config("base session needs at least two classes".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("base session has no training data".into()));
    }
    store.add_head(BASE_HEAD, data.classes)?;
    let mut opt = config.base_optimizer.state();
    let mut shuffle = indexed_substream(config.seed, streams::SHUFFLE, u64::from(BASE_HEAD));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.base_epochs);
    for epoch in 1..=config.base_epochs {
        let major = topc_mask(&store.scores(), config.capacity)?;
        let soft = make_soft_mask(&major.layers, &mut indexed_substream(config.seed, streams::MINOR_MASK, epoch as u64));
        let plan = UpdatePlan {
            weights: WeightGate::Scale(&soft.values),
            biases: true,
            scores: ScoreGate::Open,
            head: true,
        };
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, rows) in order.chunks(config.base_batch_size).enumerate() {
            let x = data.features.select(Axis(0), rows);
            let y: Vec<usize> = rows.iter().map(|&r| data.labels[r]).collect();
            let out = forward(store, Mask::Soft(&soft), BASE_HEAD, &x)?;
            let (loss, grads) = backward(store, &out.cache, &y)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(BASE_HEAD, epoch, b + 1, loss));
            }
            apply_update(store, &grads, &mut opt, plan)?;
            total += loss * rows.len() as f64;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    let major = topc_mask(&store.scores(), config.capacity)?;
    let soft = make_soft_mask(&major.layers, &mut indexed_substream(config.seed, streams::MINOR_MASK, 0));
    Ok(BaseOutcome {
        soft,
        head: store.head(BASE_HEAD)?.clone(),
        epoch_losses,
    })
}

/// Mean prototype loss of a batch and the feature gradient of that mean.
fn batch_loss(
    store: &ScoredParamStore,
    soft: &SoftMask,
    x: &Array2<f64>,
    y: &[usize],
    prototypes: &PrototypeStore,
    temperature: f64,
) -> Result<(f64, GradientBundle)> {
    let cache = forward_features(store, Mask::Soft(soft), x)?;
    let (sum, d_features) = prototype_loss(&cache.features, y, prototypes, temperature)?;
    let n = y.len() as f64;
    let layers = backward_from_features(store, &cache, d_features / n)?;
    Ok((sum / n, GradientBundle { layers, head: None }))
}

/// Few-shot session: adds prototypes for the new classes, then fine-tunes
/// only the minor weights with SGD on the prototype loss over the session
/// data plus earlier exemplars. Prototypes of replayed classes are
/// recomputed afterwards and the session data joins the exemplars.
pub fn train_incremental(
    store: &mut ScoredParamStore,
    soft: &SoftMask,
    session: &SessionSpec,
    prototypes: &mut PrototypeStore,
    config: &FscilConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let overlap: Vec<u32> = session
        .classes
        .iter()
        .filter(|c| prototypes.prototypes.contains_key(c))
        .map(|&c| c as u32)
        .collect();
    if !overlap.is_empty() {
        return Err(Error::SessionOverlap {
            session: session.index,
            classes: overlap,
        });
    }
    prototypes.merge(compute_prototypes(store, soft, &session.train, &session.classes)?)?;
    let data = match &prototypes.exemplars {
        Some(e) => session.train.concat(e)?,
        None => session.train.clone(),
    };
    let minors: Vec<Array2<f64>> = (0..soft.values.len()).map(|l| soft.minor(l)).collect();
    let plan = UpdatePlan {
        weights: WeightGate::Scale(&minors),
        biases: false,
        scores: ScoreGate::Closed,
        head: false,
    };
    let mut opt = OptimizerSpec::sgd(config.incremental_lr).state();
    let batch = if config.incremental_batch_size == 0 { data.len() } else { config.incremental_batch_size };
    let mut shuffle = indexed_substream(config.seed, streams::SHUFFLE, session.index as u64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.incremental_epochs);
    for epoch in 1..=config.incremental_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, rows) in order.chunks(batch.max(1)).enumerate() {
            let x = data.features.select(Axis(0), rows);
            let y: Vec<usize> = rows.iter().map(|&r| data.labels[r]).collect();
            let (loss, grads) = batch_loss(store, soft, &x, &y, prototypes, config.temperature)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(diverged(session.index as TaskId, epoch, b + 1, loss));
            }
            apply_update(store, &grads, &mut opt, plan)?;
            total += loss * rows.len() as f64;
        }
        losses.push(total / data.len().max(1) as f64);
    }
    let mut classes: Vec<usize> = data.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    prototypes.merge(compute_prototypes(store, soft, &data, &classes)?)?;
    prototypes.add_exemplars(&session.train)?;
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fewshot_sessions, gaussian_task};
    use crate::nn::NetworkSpec;

    fn setup(capacity: f64) -> (Vec<SessionSpec>, FscilConfig, ScoredParamStore) {
        let base = gaussian_task(8, 10, 6.0, 30, 3, 1).unwrap();
        let sessions = fewshot_sessions(&base, 4, 2, 3, 2, 3).unwrap();
        let config = FscilConfig {
            capacity,
            base_epochs: 10,
            base_optimizer: OptimizerSpec::adam(1e-2),
            hidden: vec![16, 16],
            seed: 4,
            ..FscilConfig::default()
        };
        let store = ScoredParamStore::init(&NetworkSpec::new(10, config.hidden.clone()), config.seed).unwrap();
        (sessions, config, store)
    }

    #[test]
    fn base_mask_has_topc_major_support() {
        let (sessions, config, mut store) = setup(60.0);
        let out = train_base(&mut store, &sessions[0].train, &config).unwrap();
        for (m, (r, c)) in out.soft.major.iter().zip(store.layer_shapes()) {
            assert_eq!(m.count_ones(), crate::mask::selected_count(60.0, r * c));
        }
        assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
    }

    #[test]
    fn full_capacity_base_is_dense() {
        let (sessions, config, mut store) = setup(100.0);
        let out = train_base(&mut store, &sessions[0].train, &config).unwrap();
        assert!(out.soft.values.iter().all(|v| v.iter().all(|&x| x == 1.0)));
    }

    #[test]
    fn incremental_session_keeps_major_weights() {
        let (sessions, config, mut store) = setup(70.0);
        let base = train_base(&mut store, &sessions[0].train, &config).unwrap();
        let mut protos = compute_prototypes(&store, &base.soft, &sessions[0].train, &sessions[0].classes).unwrap();
        let before = store.clone();
        for s in &sessions[1..] {
            train_incremental(&mut store, &base.soft, s, &mut protos, &config).unwrap();
        }
        let mut moved = false;
        for (l, (a, b)) in store.layers.iter().zip(&before.layers).enumerate() {
            for (i, (x, y)) in a.weights.iter().zip(b.weights.iter()).enumerate() {
                if base.soft.major[l].get(i) {
                    assert_eq!(x.to_bits(), y.to_bits());
                } else if x != y {
                    moved = true;
                }
            }
            assert_eq!(a.bias, b.bias);
            assert_eq!(a.scores, b.scores);
        }
        assert!(moved);
        assert_eq!(protos.len(), 8);
        assert_eq!(protos.exemplars.as_ref().unwrap().len(), 12);
        let err = train_incremental(&mut store, &base.soft, &sessions[1], &mut protos, &config).unwrap_err();
        assert!(matches!(err, Error::SessionOverlap { .. }));
    }

    #[test]
    fn minor_gate_halves_the_sgd_step() {
        let (sessions, config, mut store) = setup(50.0);
        let base = train_base(&mut store, &sessions[0].train, &config).unwrap();
        let protos = compute_prototypes(&store, &base.soft, &sessions[0].train, &sessions[0].classes).unwrap();
        let mut soft = base.soft.clone();
        let l = 0;
        let i = (0..soft.major[0].len()).find(|&i| !soft.major[0].get(i)).unwrap();
        soft.values[l].as_slice_mut().unwrap()[i] = 0.5;
        let x = sessions[0].train.features.clone();
        let y = sessions[0].train.labels.clone();
        let (_, grads) = batch_loss(&store, &soft, &x, &y, &protos, 1.0).unwrap();
        let minors: Vec<Array2<f64>> = (0..soft.values.len()).map(|k| soft.minor(k)).collect();
        let step = |plan: UpdatePlan<'_>| {
            let mut s = store.clone();
            let mut opt = OptimizerSpec::sgd(0.02).state();
            apply_update(&mut s, &grads, &mut opt, plan).unwrap();
            s.layers[l].weights.as_slice().unwrap()[i] - store.layers[l].weights.as_slice().unwrap()[i]
        };
        let gated = step(UpdatePlan { weights: WeightGate::Scale(&minors), biases: false, scores: ScoreGate::Closed, head: false });
        let open = step(UpdatePlan { weights: WeightGate::Open, biases: false, scores: ScoreGate::Closed, head: false });
        assert!(open != 0.0);
        assert!((gated - 0.5 * open).abs() <= 1e-15 * open.abs().max(1.0), "{gated} {open}");
    }
}
