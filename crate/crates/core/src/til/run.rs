use std::time::Instant;

use serde::Serialize;

use super::config::TilRunConfig;
use super::metrics::{metric_acc, metric_bwt, metric_fwt, AccuracyMatrix, TilMetrics};
use super::train::{evaluate, probe_future, random_baseline, train_task};
use crate::codec::{capacity, encode_masks, EncodedTicketBundle};
use crate::data::TaskStream;
use crate::error::{Error, Result};
use crate::mask::{accumulate, AccumMask, Mask, TaskMask};
use crate::nn::{NetworkSpec, ScoredParamStore, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskTiming {
    pub task: usize,
    pub train_secs: f64,
    pub eval_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub matrix: AccuracyMatrix,
    pub masks: Vec<TaskMask>,
    pub accum: AccumMask,
    pub store: ScoredParamStore,
    pub epoch_losses: Vec<Vec<f64>>,
    pub timings: Vec<TaskTiming>,
    /// `None` when no task finished.
    pub metrics: Option<TilMetrics>,
    pub bundle: Option<EncodedTicketBundle>,
    pub tasks_requested: usize,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.masks.len() == self.tasks_requested
    }
}

/// A run that stopped early; `partial` holds everything up to the last
/// finished task.
#[derive(Debug, thiserror::Error)]
#[error("{error} (after {} of {} tasks)", partial.masks.len(), partial.tasks_requested)]
pub struct PartialRun {
    #[source]
    pub error: Error,
    pub partial: Box<RunResult>,
}

fn task_id(index: usize) -> TaskId {
    index as TaskId
}

/// Metrics, mask bundle and capacity for the first `t` tasks of `matrix`.
pub fn summarize(matrix: &AccuracyMatrix, masks: &[TaskMask], forward_transfer: bool) -> Result<(TilMetrics, EncodedTicketBundle)> {
    let t = masks.len();
    let bundle = encode_masks(masks)?;
    let cap = capacity(masks, Some(&bundle))?;
    let metrics = TilMetrics {
        tasks: t,
        acc: metric_acc(matrix, t)?,
        bwt: metric_bwt(matrix, t)?,
        fwt: if forward_transfer { metric_fwt(matrix, t)? } else { None },
        capacity: cap,
    };
    Ok((metrics, bundle))
}

/// Trains every task in order, evaluating all tasks seen so far with their
/// own stored masks after each one.
pub fn run_sequence(stream: &TaskStream, config: &TilRunConfig) -> Result<RunResult, PartialRun> {
    let spec = NetworkSpec::new(stream.input_dim(), config.hidden.clone());
    let setup = || -> Result<ScoredParamStore> {
        config.validate()?;
        if stream.tasks.is_empty() {
            return Err(Error::Config("task stream is empty".into()));
        }
        if stream.tasks.iter().any(|t| t.train.dim() != spec.input_dim || t.test.dim() != spec.input_dim) {
            return Err(Error::Config("tasks differ in input dimension".into()));
        }
        ScoredParamStore::init(&spec, config.seed)
    };
    let store = match setup() {
        Ok(s) => s,
        Err(error) => {
            let store = ScoredParamStore::init(&NetworkSpec::new(1, vec![1]), config.seed).expect("trivial spec");
            return Err(PartialRun {
                error,
                partial: Box::new(RunResult {
                    matrix: AccuracyMatrix::new(),
                    masks: Vec::new(),
                    accum: AccumMask::empty(&store.layer_shapes()),
                    store,
                    epoch_losses: Vec::new(),
                    timings: Vec::new(),
                    metrics: None,
                    bundle: None,
                    tasks_requested: stream.tasks.len(),
                }),
            });
        }
    };
    let mut run = RunResult {
        matrix: AccuracyMatrix::new(),
        masks: Vec::new(),
        accum: AccumMask::empty(&store.layer_shapes()),
        store,
        epoch_losses: Vec::new(),
        timings: Vec::new(),
        metrics: None,
        bundle: None,
        tasks_requested: stream.tasks.len(),
    };
    for j in 1..=stream.tasks.len() {
        if let Err(error) = step(&mut run, stream, &spec, config, j) {
            finish(&mut run, config);
            return Err(PartialRun {
                error,
                partial: Box::new(run),
            });
        }
    }
    match summarize(&run.matrix, &run.masks, config.forward_transfer) {
        Ok((m, b)) => {
            run.metrics = Some(m);
            run.bundle = Some(b);
            Ok(run)
        }
        Err(error) => Err(PartialRun {
            error,
            partial: Box::new(run),
        }),
    }
}

fn finish(run: &mut RunResult, config: &TilRunConfig) {
    if !run.masks.is_empty() {
        if let Ok((m, b)) = summarize(&run.matrix, &run.masks, config.forward_transfer) {
            run.metrics = Some(m);
            run.bundle = Some(b);
        }
    }
}

fn step(run: &mut RunResult, stream: &TaskStream, spec: &NetworkSpec, config: &TilRunConfig, j: usize) -> Result<()> {
    let task = &stream.tasks[j - 1];
    let id = task_id(j);
    let start = Instant::now();
    if config.forward_transfer && j >= 2 {
        let probe = probe_future(&run.store, &run.accum, id, task.head_size, &task.test, config.mode, config.epsilon)?;
        run.matrix.set(j - 1, j, probe)?;
        let r = random_baseline(spec, config.seed, id, task.head_size, &task.test)?;
        run.matrix.set_random(j, r)?;
    }
    let trained = train_task(&mut run.store, &run.accum, id, &task.train, task.head_size, config)?;
    let train_secs = start.elapsed().as_secs_f64();
    run.accum = accumulate(&run.accum, &trained.mask)?;
    run.masks.push(trained.mask);
    run.epoch_losses.push(trained.epoch_losses);
    let start = Instant::now();
    for i in 1..=j {
        let acc = evaluate(&run.store, Mask::task(&run.masks[i - 1]), task_id(i), &stream.tasks[i - 1].test)?;
        run.matrix.set(j, i, acc)?;
    }
    run.timings.push(TaskTiming {
        task: j,
        train_secs,
        eval_secs: start.elapsed().as_secs_f64(),
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian_tasks;
    use crate::nn::OptimizerSpec;

    fn cfg(capacity: f64) -> TilRunConfig {
        TilRunConfig {
            capacity,
            epochs: 3,
            batch_size: 16,
            optimizer: OptimizerSpec::adam(1e-2),
            seed: 11,
            hidden: vec![24, 24],
            ..TilRunConfig::default()
        }
    }

    #[test]
    fn three_tasks_are_forget_free() {
        let stream = synth_gaussian_tasks(3, 4, 8, 4.0, 30, 4).unwrap();
        let run = run_sequence(&stream, &cfg(50.0)).unwrap();
        for j in 2..=3 {
            for i in 1..j {
                assert_eq!(run.matrix.get(j, i).unwrap().to_bits(), run.matrix.get(i, i).unwrap().to_bits());
            }
        }
        let m = run.metrics.clone().unwrap();
        assert_eq!(m.bwt, 0.0);
        assert!(m.fwt.is_some());
        assert!(run.is_complete());
        let used: Vec<f64> = (1..=3)
            .scan(AccumMask::empty(&run.store.layer_shapes()), |acc, t| {
                *acc = accumulate(acc, &run.masks[t - 1]).unwrap();
                Some(acc.used_fraction())
            })
            .collect();
        assert!(used.windows(2).all(|w| w[0] <= w[1] && w[1] <= 1.0));
    }

    #[test]
    fn single_task_run() {
        let stream = synth_gaussian_tasks(1, 3, 6, 4.0, 20, 4).unwrap();
        let run = run_sequence(&stream, &cfg(30.0)).unwrap();
        let m = run.metrics.clone().unwrap();
        assert_eq!(m.acc, run.matrix.get(1, 1).unwrap());
        assert_eq!(m.bwt, 0.0);
        assert_eq!(m.fwt, None);
    }

    #[test]
    fn divergence_reports_partial_results() {
        let stream = synth_gaussian_tasks(2, 3, 6, 4.0, 20, 4).unwrap();
        let mut bad = stream.clone();
        bad.tasks[1].train.features[[0, 0]] = f64::NAN;
        let err = run_sequence(&bad, &cfg(30.0)).unwrap_err();
        assert!(matches!(err.error, Error::Diverged { task: 2, .. }));
        assert_eq!(err.partial.masks.len(), 1);
        assert!(!err.partial.is_complete());
        assert!(err.partial.metrics.is_some());
        let config_err = run_sequence(&stream, &TilRunConfig { capacity: 0.0, ..cfg(30.0) }).unwrap_err();
        assert!(matches!(config_err.error, Error::Config(_)));
    }
}
