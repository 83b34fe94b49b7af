use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Normalization, TrainTest};
use crate::error::{Error, Result};
use crate::rng::{indexed_substream, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
    pub head_size: usize,
}

/// How a stream was generated; enough to regenerate it bit-identically
/// (given the same base dataset for the derived kinds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamDescriptor {
    Gaussian {
        tasks: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        samples_per_class: usize,
        seed: u64,
    },
    Permuted {
        tasks: usize,
        seed: u64,
    },
    Split {
        classes_per_task: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub descriptor: StreamDescriptor,
}

impl TaskStream {
    pub fn input_dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.train.dim())
    }

    /// Rebuilds a stream from its descriptor. Derived kinds need `base`.
    pub fn regenerate(descriptor: &StreamDescriptor, base: Option<&TrainTest>) -> Result<Self> {
        let need_base = || base.ok_or_else(|| Error::Config("descriptor needs a base dataset".into()));
        match *descriptor {
            StreamDescriptor::Gaussian {
                tasks,
                classes,
                dim,
                separation,
                samples_per_class,
                seed,
            } => synth_gaussian_tasks(tasks, classes, dim, separation, samples_per_class, seed),
            StreamDescriptor::Permuted { tasks, seed } => permuted_tasks(need_base()?, tasks, seed),
            StreamDescriptor::Split { classes_per_task } => split_tasks(need_base()?, classes_per_task),
        }
    }
}

/// Pixel permutation of task `t` (1-based). Task 1 is the identity.
pub fn task_permutation(dim: usize, task: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..dim).collect();
    if task > 1 {
        perm.shuffle(&mut indexed_substream(seed, streams::DATA, task as u64));
    }
    perm
}

/// Column `j` of the output is column `perm[j]` of the input.
pub fn apply_permutation(ds: &Dataset, perm: &[usize]) -> Dataset {
    Dataset {
        features: ds.features.select(Axis(1), perm),
        labels: ds.labels.clone(),
        classes: ds.classes,
        normalization: ds.normalization.clone(),
    }
}

pub fn permuted_tasks(base: &TrainTest, tasks: usize, seed: u64) -> Result<TaskStream> {
    if tasks == 0 {
        return Err(Error::Config("need at least one task".into()));
    }
    let dim = base.train.dim();
    let data = (1..=tasks)
        .map(|t| {
            let perm = task_permutation(dim, t, seed);
            TaskData {
                train: apply_permutation(&base.train, &perm),
                test: apply_permutation(&base.test, &perm),
                head_size: base.train.classes,
            }
        })
        .collect();
    Ok(TaskStream {
        tasks: data,
        descriptor: StreamDescriptor::Permuted { tasks, seed },
    })
}

fn class_group(ds: &Dataset, group: &[usize]) -> Dataset {
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| group.contains(&ds.labels[i])).collect();
    let mut out = ds.subset(&rows);
    for y in out.labels.iter_mut() {
        *y = group.iter().position(|g| g == y).expect("row filtered by group");
    }
    out.classes = group.len();
    out
}

/// Consecutive class groups of `classes_per_task`, labels remapped to
/// `0..classes_per_task` within each task.
pub fn split_tasks(base: &TrainTest, classes_per_task: usize) -> Result<TaskStream> {
    let classes = base.train.classes;
    if classes_per_task == 0 || !classes.is_multiple_of(classes_per_task) {
        return Err(Error::Config(format!(
            "{classes} classes cannot be split into groups of {classes_per_task}"
        )));
    }
    let tasks = (0..classes / classes_per_task)
        .map(|t| {
            let group: Vec<usize> = (t * classes_per_task..(t + 1) * classes_per_task).collect();
            TaskData {
                train: class_group(&base.train, &group),
                test: class_group(&base.test, &group),
                head_size: classes_per_task,
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        descriptor: StreamDescriptor::Split { classes_per_task },
    })
}

/// Gaussian blobs with unit variance around class means drawn on a sphere of
/// radius `separation`; 80/20 train/test split per class; features min-max
/// normalized over the task's train and test rows.
pub fn gaussian_task(classes: usize, dim: usize, separation: f64, samples_per_class: usize, seed: u64, task: usize) -> Result<TrainTest> {
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation must be finite and non-negative, got {separation}")));
    }
    if classes == 0 || dim == 0 || samples_per_class < 2 {
        return Err(Error::Config("gaussian task needs classes, dim > 0 and at least 2 samples per class".into()));
    }
    let mut rng = indexed_substream(seed, streams::DATA, task as u64);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm * separation).collect()
        })
        .collect();
    let n_train = (samples_per_class as f64 * 0.8).round() as usize;
    let n_train = n_train.clamp(1, samples_per_class - 1);
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let (mut train_y, mut test_y) = (Vec::new(), Vec::new());
    for (c, mean) in means.iter().enumerate() {
        for s in 0..samples_per_class {
            let row: Vec<f64> = mean.iter().map(|&m| m + rng.sample::<f64, _>(StandardNormal)).collect();
            if s < n_train {
                train_rows.extend(row);
                train_y.push(c);
            } else {
                test_rows.extend(row);
                test_y.push(c);
            }
        }
    }
    let mut train_x = Array2::from_shape_vec((train_y.len(), dim), train_rows).map_err(|e| Error::Config(e.to_string()))?;
    let mut test_x = Array2::from_shape_vec((test_y.len(), dim), test_rows).map_err(|e| Error::Config(e.to_string()))?;
    let norm = Normalization::fit(&[&train_x, &test_x]);
    norm.apply(&mut train_x);
    norm.apply(&mut test_x);
    let mut train = Dataset::new(train_x, train_y, classes)?;
    let mut test = Dataset::new(test_x, test_y, classes)?;
    train.normalization = Some(norm.clone());
    test.normalization = Some(norm);
    Ok(TrainTest { train, test })
}

pub fn synth_gaussian_tasks(
    tasks: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    samples_per_class: usize,
    seed: u64,
) -> Result<TaskStream> {
    if tasks == 0 {
        return Err(Error::Config("need at least one task".into()));
    }
    let data = (1..=tasks)
        .map(|t| {
            gaussian_task(classes, dim, separation, samples_per_class, seed, t).map(|tt| TaskData {
                train: tt.train,
                test: tt.test,
                head_size: classes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskStream {
        tasks: data,
        descriptor: StreamDescriptor::Gaussian {
            tasks,
            classes,
            dim,
            separation,
            samples_per_class,
            seed,
        },
    })
}
