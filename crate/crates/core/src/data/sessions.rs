use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::dataset::{Dataset, TrainTest};
use crate::error::{Error, Result};
use crate::rng::{substream, streams};

/// One few-shot class-incremental session. Labels are global class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    /// 1-based; session 1 is the base session.
    pub index: usize,
    pub classes: Vec<usize>,
    pub train: Dataset,
    pub test: Dataset,
    pub ways: usize,
    pub shots: usize,
}

impl SessionSpec {
    pub fn class_set(&self) -> BTreeSet<usize> {
        self.classes.iter().copied().collect()
    }
}

fn rows_in(ds: &Dataset, classes: &[usize]) -> Vec<usize> {
    (0..ds.len()).filter(|&i| classes.contains(&ds.labels[i])).collect()
}

/// Base session over classes `0..base_classes` with all their data, then
/// `sessions` novel sessions of `ways` classes and `shots` training samples
/// per class. Novel classes and shots are sampled from the `data` stream.
pub fn fewshot_sessions(
    base: &TrainTest,
    base_classes: usize,
    ways: usize,
    shots: usize,
    sessions: usize,
    seed: u64,
) -> Result<Vec<SessionSpec>> {
    let total = base.train.classes;
    if base_classes < 2 || base_classes > total {
        return Err(Error::Config(format!(
            "base session needs 2..={total} classes, got {base_classes}"
        )));
    }
    if ways == 0 || shots == 0 {
        return Err(Error::Config("ways and shots must be positive".into()));
    }
    let novel_available = total - base_classes;
    if sessions * ways > novel_available {
        return Err(Error::Config(format!(
            "{sessions} sessions of {ways} ways need {} novel classes, only {novel_available} available",
            sessions * ways
        )));
    }
    let mut rng = substream(seed, streams::DATA);
    let base_set: Vec<usize> = (0..base_classes).collect();
    let mut out = vec![SessionSpec {
        index: 1,
        classes: base_set.clone(),
        train: base.train.subset(&rows_in(&base.train, &base_set)),
        test: base.test.subset(&rows_in(&base.test, &base_set)),
        ways: base_classes,
        shots: 0,
    }];
    let mut novel: Vec<usize> = (base_classes..total).collect();
    novel.shuffle(&mut rng);
    for s in 0..sessions {
        let mut classes: Vec<usize> = novel[s * ways..(s + 1) * ways].to_vec();
        classes.sort_unstable();
        let mut train_rows = Vec::with_capacity(ways * shots);
        for &c in &classes {
            let mut rows = base.train.rows_of_class(c);
            if rows.len() < shots {
                return Err(Error::Config(format!(
                    "class {c} has {} training samples, {shots} shots requested",
                    rows.len()
                )));
            }
            rows.shuffle(&mut rng);
            let mut picked = rows[..shots].to_vec();
            picked.sort_unstable();
            train_rows.extend(picked);
        }
        out.push(SessionSpec {
            index: s + 2,
            train: base.train.subset(&train_rows),
            test: base.test.subset(&rows_in(&base.test, &classes)),
            classes,
            ways,
            shots,
        });
    }
    Ok(out)
}
