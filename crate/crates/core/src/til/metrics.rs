use std::collections::BTreeMap;

use serde::Serialize;

use crate::codec::CapacityReport;
use crate::error::{Error, Result};

/// `A[j][i]`: accuracy on task `i` after training task `j` (1-based), plus the
/// random-init baselines `R[i]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyMatrix {
    entries: BTreeMap<(usize, usize), f64>,
    random: BTreeMap<usize, f64>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, after: usize, task: usize, acc: f64) -> Result<()> {
        check_fraction(acc)?;
        self.entries.insert((after, task), acc);
        Ok(())
    }

    pub fn set_random(&mut self, task: usize, acc: f64) -> Result<()> {
        check_fraction(acc)?;
        self.random.insert(task, acc);
        Ok(())
    }

    pub fn get(&self, after: usize, task: usize) -> Option<f64> {
        self.entries.get(&(after, task)).copied()
    }

    pub fn random(&self, task: usize) -> Option<f64> {
        self.random.get(&task).copied()
    }

    fn need(&self, after: usize, task: usize) -> Result<f64> {
        self.get(after, task)
            .ok_or_else(|| Error::IncompleteMatrix(format!("A[{after}][{task}]")))
    }

    /// `(after, task, accuracy)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(j, i), &a)| (j, i, a))
    }

    pub fn random_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.random.iter().map(|(&i, &a)| (i, a))
    }

    /// Largest `after` index present.
    pub fn trained_tasks(&self) -> usize {
        self.entries.keys().filter(|(j, i)| i <= j).map(|&(j, _)| j).max().unwrap_or(0)
    }
}

fn check_fraction(acc: f64) -> Result<()> {
    if (0.0..=1.0).contains(&acc) {
        Ok(())
    } else {
        Err(Error::Range(format!("accuracy {acc} outside [0, 1]")))
    }
}

fn need_tasks(t: usize) -> Result<()> {
    if t == 0 {
        Err(Error::Config("metrics need at least one task".into()))
    } else {
        Ok(())
    }
}

/// `(1/T) Σ_i A[T][i]`
pub fn metric_acc(a: &AccuracyMatrix, t: usize) -> Result<f64> {
    need_tasks(t)?;
    let mut sum = 0.0;
    for i in 1..=t {
        sum += a.need(t, i)?;
    }
    Ok(sum / t as f64)
}

/// `1/(T-1) Σ_{i<T} (A[T][i] - A[i][i])`; zero for a single task.
pub fn metric_bwt(a: &AccuracyMatrix, t: usize) -> Result<f64> {
    need_tasks(t)?;
    if t == 1 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 1..t {
        sum += a.need(t, i)? - a.need(i, i)?;
    }
    Ok(sum / (t - 1) as f64)
}

/// `1/(T-1) Σ_{i=2..T} (A[i-1][i] - R[i])`; `None` for a single task.
pub fn metric_fwt(a: &AccuracyMatrix, t: usize) -> Result<Option<f64>> {
    need_tasks(t)?;
    if t == 1 {
        return Ok(None);
    }
    let mut sum = 0.0;
    for i in 2..=t {
        let r = a.random(i).ok_or_else(|| Error::IncompleteMatrix(format!("R[{i}]")))?;
        sum += a.need(i - 1, i)? - r;
    }
    Ok(Some(sum / (t - 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TilMetrics {
    pub tasks: usize,
    pub acc: f64,
    pub bwt: f64,
    pub fwt: Option<f64>,
    pub capacity: CapacityReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let mut a = AccuracyMatrix::new();
        a.set(1, 1, 0.9).unwrap();
        a.set(1, 2, 0.4).unwrap();
        a.set(2, 1, 0.9).unwrap();
        a.set(2, 2, 0.8).unwrap();
        a.set_random(2, 0.1).unwrap();
        assert!((metric_acc(&a, 2).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(metric_bwt(&a, 2).unwrap(), 0.0);
        assert!((metric_fwt(&a, 2).unwrap().unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(a.trained_tasks(), 2);
    }

    #[test]
    fn single_task_degenerates() {
        let mut a = AccuracyMatrix::new();
        a.set(1, 1, 0.7).unwrap();
        assert_eq!(metric_acc(&a, 1).unwrap(), 0.7);
        assert_eq!(metric_bwt(&a, 1).unwrap(), 0.0);
        assert_eq!(metric_fwt(&a, 1).unwrap(), None);
    }

    #[test]
    fn missing_entries_and_bad_values() {
        let mut a = AccuracyMatrix::new();
        a.set(2, 1, 0.5).unwrap();
        assert!(matches!(metric_acc(&a, 2), Err(Error::IncompleteMatrix(_))));
        assert!(matches!(metric_bwt(&a, 2), Err(Error::IncompleteMatrix(_))));
        assert!(matches!(metric_fwt(&a, 2), Err(Error::IncompleteMatrix(_))));
        assert!(a.set(1, 1, 1.5).is_err());
        assert!(metric_acc(&a, 0).is_err());
    }
}
