use std::str::FromStr;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{category_sets, Mask, TaskMask};
use crate::nn::{ScoredParamStore, TaskId};
use crate::til::evaluate;

/// Which weights of `m_t` to drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReuseCategory {
    /// `m_t ∧ M_{t-1}`
    ReusedPerTask,
    /// `m_1 ∧ … ∧ m_t`
    ReusedForAll,
    /// `m_t ∧ ¬M_{t-1}`
    NewPerTask,
}

impl FromStr for ReuseCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reused-per-task" => Ok(ReuseCategory::ReusedPerTask),
            "reused-for-all" => Ok(ReuseCategory::ReusedForAll),
            "new-per-task" => Ok(ReuseCategory::NewPerTask),
            other => Err(Error::UnknownCategory(other.to_string())),
        }
    }
}

/// `m_t` with the category's coordinates cleared, optionally only in
/// `layers`.
pub fn ablated_mask(masks: &[TaskMask], t: usize, category: ReuseCategory, layers: Option<&[usize]>) -> Result<TaskMask> {
    if t == 0 || t > masks.len() {
        return Err(Error::Range(format!("task index {t} outside 1..={}", masks.len())));
    }
    let mut out = masks[t - 1].clone();
    for l in 0..out.layers.len() {
        if layers.is_some_and(|ls| !ls.contains(&l)) {
            continue;
        }
        let sets = category_sets(masks, t, l)?;
        let drop = match category {
            ReuseCategory::ReusedPerTask => sets.current.and(&sets.previous)?,
            ReuseCategory::ReusedForAll => sets.intersection,
            ReuseCategory::NewPerTask => sets.current.and_not(&sets.previous)?,
        };
        out.layers[l] = out.layers[l].and_not(&drop)?;
    }
    Ok(out)
}

/// Accuracy on task `t` with part of its mask removed.
pub fn ablate_reused(
    store: &ScoredParamStore,
    masks: &[TaskMask],
    t: usize,
    category: ReuseCategory,
    test: &Dataset,
    layers: Option<&[usize]>,
) -> Result<f64> {
    let mask = ablated_mask(masks, t, category, layers)?;
    evaluate(store, Mask::task(&mask), t as TaskId, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BitMask;

    fn m(bits: &[bool]) -> TaskMask {
        TaskMask {
            capacity: 50.0,
            layers: vec![BitMask::from_bools(1, bits.len(), bits).unwrap()],
        }
    }

    #[test]
    fn categories_by_hand() {
        let masks = [
            m(&[true, true, false, false, false]),
            m(&[false, true, true, false, false]),
            m(&[true, true, false, true, false]),
        ];
        let bits = |t: &TaskMask| t.layers[0].iter_ones().collect::<Vec<_>>();
        assert_eq!(bits(&ablated_mask(&masks, 3, ReuseCategory::ReusedPerTask, None).unwrap()), vec![3]);
        assert_eq!(bits(&ablated_mask(&masks, 3, ReuseCategory::ReusedForAll, None).unwrap()), vec![0, 3]);
        assert_eq!(bits(&ablated_mask(&masks, 3, ReuseCategory::NewPerTask, None).unwrap()), vec![0, 1]);
        assert_eq!(ablated_mask(&masks, 1, ReuseCategory::ReusedPerTask, None).unwrap(), masks[0]);
        assert_eq!(ablated_mask(&masks, 3, ReuseCategory::NewPerTask, Some(&[1])).unwrap(), masks[2]);
        assert!(matches!("reused".parse::<ReuseCategory>(), Err(Error::UnknownCategory(_))));
        assert!(ablated_mask(&masks, 4, ReuseCategory::NewPerTask, None).is_err());
    }
}
