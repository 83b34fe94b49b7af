use serde::Serialize;

use super::bits::BitMask;
use super::select::TaskMask;
use crate::error::{Error, Result};

/// Weight-reuse categories at task `t`.
///
/// The five category fields are fractions of the layer's weight count. The
/// two `*_share` fields express the same sets relative to `|m_t|` instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReuseFractions {
    /// `|M_t| / numel`
    pub all_used: f64,
    /// `|m_t| / numel`
    pub per_task: f64,
    /// `|m_t \ M_{t-1}| / numel`
    pub new_per_task: f64,
    /// `|m_t ∧ M_{t-1}| / numel`
    pub reused_per_task: f64,
    /// `|m_1 ∧ ... ∧ m_t| / numel`, zero at `t = 1`
    pub reused_for_all: f64,
    /// `|m_t ∧ M_{t-1}| / |m_t|`
    pub reused_share: f64,
    /// `|m_t \ M_{t-1}| / |m_t|`
    pub new_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReuseReport {
    pub task: usize,
    pub layers: Vec<ReuseFractions>,
    pub total: ReuseFractions,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    numel: usize,
    all_used: usize,
    per_task: usize,
    new: usize,
    reused: usize,
    reused_all: usize,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.numel += o.numel;
        self.all_used += o.all_used;
        self.per_task += o.per_task;
        self.new += o.new;
        self.reused += o.reused;
        self.reused_all += o.reused_all;
    }

    fn fractions(&self) -> ReuseFractions {
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        ReuseFractions {
            all_used: frac(self.all_used, self.numel),
            per_task: frac(self.per_task, self.numel),
            new_per_task: frac(self.new, self.numel),
            reused_per_task: frac(self.reused, self.numel),
            reused_for_all: frac(self.reused_all, self.numel),
            reused_share: frac(self.reused, self.per_task),
            new_share: frac(self.new, self.per_task),
        }
    }
}

/// Per-layer sets for task `t` (1-based): previous union, current mask and the
/// running intersection over tasks `1..=t`.
pub(crate) struct CategorySets {
    pub previous: BitMask,
    pub current: BitMask,
    pub intersection: BitMask,
}

pub(crate) fn category_sets(masks: &[TaskMask], t: usize, layer: usize) -> Result<CategorySets> {
    let current = masks[t - 1].layers[layer].clone();
    let (r, c) = current.shape();
    let mut previous = BitMask::zeros(r, c);
    let mut intersection = BitMask::ones(r, c);
    for m in &masks[..t - 1] {
        previous = previous.or(&m.layers[layer])?;
        intersection = intersection.and(&m.layers[layer])?;
    }
    intersection = if t == 1 {
        BitMask::zeros(r, c)
    } else {
        intersection.and(&current)?
    };
    Ok(CategorySets {
        previous,
        current,
        intersection,
    })
}

/// Reuse statistics for task `upto` (1-based) over `masks[..upto]`.
pub fn mask_stats(masks: &[TaskMask], upto: usize) -> Result<ReuseReport> {
    if upto == 0 || upto > masks.len() {
        return Err(Error::Range(format!(
            "task index {upto} outside 1..={}",
            masks.len()
        )));
    }
    let n_layers = masks[0].layers.len();
    if masks[..upto].iter().any(|m| m.layers.len() != n_layers) {
        return Err(Error::dim("mask_stats", n_layers, "differing layer counts"));
    }
    let mut total = Counts::default();
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let sets = category_sets(masks, upto, l)?;
        let counts = Counts {
            numel: sets.current.len(),
            all_used: sets.previous.or(&sets.current)?.count_ones(),
            per_task: sets.current.count_ones(),
            new: sets.current.and_not(&sets.previous)?.count_ones(),
            reused: sets.current.and(&sets.previous)?.count_ones(),
            reused_all: sets.intersection.count_ones(),
        };
        total.add(counts);
        layers.push(counts.fractions());
    }
    Ok(ReuseReport {
        task: upto,
        layers,
        total: total.fractions(),
    })
}
