use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mask::{BitMask, TaskMask};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: Array2<f64>,
    pub metric: &'static str,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// `|a ∧ b| / |a ∨ b|` over all layers; zero when both are empty.
pub fn jaccard(a: &[BitMask], b: &[BitMask]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("jaccard layers", a.len(), b.len()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        inter += x.and(y)?.count_ones();
        union += x.or(y)?.count_ones();
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

pub fn mask_correlation(masks: &[TaskMask]) -> Result<CorrelationMatrix> {
    if masks.is_empty() {
        return Err(Error::Config("correlation needs at least one mask".into()));
    }
    let t = masks.len();
    let mut values = Array2::zeros((t, t));
    for i in 0..t {
        for j in i..t {
            let v = jaccard(&masks[i].layers, &masks[j].layers)?;
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(CorrelationMatrix {
        values,
        metric: "jaccard",
    })
}
