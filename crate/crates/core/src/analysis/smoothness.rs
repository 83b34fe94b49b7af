use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{Mask, TaskMask};
use crate::nn::{backward, forward, ScoredParamStore, TaskId};
use crate::rng::{substream, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub scale: f64,
    pub pair: usize,
    pub dense_ratio: f64,
    /// `None` when the perturbation vanished under the mask.
    pub masked_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessProbe {
    pub capacity: f64,
    pub seed: u64,
    pub rows: Vec<ProbeRow>,
    pub skipped: usize,
}

fn norm(parts: impl Iterator<Item = f64>) -> f64 {
    parts.map(|v| v * v).sum::<f64>().sqrt()
}

/// Gradient ratios `‖g(θ) - g(θ')‖ / ‖(θ - θ')⊙m‖` at `θ' = θ + δu`, with `u`
/// a unit Gaussian direction per pair. `grad(params, mask)` returns the
/// gradient of the masked objective with respect to `params`. The dense
/// ratio uses an all-ones mask and the same direction.
pub fn probe_pairs<G>(
    grad: G,
    theta: &[Array2<f64>],
    mask: &[Array2<f64>],
    scales: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<(Vec<ProbeRow>, usize)>
where
    G: Fn(&[Array2<f64>], &[Array2<f64>]) -> Result<Vec<Array2<f64>>>,
{
    if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Config("perturbation scales must be positive".into()));
    }
    if theta.len() != mask.len() || theta.iter().zip(mask).any(|(t, m)| t.dim() != m.dim()) {
        return Err(Error::dim("probe mask", theta.len(), mask.len()));
    }
    let ones: Vec<Array2<f64>> = theta.iter().map(|t| Array2::ones(t.dim())).collect();
    let base_masked = grad(theta, mask)?;
    let base_dense = grad(theta, &ones)?;
    let mut rng = substream(seed, streams::PROBES);
    let mut rows = Vec::with_capacity(scales.len() * pairs);
    let mut skipped = 0;
    for &scale in scales {
        for pair in 0..pairs {
            let mut dir: Vec<Array2<f64>> = theta
                .iter()
                .map(|t| Array2::from_shape_simple_fn(t.dim(), || rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let n = norm(dir.iter().flat_map(|d| d.iter().copied()));
            for d in dir.iter_mut() {
                d.mapv_inplace(|v| v / n * scale);
            }
            let moved: Vec<Array2<f64>> = theta.iter().zip(&dir).map(|(t, d)| t + d).collect();
            let ratio = |m: &[Array2<f64>], base: &[Array2<f64>]| -> Result<Option<f64>> {
                let den = norm(
                    theta
                        .iter()
                        .zip(&moved)
                        .zip(m)
                        .flat_map(|((a, b), m)| ndarray::Zip::from(a).and(b).and(m).map_collect(|&a, &b, &m| (a - b) * m)),
                );
                if den == 0.0 {
                    return Ok(None);
                }
                let g = grad(&moved, m)?;
                let num = norm(base.iter().zip(&g).flat_map(|(a, b)| (a - b).into_iter()));
                Ok(Some(num / den))
            };
            let dense = ratio(&ones, &base_dense)?.unwrap_or(0.0);
            let masked = ratio(mask, &base_masked)?;
            if masked.is_none() {
                skipped += 1;
            }
            rows.push(ProbeRow {
                scale,
                pair,
                dense_ratio: dense,
                masked_ratio: masked,
            });
        }
    }
    Ok((rows, skipped))
}

/// Smoothness probe of the cross-entropy of `task` on `(x, y)`, perturbing
/// the trunk weights only.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe(
    store: &ScoredParamStore,
    mask: &TaskMask,
    task: TaskId,
    x: &Array2<f64>,
    y: &[usize],
    scales: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<SmoothnessProbe> {
    let theta: Vec<Array2<f64>> = store.layers.iter().map(|l| l.weights.clone()).collect();
    let m: Vec<Array2<f64>> = mask.layers.iter().map(|b| b.to_f64()).collect();
    let grad = |params: &[Array2<f64>], mult: &[Array2<f64>]| -> Result<Vec<Array2<f64>>> {
        let mut s = store.clone();
        for (layer, p) in s.layers.iter_mut().zip(params) {
            layer.weights.assign(p);
        }
        let soft = crate::mask::SoftMask {
            values: mult.to_vec(),
            major: mask.layers.clone(),
        };
        let out = forward(&s, Mask::Soft(&soft), task, x)?;
        let (_, g) = backward(&s, &out.cache, y)?;
        Ok(g.layers.into_iter().map(|l| l.weights).collect())
    };
    let (rows, skipped) = probe_pairs(grad, &theta, &m, scales, pairs, seed)?;
    Ok(SmoothnessProbe {
        capacity: mask.capacity,
        seed,
        rows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn masked(params: &[Array2<f64>], m: &[Array2<f64>]) -> Vec<Array2<f64>> {
        params.iter().zip(m).map(|(p, m)| p * m * m).collect()
    }

    #[test]
    fn quadratic_is_one_lipschitz() {
        let theta = vec![array![[0.3, -1.2], [2.0, 0.1]], array![[0.5, 0.7, -0.4]]];
        let mask = vec![array![[1.0, 0.0], [0.0, 1.0]], array![[0.0, 1.0, 1.0]]];
        let (rows, skipped) = probe_pairs(|p, m| Ok(masked(p, m)), &theta, &mask, &[1e-3, 0.1, 10.0], 5, 3).unwrap();
        assert_eq!(skipped, 0);
        for r in &rows {
            assert_eq!(r.masked_ratio, Some(1.0));
            assert_eq!(r.dense_ratio, 1.0);
        }
        let again = probe_pairs(|p, m| Ok(masked(p, m)), &theta, &mask, &[1e-3, 0.1, 10.0], 5, 3).unwrap();
        assert_eq!(again.0, rows);
    }

    #[test]
    fn linear_has_zero_ratio_and_empty_mask_is_skipped() {
        let theta = vec![array![[0.3, -1.2]]];
        let c = vec![array![[2.0, -1.0]]];
        let zero = vec![array![[0.0, 0.0]]];
        let (rows, skipped) = probe_pairs(|_, _| Ok(c.clone()), &theta, &zero, &[0.5], 4, 1).unwrap();
        assert_eq!(skipped, 4);
        assert!(rows.iter().all(|r| r.dense_ratio == 0.0 && r.masked_ratio.is_none()));
        assert!(probe_pairs(|_, _| Ok(c.clone()), &theta, &zero, &[0.0], 1, 1).is_err());
    }
}
