use ndarray::Array2;
use rand::Rng as _;

use super::bits::BitMask;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Number of weights a layer of `numel` entries keeps at capacity `c` percent:
/// `ceil(c / 100 * numel)`, clamped to `[1, numel]`.
///
/// The product is formed before the division and nudged down by a relative
/// 1e-12 so that values like `30 * 100 / 100` never round up past an exact
/// integer.
pub fn selected_count(capacity: f64, numel: usize) -> usize {
    let exact = capacity * numel as f64 / 100.0;
    let k = (exact - exact.abs() * 1e-12).ceil() as usize;
    k.clamp(1, numel)
}

pub fn validate_capacity(capacity: f64) -> Result<()> {
    if !(capacity > 0.0 && capacity <= 100.0) {
        return Err(Error::Config(format!(
            "capacity must lie in (0, 100], got {capacity}"
        )));
    }
    Ok(())
}

/// Binary per-layer selection `m_t` at capacity `c` (percent).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMask {
    pub capacity: f64,
    pub layers: Vec<BitMask>,
}

impl TaskMask {
    pub fn count_ones(&self) -> usize {
        self.layers.iter().map(BitMask::count_ones).sum()
    }

    pub fn numel(&self) -> usize {
        self.layers.iter().map(BitMask::len).sum()
    }
}

/// Running union `M_t = m_1 | ... | m_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumMask {
    pub layers: Vec<BitMask>,
    pub tasks: u32,
}

impl AccumMask {
    pub fn empty(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| BitMask::zeros(r, c)).collect(),
            tasks: 0,
        }
    }

    pub fn count_ones(&self) -> usize {
        self.layers.iter().map(BitMask::count_ones).sum()
    }

    pub fn numel(&self) -> usize {
        self.layers.iter().map(BitMask::len).sum()
    }

    /// Fraction of weights used by at least one task.
    pub fn used_fraction(&self) -> f64 {
        let n = self.numel();
        if n == 0 {
            0.0
        } else {
            self.count_ones() as f64 / n as f64
        }
    }
}

/// Real-valued mask: exactly 1 on the major support, `[0, 1)` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub values: Vec<Array2<f64>>,
    pub major: Vec<BitMask>,
}

impl SoftMask {
    pub fn ones(shapes: &[(usize, usize)]) -> Self {
        Self {
            values: shapes.iter().map(|&s| Array2::ones(s)).collect(),
            major: shapes.iter().map(|&(r, c)| BitMask::ones(r, c)).collect(),
        }
    }

    /// Minor part: the soft values with every major entry zeroed.
    pub fn minor(&self, layer: usize) -> Array2<f64> {
        let mut out = self.values[layer].clone();
        let flat = out.as_slice_mut().expect("mask values are contiguous");
        for i in self.major[layer].iter_ones() {
            flat[i] = 0.0;
        }
        out
    }

    /// Redraws every minor entry from U(0,1), keeping the major support.
    pub fn resample_minor(&mut self, rng: &mut Rng) {
        for (values, major) in self.values.iter_mut().zip(&self.major) {
            fill_background(values, major, rng, |u| u);
        }
    }

    pub fn major_count(&self) -> usize {
        self.major.iter().map(BitMask::count_ones).sum()
    }
}

fn fill_background(values: &mut Array2<f64>, major: &BitMask, rng: &mut Rng, draw: impl Fn(f64) -> f64) {
    let flat = values.as_slice_mut().expect("mask values are contiguous");
    for (i, v) in flat.iter_mut().enumerate() {
        *v = if major.get(i) { 1.0 } else { draw(rng.gen::<f64>()) };
    }
}

/// Mask applied in a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Mask<'a> {
    /// Every weight active.
    Dense,
    Binary(&'a [BitMask]),
    Soft(&'a SoftMask),
}

impl<'a> Mask<'a> {
    pub fn task(mask: &'a TaskMask) -> Self {
        Mask::Binary(&mask.layers)
    }

    pub fn accum(mask: &'a AccumMask) -> Self {
        Mask::Binary(&mask.layers)
    }

    pub fn num_layers(&self) -> Option<usize> {
        match self {
            Mask::Dense => None,
            Mask::Binary(l) => Some(l.len()),
            Mask::Soft(s) => Some(s.values.len()),
        }
    }

    pub fn shape(&self, layer: usize) -> Option<(usize, usize)> {
        match self {
            Mask::Dense => None,
            Mask::Binary(l) => Some(l[layer].shape()),
            Mask::Soft(s) => {
                let d = s.values[layer].dim();
                Some(d)
            }
        }
    }

    /// Elementwise multiplier for `layer`.
    pub fn multiplier(&self, layer: usize, shape: (usize, usize)) -> Array2<f64> {
        match self {
            Mask::Dense => Array2::ones(shape),
            Mask::Binary(l) => l[layer].to_f64(),
            Mask::Soft(s) => s.values[layer].clone(),
        }
    }
}

/// Top-`c`% selection per layer. Ties go to the lowest flat index.
pub fn topc_mask(scores: &[Array2<f64>], capacity: f64) -> Result<TaskMask> {
    validate_capacity(capacity)?;
    let layers = scores
        .iter()
        .map(|s| topc_layer(s, capacity))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskMask { capacity, layers })
}

fn topc_layer(scores: &Array2<f64>, capacity: f64) -> Result<BitMask> {
    let (rows, cols) = scores.dim();
    let numel = rows * cols;
    if numel == 0 {
        return Err(Error::Config("cannot select from an empty layer".into()));
    }
    let k = selected_count(capacity, numel);
    let mut out = BitMask::zeros(rows, cols);
    if k == numel {
        return Ok(BitMask::ones(rows, cols));
    }
    let flat: Vec<f64> = scores.iter().copied().collect();
    let mut order: Vec<usize> = (0..numel).collect();
    let cmp = |a: &usize, b: &usize| flat[*b].total_cmp(&flat[*a]).then(a.cmp(b));
    order.select_nth_unstable_by(k - 1, cmp);
    for &i in &order[..k] {
        out.set(i, true);
    }
    Ok(out)
}

/// `M_t = M_{t-1} | m_t`.
pub fn accumulate(prev: &AccumMask, new: &TaskMask) -> Result<AccumMask> {
    if prev.layers.len() != new.layers.len() {
        return Err(Error::dim("accumulate", prev.layers.len(), new.layers.len()));
    }
    let layers = prev
        .layers
        .iter()
        .zip(&new.layers)
        .map(|(a, b)| a.or(b))
        .collect::<Result<Vec<_>>>()?;
    Ok(AccumMask {
        layers,
        tasks: prev.tasks + 1,
    })
}

/// Soft mask with the given major support and a fresh U(0,1) minor part.
pub fn make_soft_mask(major: &[BitMask], rng: &mut Rng) -> SoftMask {
    let mut values: Vec<Array2<f64>> = major.iter().map(|m| Array2::zeros(m.shape())).collect();
    for (v, m) in values.iter_mut().zip(major) {
        fill_background(v, m, rng, |u| u);
    }
    SoftMask {
        values,
        major: major.to_vec(),
    }
}

/// Holds the foreground at exactly 1 and fills the background with noise in
/// `(0, epsilon]`.
pub fn inject_inference_noise(major: &[BitMask], epsilon: f64, rng: &mut Rng) -> Result<SoftMask> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!(
            "noise scale must be positive and finite, got {epsilon}"
        )));
    }
    let mut values: Vec<Array2<f64>> = major.iter().map(|m| Array2::zeros(m.shape())).collect();
    for (v, m) in values.iter_mut().zip(major) {
        // gen() is in [0, 1), so 1 - u is in (0, 1].
        fill_background(v, m, rng, |u| epsilon * (1.0 - u));
    }
    Ok(SoftMask {
        values,
        major: major.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::arr2;

    fn bits(v: &[u8]) -> BitMask {
        BitMask::from_bools(1, v.len(), &v.iter().map(|&b| b == 1).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn topc_hand_examples() {
        let m = topc_mask(&[arr2(&[[0.9, 0.1, 0.5, 0.7]])], 50.0).unwrap();
        assert_eq!(m.layers[0], bits(&[1, 0, 0, 1]));

        let m = topc_mask(&[arr2(&[[0.3, 0.3, 0.3, 0.3]])], 50.0).unwrap();
        assert_eq!(m.layers[0], bits(&[1, 1, 0, 0]));

        let m = topc_mask(&[arr2(&[[0.3, -1.0], [2.0, 0.0]])], 100.0).unwrap();
        assert_eq!(m.layers[0], BitMask::ones(2, 2));
    }

    #[test]
    fn topc_rejects_bad_capacity_and_empty_layers() {
        let s = [arr2(&[[1.0]])];
        assert!(topc_mask(&s, 0.0).is_err());
        assert!(topc_mask(&s, 100.5).is_err());
        assert!(topc_mask(&[Array2::zeros((0, 3))], 10.0).is_err());
    }

    #[test]
    fn selected_count_rounds_up_and_keeps_one() {
        assert_eq!(selected_count(30.0, 100), 30);
        assert_eq!(selected_count(10.0, 78_400), 7_840);
        assert_eq!(selected_count(1.0, 10), 1);
        assert_eq!(selected_count(50.0, 3), 2);
        assert_eq!(selected_count(100.0, 7), 7);
    }

    #[test]
    fn accumulate_examples() {
        let prev = AccumMask {
            layers: vec![bits(&[1, 0, 0])],
            tasks: 1,
        };
        let new = TaskMask {
            capacity: 34.0,
            layers: vec![bits(&[0, 0, 1])],
        };
        let acc = accumulate(&prev, &new).unwrap();
        assert_eq!(acc.layers[0], bits(&[1, 0, 1]));
        assert_eq!(acc.tasks, 2);

        let zeros = TaskMask {
            capacity: 1.0,
            layers: vec![bits(&[0, 0, 0])],
        };
        assert_eq!(accumulate(&acc, &zeros).unwrap().layers, acc.layers);
        let same = TaskMask {
            capacity: 1.0,
            layers: acc.layers.clone(),
        };
        assert_eq!(accumulate(&acc, &same).unwrap().layers, acc.layers);
    }

    #[test]
    fn soft_mask_keeps_major_and_is_seeded() {
        let major = vec![bits(&[1, 0, 1, 0, 0, 1])];
        let a = make_soft_mask(&major, &mut substream(3, "minor"));
        let b = make_soft_mask(&major, &mut substream(3, "minor"));
        assert_eq!(a, b);
        let ones = a.values[0].iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, 3);
        assert!(a.values[0].iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.minor(0)[[0, 0]], 0.0);

        let full = make_soft_mask(&[BitMask::ones(2, 2)], &mut substream(1, "m"));
        assert!(full.values[0].iter().all(|&v| v == 1.0));

        let mut c = a.clone();
        c.resample_minor(&mut substream(4, "minor"));
        assert_eq!(c.major, a.major);
        assert_ne!(c.values, a.values);
    }

    #[test]
    fn inference_noise_bounds() {
        let major = vec![BitMask::from_bools(10, 10, &(0..100).map(|i| i % 3 == 0).collect::<Vec<_>>()).unwrap()];
        let soft = inject_inference_noise(&major, 1e-3, &mut substream(9, "noise")).unwrap();
        let mut fg = 0;
        for (i, &v) in soft.values[0].iter().enumerate() {
            if major[0].get(i) {
                assert_eq!(v, 1.0);
                fg += 1;
            } else {
                assert!(v > 0.0 && v <= 1e-3, "background {v}");
            }
        }
        assert_eq!(fg, major[0].count_ones());
        assert!(inject_inference_noise(&major, 0.0, &mut substream(9, "noise")).is_err());
        assert!(inject_inference_noise(&major, -1.0, &mut substream(9, "noise")).is_err());
    }
}
