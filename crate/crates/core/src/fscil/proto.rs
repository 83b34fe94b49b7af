use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{Mask, SoftMask};
use crate::nn::{forward_features, ScoredParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub mean: Array1<f64>,
    pub count: usize,
}

/// Class prototypes plus the few-shot exemplars kept for replay.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeStore {
    pub prototypes: BTreeMap<usize, Prototype>,
    pub exemplars: Option<Dataset>,
}

impl PrototypeStore {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.prototypes.keys().copied().collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.prototypes.values().next().map(|p| p.mean.len())
    }

    pub fn insert(&mut self, class: usize, proto: Prototype) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != proto.mean.len() {
                return Err(Error::dim("prototype", d, proto.mean.len()));
            }
        }
        self.prototypes.insert(class, proto);
        Ok(())
    }

    /// Replaces or adds every prototype of `other`.
    pub fn merge(&mut self, other: PrototypeStore) -> Result<()> {
        for (c, p) in other.prototypes {
            self.insert(c, p)?;
        }
        Ok(())
    }

    pub fn add_exemplars(&mut self, data: &Dataset) -> Result<()> {
        self.exemplars = Some(match self.exemplars.take() {
            Some(e) => e.concat(data)?,
            None => data.clone(),
        });
        Ok(())
    }
}

/// Per-class mean of `features` rows over `classes`.
pub fn prototypes_from_features(features: &Array2<f64>, labels: &[usize], classes: &[usize]) -> Result<PrototypeStore> {
    if features.nrows() != labels.len() {
        return Err(Error::dim("prototype labels", features.nrows(), labels.len()));
    }
    let mut out = PrototypeStore::default();
    for &c in classes {
        let mut sum = Array1::<f64>::zeros(features.ncols());
        let mut count = 0;
        for (row, _) in features.rows().into_iter().zip(labels).filter(|(_, &y)| y == c) {
            sum += &row;
            count += 1;
        }
        if count == 0 {
            return Err(Error::MissingClass(c as u32));
        }
        out.insert(
            c,
            Prototype {
                mean: sum / count as f64,
                count,
            },
        )?;
    }
    Ok(out)
}

/// Penultimate features of `data` under the soft-masked trunk.
pub fn features_of(store: &ScoredParamStore, soft: &SoftMask, x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(forward_features(store, Mask::Soft(soft), x)?.features)
}

pub fn compute_prototypes(store: &ScoredParamStore, soft: &SoftMask, data: &Dataset, classes: &[usize]) -> Result<PrototypeStore> {
    let f = features_of(store, soft, &data.features)?;
    prototypes_from_features(&f, &data.labels, classes)
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector("cosine distance of a zero vector".into()));
    }
    Ok((1.0 - u.dot(&v) / (nu * nv)).clamp(0.0, 2.0))
}

/// Summed cross-entropy over the softmax of negative cosine distances to
/// every prototype, scaled by `1/temperature`, with its gradient with
/// respect to `features`.
pub fn prototype_loss(
    features: &Array2<f64>,
    labels: &[usize],
    prototypes: &PrototypeStore,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    if features.nrows() != labels.len() {
        return Err(Error::dim("prototype loss labels", features.nrows(), labels.len()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let classes = prototypes.classes();
    let protos: Vec<&Array1<f64>> = prototypes.prototypes.values().map(|p| &p.mean).collect();
    let pnorms: Vec<f64> = protos.iter().map(|p| norm(p.view())).collect();
    if let Some(k) = pnorms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateVector(format!("prototype of class {} is zero", classes[k])));
    }
    if let Some(d) = prototypes.dim() {
        if d != features.ncols() {
            return Err(Error::dim("prototype dimension", d, features.ncols()));
        }
    }
    let mut total = 0.0;
    let mut grad = Array2::zeros(features.dim());
    for (n, (f, &y)) in features.rows().into_iter().zip(labels).enumerate() {
        let target = classes
            .binary_search(&y)
            .map_err(|_| Error::MissingClass(y as u32))?;
        let fnorm = norm(f);
        if fnorm == 0.0 {
            return Err(Error::DegenerateVector(format!("feature of sample {n} is zero")));
        }
        let cos: Vec<f64> = protos
            .iter()
            .zip(&pnorms)
            .map(|(p, &pn)| f.dot(*p) / (fnorm * pn))
            .collect();
        let logits: Vec<f64> = cos.iter().map(|c| (c - 1.0) / temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[target];
        let mut g = grad.row_mut(n);
        for (k, (p, &pn)) in protos.iter().zip(&pnorms).enumerate() {
            let prob = (logits[k] - lse).exp();
            let dz = prob - if k == target { 1.0 } else { 0.0 };
            // d cos / d f = p / (|p||f|) - cos f / |f|^2
            let scale = dz / temperature;
            g.scaled_add(scale / (pn * fnorm), *p);
            g.scaled_add(-scale * cos[k] / (fnorm * fnorm), &f);
        }
    }
    Ok((total, grad))
}

/// Nearest prototype by Euclidean distance; ties go to the lowest class id.
pub fn ncm_from_feature(feature: ArrayView1<'_, f64>, prototypes: &PrototypeStore) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&c, p) in &prototypes.prototypes {
        if p.mean.len() != feature.len() {
            return Err(Error::dim("ncm feature", p.mean.len(), feature.len()));
        }
        let d = (&p.mean - &feature).mapv(|v| v * v).sum().sqrt();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Config("no prototypes to classify against".into()))
}

pub fn ncm_classify(store: &ScoredParamStore, soft: &SoftMask, prototypes: &PrototypeStore, sample: ArrayView1<'_, f64>) -> Result<usize> {
    let x = sample.to_owned().insert_axis(ndarray::Axis(0));
    let f = features_of(store, soft, &x)?;
    ncm_from_feature(f.row(0), prototypes)
}

/// NCM predictions for every row of `x`.
pub fn ncm_predict(store: &ScoredParamStore, soft: &SoftMask, prototypes: &PrototypeStore, x: &Array2<f64>) -> Result<Vec<usize>> {
    let f = features_of(store, soft, x)?;
    f.rows().into_iter().map(|r| ncm_from_feature(r, prototypes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_of(pairs: &[(usize, Array1<f64>)]) -> PrototypeStore {
        let mut s = PrototypeStore::default();
        for (c, m) in pairs {
            s.insert(*c, Prototype { mean: m.clone(), count: 1 }).unwrap();
        }
        s
    }

    #[test]
    fn prototype_means() {
        let f = array![[1.0, 0.0], [0.0, 1.0], [3.0, 3.0]];
        let p = prototypes_from_features(&f, &[0, 0, 1], &[0, 1]).unwrap();
        assert_eq!(p.prototypes[&0].mean, array![0.5, 0.5]);
        assert_eq!(p.prototypes[&1].mean, array![3.0, 3.0]);
        let dup = array![[3.0, 3.0], [3.0, 3.0]];
        assert_eq!(prototypes_from_features(&dup, &[1, 1], &[1]).unwrap().prototypes[&1].mean, array![3.0, 3.0]);
        assert!(matches!(prototypes_from_features(&f, &[0, 0, 1], &[2]), Err(Error::MissingClass(2))));
    }

    #[test]
    fn loss_hand_values() {
        let protos = store_of(&[(0, array![1.0, 0.0]), (1, array![0.0, 1.0])]);
        let (l, _) = prototype_loss(&array![[2.0, 0.0]], &[0], &protos, 1.0).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);

        let same = store_of(&[(0, array![1.0, 1.0]), (1, array![1.0, 1.0]), (2, array![1.0, 1.0])]);
        let (l, _) = prototype_loss(&array![[0.3, 0.9], [1.0, 0.2]], &[0, 2], &same, 1.0).unwrap();
        assert!((l - 2.0 * 3f64.ln()).abs() < 1e-12);

        let f = array![[0.3, 0.7]];
        let a = prototype_loss(&f, &[1], &protos, 1.0).unwrap().0;
        let b = prototype_loss(&(&f * 17.0), &[1], &protos, 1.0).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn degenerate_vectors_and_unknown_labels() {
        let protos = store_of(&[(0, array![1.0, 0.0]), (1, array![0.0, 0.0])]);
        assert!(matches!(
            prototype_loss(&array![[1.0, 1.0]], &[0], &protos, 1.0),
            Err(Error::DegenerateVector(_))
        ));
        let protos = store_of(&[(0, array![1.0, 0.0])]);
        assert!(matches!(
            prototype_loss(&array![[0.0, 0.0]], &[0], &protos, 1.0),
            Err(Error::DegenerateVector(_))
        ));
        assert!(matches!(prototype_loss(&array![[1.0, 0.0]], &[3], &protos, 1.0), Err(Error::MissingClass(3))));
        assert!(cosine_distance(array![0.0, 0.0].view(), array![1.0, 0.0].view()).is_err());
        let d = cosine_distance(array![1.0, 0.0].view(), array![-1.0, 0.0].view()).unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn ncm_examples() {
        let protos = store_of(&[(4, array![0.0, 0.0]), (7, array![2.0, 0.0])]);
        assert_eq!(ncm_from_feature(array![0.9, 0.0].view(), &protos).unwrap(), 4);
        assert_eq!(ncm_from_feature(array![2.0, 0.0].view(), &protos).unwrap(), 7);
        assert_eq!(ncm_from_feature(array![1.0, 0.0].view(), &protos).unwrap(), 4);
        assert!(ncm_from_feature(array![1.0].view(), &PrototypeStore::default()).is_err());
    }
}
