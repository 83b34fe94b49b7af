//! Analytic gradients against central finite differences.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use subnetcl_core::fscil::{prototype_loss, Prototype, PrototypeStore};
use subnetcl_core::mask::{make_soft_mask, BitMask, Mask, SoftMask};
use subnetcl_core::nn::{backward, forward, loss, NetworkSpec, ScoredParamStore};
use subnetcl_core::rng::{indexed_substream, Rng};

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;
const INSTANCES: u64 = 24;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn random_array(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

fn random_bits(shape: (usize, usize), rng: &mut Rng) -> BitMask {
    let bits: Vec<bool> = (0..shape.0 * shape.1).map(|_| rng.gen_bool(0.6)).collect();
    BitMask::from_bools(shape.0, shape.1, &bits).unwrap()
}

struct Instance {
    store: ScoredParamStore,
    x: Array2<f64>,
    y: Vec<usize>,
    binary: Vec<BitMask>,
    soft: SoftMask,
}

fn instance(seed: u64) -> Instance {
    let mut rng = indexed_substream(seed, "grad-test", 0);
    let input = rng.gen_range(2..6);
    let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(2..7)).collect();
    let classes = rng.gen_range(2..5);
    let batch = rng.gen_range(1..6);
    let mut store = ScoredParamStore::init(&NetworkSpec::new(input, hidden), seed).unwrap();
    store.add_head(1, classes).unwrap();
    for l in &mut store.layers {
        l.bias = Array1::from_shape_simple_fn(l.bias.len(), || rng.gen_range(-0.2..0.2));
    }
    let x = random_array(batch, input, &mut rng);
    let y = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    let shapes = store.layer_shapes();
    let binary: Vec<BitMask> = shapes.iter().map(|&s| random_bits(s, &mut rng)).collect();
    let soft = make_soft_mask(&binary, &mut rng);
    Instance { store, x, y, binary, soft }
}

enum Param {
    Weight(usize),
    Bias(usize),
    HeadWeight,
    HeadBias,
}

fn slot<'a>(store: &'a mut ScoredParamStore, which: &Param, i: usize) -> &'a mut f64 {
    let flat = match *which {
        Param::Weight(l) => store.layers[l].weights.as_slice_mut(),
        Param::Bias(l) => store.layers[l].bias.as_slice_mut(),
        Param::HeadWeight => store.heads.get_mut(&1).unwrap().weights.as_slice_mut(),
        Param::HeadBias => store.heads.get_mut(&1).unwrap().bias.as_slice_mut(),
    };
    &mut flat.unwrap()[i]
}

fn numeric(inst: &Instance, mask: Mask<'_>, which: Param) -> Vec<f64> {
    let mut store = inst.store.clone();
    let n = match which {
        Param::Weight(l) => store.layers[l].weights.len(),
        Param::Bias(l) => store.layers[l].bias.len(),
        Param::HeadWeight => store.heads[&1].weights.len(),
        Param::HeadBias => store.heads[&1].bias.len(),
    };
    (0..n)
        .map(|i| {
            let orig = *slot(&mut store, &which, i);
            let mut at = |v: f64| {
                *slot(&mut store, &which, i) = v;
                loss(&store, mask, 1, &inst.x, &inst.y).unwrap()
            };
            let d = (at(orig + H) - at(orig - H)) / (2.0 * H);
            *slot(&mut store, &which, i) = orig;
            d
        })
        .collect()
}

fn check_masked(inst: &Instance, mask: Mask<'_>) -> f64 {
    let out = forward(&inst.store, mask, 1, &inst.x).unwrap();
    let (_, grads) = backward(&inst.store, &out.cache, &inst.y).unwrap();
    let mut worst = 0.0f64;
    for (l, g) in grads.layers.iter().enumerate() {
        let m = mask.multiplier(l, g.weights.dim());
        // Straight-through rule, exactly.
        assert_eq!(g.weights, &g.effective * &m);
        assert_eq!(g.scores, &g.effective * &inst.store.layers[l].weights);
        worst = worst.max(rel_err(g.weights.as_slice().unwrap(), &numeric(inst, mask, Param::Weight(l))));
        worst = worst.max(rel_err(g.bias.as_slice().unwrap(), &numeric(inst, mask, Param::Bias(l))));
    }
    let head = grads.head.as_ref().unwrap();
    worst = worst.max(rel_err(head.weights.as_slice().unwrap(), &numeric(inst, mask, Param::HeadWeight)));
    worst = worst.max(rel_err(head.bias.as_slice().unwrap(), &numeric(inst, mask, Param::HeadBias)));
    worst
}

#[test]
fn dense_binary_and_soft_masked_gradients_match_finite_differences() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        for (name, mask) in [
            ("dense", Mask::Dense),
            ("binary", Mask::Binary(&inst.binary)),
            ("soft", Mask::Soft(&inst.soft)),
        ] {
            let err = check_masked(&inst, mask);
            assert!(err < TOL, "seed {seed} {name}: relative error {err:e}");
        }
    }
}

#[test]
fn prototype_loss_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut rng = indexed_substream(seed, "proto-grad", 0);
        let dim = rng.gen_range(2..8);
        let classes = rng.gen_range(2..6);
        let n = rng.gen_range(1..6);
        let temperature = [1.0, 0.5, 2.0][seed as usize % 3];
        let mut protos = PrototypeStore::default();
        for c in 0..classes {
            let mean = Array1::from_shape_simple_fn(dim, || rng.gen_range(-1.0..1.0));
            protos.insert(c * 2, Prototype { mean, count: 1 }).unwrap();
        }
        let f = random_array(n, dim, &mut rng);
        let y: Vec<usize> = (0..n).map(|_| 2 * rng.gen_range(0..classes)).collect();
        let (_, grad) = prototype_loss(&f, &y, &protos, temperature).unwrap();
        let mut num = Vec::with_capacity(f.len());
        for i in 0..f.len() {
            let mut fp = f.clone();
            fp.as_slice_mut().unwrap()[i] += H;
            let mut fm = f.clone();
            fm.as_slice_mut().unwrap()[i] -= H;
            let lp = prototype_loss(&fp, &y, &protos, temperature).unwrap().0;
            let lm = prototype_loss(&fm, &y, &protos, temperature).unwrap().0;
            num.push((lp - lm) / (2.0 * H));
        }
        let err = rel_err(grad.as_slice().unwrap(), &num);
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}
