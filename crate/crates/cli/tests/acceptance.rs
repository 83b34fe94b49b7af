//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng as _;
use subnetcl_core::codec::{cap_formula, capacity, decode_masks, encode_masks, EncodedTicketBundle};
use subnetcl_core::data::{fewshot_sessions, gaussian_task, load_mnist_dir, permuted_tasks, synth_gaussian_tasks};
use subnetcl_core::fscil::{
    compute_prototypes, ncm_from_feature, prototype_loss, run_fscil, train_base, train_incremental, FscilConfig,
    Prototype, PrototypeStore,
};
use subnetcl_core::mask::{selected_count, topc_mask, BitMask, Mask, TaskMask};
use subnetcl_core::nn::{backward, forward, loss, NetworkSpec, OptimizerSpec, ScoredParamStore};
use subnetcl_core::rng::{substream, Rng};
use subnetcl_core::til::{metric_acc, metric_bwt, metric_fwt, run_sequence, AccuracyMatrix, TilRunConfig};

type Check = Result<String, String>;

const SKIPPED: &str = "not run: ";

struct Outcome {
    failed: usize,
}

impl Outcome {
    fn report(&mut self, n: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        let over = limit.filter(|l| start.elapsed() > *l);
        let (status, detail) = match (&result, over) {
            (Ok(d), _) if d.starts_with(SKIPPED) => ("SKIP", d[SKIPPED.len()..].to_string()),
            (Ok(d), None) => ("PASS", d.clone()),
            (Ok(d), Some(l)) => ("FAIL", format!("{d}; runtime over {}s", l.as_secs())),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            self.failed += 1;
        }
        println!("criterion {n} [{status}] {name}: {detail} ({secs:.2}s)");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn random_bits(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> BitMask {
    let bits: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(p)).collect();
    BitMask::from_bools(rows, cols, &bits).unwrap()
}

fn random_masks(tasks: usize, shapes: &[(usize, usize)], p: f64, rng: &mut Rng) -> Vec<TaskMask> {
    (0..tasks)
        .map(|_| TaskMask {
            capacity: 100.0 * p,
            layers: shapes.iter().map(|&(r, c)| random_bits(r, c, p, rng)).collect(),
        })
        .collect()
}

fn forget_free() -> Check {
    let stream = synth_gaussian_tasks(5, 4, 16, 4.0, 100, 1).map_err(e)?;
    let cfg = TilRunConfig {
        capacity: 30.0,
        epochs: 5,
        batch_size: 32,
        optimizer: OptimizerSpec::adam(1e-2),
        seed: 1,
        hidden: vec![64, 64],
        ..TilRunConfig::default()
    };
    let run = run_sequence(&stream, &cfg).map_err(e)?;
    let a = &run.matrix;
    for j in 2..=5 {
        for i in 1..j {
            let (later, first) = (a.get(j, i).unwrap(), a.get(i, i).unwrap());
            ensure(later.to_bits() == first.to_bits(), || format!("A[{j}][{i}]={later} but A[{i}][{i}]={first}"))?;
        }
    }
    let m = run.metrics.ok_or("no metrics")?;
    ensure(m.bwt == 0.0, || format!("BWT={}", m.bwt))?;
    Ok(format!("BWT={:?}, every A[j][i] bit-identical to A[i][i], ACC={:.4}", m.bwt, m.acc))
}

fn codec_lossless() -> Check {
    let mut rng = substream(2, "acceptance-codec");
    let mut weights = 0usize;
    for set in 0..200 {
        let tasks = rng.gen_range(1..=7);
        let layers = rng.gen_range(1..=4);
        let shapes: Vec<(usize, usize)> = (0..layers)
            .map(|_| {
                let rows = rng.gen_range(1..=100);
                (rows, rng.gen_range(1..=10_000 / rows))
            })
            .collect();
        let p = rng.gen_range(0.0..=1.0);
        let masks = random_masks(tasks, &shapes, p, &mut rng);
        let bytes = encode_masks(&masks).map_err(e)?.to_bytes().map_err(e)?;
        let decoded = decode_masks(&EncodedTicketBundle::from_bytes(&bytes).map_err(e)?, &shapes).map_err(e)?;
        for (t, (d, m)) in decoded.iter().zip(&masks).enumerate() {
            ensure(d == &m.layers, || format!("set {set} task {} differs after roundtrip", t + 1))?;
        }
        weights += shapes.iter().map(|(r, c)| r * c).sum::<usize>() * tasks;
    }
    Ok(format!("200 mask sets, {weights} mask bits, all bit-exact"))
}

fn compression_reference() -> Check {
    let base = gaussian_task(10, 64, 4.0, 100, 3, 0).map_err(e)?;
    let stream = permuted_tasks(&base, 7, 3).map_err(e)?;
    let cfg = TilRunConfig {
        capacity: 10.0,
        epochs: 2,
        batch_size: 64,
        optimizer: OptimizerSpec::adam(1e-2),
        seed: 3,
        hidden: vec![100, 100],
        forward_transfer: false,
        ..TilRunConfig::default()
    };
    let run = run_sequence(&stream, &cfg).map_err(e)?;
    let wsn = run.metrics.ok_or("no metrics")?.capacity.compression_rate;
    let shapes: Vec<(usize, usize)> = run.masks[0].layers.iter().map(BitMask::shape).collect();
    let mut rng = substream(3, "acceptance-bernoulli");
    let coin = encode_masks(&random_masks(7, &shapes, 0.5, &mut rng)).map_err(e)?.compression_rate();
    ensure(wsn > coin, || format!("alpha {wsn:.4} not above Bernoulli(0.5) alpha {coin:.4}"))?;
    Ok(format!("alpha={wsn:.4} (7 tasks, c=10) vs Bernoulli(0.5) alpha={coin:.4}"))
}

fn cap_arithmetic() -> Check {
    let mut rng = substream(4, "acceptance-cap");
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (s, alpha, t) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0), rng.gen_range(1..=64usize));
        worst = worst.max((cap_formula(s, alpha, t) - ((1.0 - s) + (1.0 - alpha) * t as f64 / 32.0)).abs());
    }
    for _ in 0..50 {
        let tasks = rng.gen_range(1..=7);
        let shapes = [(rng.gen_range(1..40), rng.gen_range(1..40)), (rng.gen_range(1..40), 3)];
        let p = rng.gen_range(0.05..0.6);
        let masks = random_masks(tasks, &shapes, p, &mut rng);
        let report = capacity(&masks, None).map_err(e)?;
        let numel: usize = shapes.iter().map(|(r, c)| r * c).sum();
        let mut used = 0usize;
        for l in 0..shapes.len() {
            let mut union = masks[0].layers[l].clone();
            for m in &masks[1..] {
                union = union.or(&m.layers[l]).map_err(e)?;
            }
            used += union.count_ones();
        }
        let s = 1.0 - used as f64 / numel as f64;
        let payload = encode_masks(&masks).map_err(e)?.payload_bits;
        let alpha = 1.0 - payload as f64 / (tasks * numel) as f64;
        let hand = (1.0 - s) + (1.0 - alpha) * tasks as f64 / 32.0;
        worst = worst.max((report.cap_formula - hand).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("50 raw triples and 50 mask-derived triples, max deviation {worst:e}"))
}

fn pmnist() -> Check {
    let Some(dir) = std::env::var_os("SUBNETCL_MNIST_DIR").map(PathBuf::from) else {
        return Ok(format!("{SKIPPED}set SUBNETCL_MNIST_DIR to a directory holding the MNIST IDX files"));
    };
    let base = load_mnist_dir(&dir).map_err(e)?;
    let stream = permuted_tasks(&base, 10, 5).map_err(e)?;
    let cfg = TilRunConfig {
        capacity: 30.0,
        epochs: 3,
        batch_size: 64,
        optimizer: OptimizerSpec::adam(1e-3),
        seed: 5,
        hidden: vec![100, 100],
        forward_transfer: false,
        ..TilRunConfig::default()
    };
    let run = run_sequence(&stream, &cfg).map_err(e)?;
    let acc = run.metrics.ok_or("no metrics")?.acc;
    ensure(acc >= 0.945, || format!("ACC={:.2} below 94.5", 100.0 * acc))?;
    Ok(format!("ACC={:.2}", 100.0 * acc))
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn gradients() -> Check {
    const H: f64 = 1e-6;
    let mut rng = substream(6, "acceptance-grad");
    let mut worst_net = 0.0f64;
    for seed in 0..20 {
        let mut store = ScoredParamStore::init(&NetworkSpec::new(5, vec![6, 4]), seed).map_err(e)?;
        store.add_head(1, 3).map_err(e)?;
        let x = Array2::from_shape_simple_fn((4, 5), || rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let mask: Vec<BitMask> = store.layer_shapes().iter().map(|&(r, c)| random_bits(r, c, 0.6, &mut rng)).collect();
        let out = forward(&store, Mask::Binary(&mask), 1, &x).map_err(e)?;
        let (_, grads) = backward(&store, &out.cache, &y).map_err(e)?;
        for (l, g) in grads.layers.iter().enumerate() {
            let mut numeric = Vec::new();
            for i in 0..g.weights.len() {
                let mut probe = store.clone();
                let w = &mut probe.layers[l].weights.as_slice_mut().unwrap()[i];
                let orig = *w;
                *w = orig + H;
                let lp = loss(&probe, Mask::Binary(&mask), 1, &x, &y).map_err(e)?;
                probe.layers[l].weights.as_slice_mut().unwrap()[i] = orig - H;
                let lm = loss(&probe, Mask::Binary(&mask), 1, &x, &y).map_err(e)?;
                numeric.push((lp - lm) / (2.0 * H));
            }
            worst_net = worst_net.max(rel_err(g.weights.as_slice().unwrap(), &numeric));
        }
    }
    let mut worst_proto = 0.0f64;
    for _ in 0..20 {
        let mut protos = PrototypeStore::default();
        for c in 0..4 {
            let mean = Array1::from_shape_simple_fn(6, || rng.gen_range(-1.0..1.0));
            protos.insert(c, Prototype { mean, count: 1 }).map_err(e)?;
        }
        let f = Array2::from_shape_simple_fn((3, 6), || rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
        let (_, grad) = prototype_loss(&f, &y, &protos, 1.0).map_err(e)?;
        let numeric: Vec<f64> = (0..f.len())
            .map(|i| {
                let mut fp = f.clone();
                fp.as_slice_mut().unwrap()[i] += H;
                let mut fm = f.clone();
                fm.as_slice_mut().unwrap()[i] -= H;
                let lp = prototype_loss(&fp, &y, &protos, 1.0).unwrap().0;
                let lm = prototype_loss(&fm, &y, &protos, 1.0).unwrap().0;
                (lp - lm) / (2.0 * H)
            })
            .collect();
        worst_proto = worst_proto.max(rel_err(grad.as_slice().unwrap(), &numeric));
    }
    ensure(worst_net < 1e-5 && worst_proto < 1e-5, || {
        format!("max relative error: masked net {worst_net:e}, prototype loss {worst_proto:e}")
    })?;
    Ok(format!("20+20 instances, max relative error {worst_net:.1e} (masked net), {worst_proto:.1e} (prototype loss)"))
}

fn oracles() -> Check {
    let mut rng = substream(7, "acceptance-oracles");
    let values: Vec<f64> = (0..10_000).map(|_| (rng.gen_range(0..500) as f64) / 7.0).collect();
    let scores = Array2::from_shape_vec((100, 100), values.clone()).map_err(e)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    for c in [0.5, 1.0, 3.0, 10.0, 30.0, 50.0, 80.0, 100.0] {
        let mask = topc_mask(std::slice::from_ref(&scores), c).map_err(e)?;
        let k = selected_count(c, values.len());
        let mut expected = vec![false; values.len()];
        for &i in &order[..k] {
            expected[i] = true;
        }
        let got: Vec<bool> = (0..values.len()).map(|i| mask.layers[0].get(i)).collect();
        ensure(got == expected, || format!("top-c selection differs from sort at c={c}"))?;
    }
    for draw in 0..1000 {
        let dim = rng.gen_range(1..8);
        let mut protos = PrototypeStore::default();
        let mut plain = Vec::new();
        for k in 0..rng.gen_range(1..10) {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            protos.insert(5 * k, Prototype { mean: Array1::from_vec(v.clone()), count: 1 }).map_err(e)?;
            plain.push((5 * k, v));
        }
        let f: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut best = (usize::MAX, f64::INFINITY);
        for (c, p) in &plain {
            let d = f.iter().zip(p).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
            if d < best.1 {
                best = (*c, d);
            }
        }
        let got = ncm_from_feature(Array1::from_vec(f).view(), &protos).map_err(e)?;
        ensure(got == best.0, || format!("NCM draw {draw}: {got} vs brute force {}", best.0))?;
    }
    for n in 0..100 {
        let t = rng.gen_range(1..=10);
        let a: Vec<Vec<f64>> = (0..t).map(|_| (0..t).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect();
        let r: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let mut m = AccuracyMatrix::new();
        for (j, (row, &rj)) in a.iter().zip(&r).enumerate() {
            for (i, &v) in row.iter().enumerate() {
                m.set(j + 1, i + 1, v).map_err(e)?;
            }
            m.set_random(j + 1, rj).map_err(e)?;
        }
        let acc = a[t - 1].iter().sum::<f64>() / t as f64;
        let (bwt, fwt) = if t == 1 {
            (0.0, None)
        } else {
            let d = (t - 1) as f64;
            (
                (0..t - 1).map(|i| a[t - 1][i] - a[i][i]).sum::<f64>() / d,
                Some((1..t).map(|i| a[i - 1][i] - r[i]).sum::<f64>() / d),
            )
        };
        let got = (metric_acc(&m, t).map_err(e)?, metric_bwt(&m, t).map_err(e)?, metric_fwt(&m, t).map_err(e)?);
        ensure(got == (acc, bwt, fwt), || format!("matrix {n}: metrics {got:?} vs reference {:?}", (acc, bwt, fwt)))?;
    }
    Ok("top-c (10^4 entries, 8 capacities), NCM (1000 draws), metrics (100 matrices) all exact".into())
}

fn fscil_structure() -> Check {
    let base = gaussian_task(12, 16, 5.0, 60, 8, 0).map_err(e)?;
    let sessions = fewshot_sessions(&base, 6, 2, 2, 3, 8).map_err(e)?;
    let cfg = FscilConfig {
        capacity: 80.0,
        base_epochs: 20,
        seed: 8,
        hidden: vec![64, 64],
        ..FscilConfig::default()
    };
    let mut store = ScoredParamStore::init(&NetworkSpec::new(16, cfg.hidden.clone()), cfg.seed).map_err(e)?;
    let outcome = train_base(&mut store, &sessions[0].train, &cfg).map_err(e)?;
    let frozen = store.clone();
    let mut protos =
        compute_prototypes(&store, &outcome.soft, &sessions[0].train, &sessions[0].classes).map_err(e)?;
    for s in &sessions[1..] {
        train_incremental(&mut store, &outcome.soft, s, &mut protos, &cfg).map_err(e)?;
        for (l, major) in outcome.soft.major.iter().enumerate() {
            let (w0, w1) = (frozen.layers[l].weights.as_slice().unwrap(), store.layers[l].weights.as_slice().unwrap());
            ensure(major.iter_ones().all(|i| w0[i].to_bits() == w1[i].to_bits()), || {
                format!("major weight of layer {l} moved in session {}", s.index)
            })?;
        }
    }
    let run = run_fscil(&sessions, &cfg).map_err(e)?;
    ensure(run.rows.len() == 4, || format!("{} session rows", run.rows.len()))?;
    let base_acc = run.rows[0].accuracy;
    ensure(base_acc >= 0.9, || format!("base accuracy {base_acc:.4} below 0.9"))?;
    let row: Vec<String> = run.rows.iter().map(|r| format!("{:.2}", 100.0 * r.accuracy)).collect();
    Ok(format!("major weights bit-identical over 3 sessions, accuracy row [{}]", row.join(", ")))
}

fn cli_determinism(scratch: &Path) -> Check {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut lines = Vec::new();
    for (cmd, cfg) in [("til", "til_gaussian.toml"), ("fscil", "fscil_gaussian.toml")] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = scratch.join(format!("{cmd}-{rep}"));
            let config = root.join(cfg);
            let args = ["subnetcl", cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
            subnetcl::run(args).map_err(|err| err.line())?;
            outputs.push(std::fs::read(out.join("metrics.csv")).map_err(e)?);
        }
        ensure(outputs[0] == outputs[1], || format!("{cmd} metrics.csv differs between runs"))?;
        lines.push(format!("{cmd} ({} bytes)", outputs[0].len()));
    }
    Ok(format!("byte-identical metrics.csv for {}", lines.join(" and ")))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let mut o = Outcome { failed: 0 };
    let secs = Duration::from_secs;
    o.report(1, "forget-free exactness", Some(secs(30)), forget_free);
    o.report(2, "codec losslessness", Some(secs(10)), codec_lossless);
    o.report(3, "compression reference", Some(secs(120)), compression_reference);
    o.report(4, "capacity formula", Some(secs(1)), cap_arithmetic);
    o.report(5, "permuted MNIST headline", Some(secs(45 * 60)), pmnist);
    o.report(6, "gradient suites", Some(secs(10)), gradients);
    o.report(7, "oracle equivalences", Some(secs(10)), oracles);
    o.report(8, "few-shot structure", Some(secs(60)), fscil_structure);
    o.report(9, "determinism", None, || cli_determinism(scratch.path()));
    if o.failed > 0 {
        println!("{} criteria failed", o.failed);
        std::process::exit(1);
    }
}
