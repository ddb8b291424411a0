//! Independent reference implementations shared by the integration and
//! acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use pada_core::data::Dataset;
use pada_core::nn::{self, Batch, GradientSet};
use pada_core::optim::{cosine_lr, sgd_step, OptimizerState};
use pada_core::rng::{stream_rng, Stream};
use pada_core::space::{CellSpec, OpKind, Path};
use pada_core::supernet::Supernet;
use pada_core::tensor::Tensor;
use pada_core::train::{EpochMetrics, TrainConfig};
use pada_core::variance::GradVarTracker;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Supernet with every tensor (biases included) drawn at random.
pub fn random_supernet(spec: &CellSpec, rng: &mut ChaCha8Rng) -> Supernet {
    let mut net = Supernet::build(spec, rng).unwrap();
    let names: Vec<String> = net.names().to_vec();
    for name in names {
        let shape = net.param(&name).unwrap().shape().to_vec();
        let t = random_tensor(rng, &shape, 0.8);
        *net.param_mut(&name).unwrap() = t;
    }
    net
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, d_in: usize, n_classes: usize) -> Batch {
    Batch::new(
        random_tensor(rng, &[b, d_in], 1.0),
        (0..b).map(|_| rng.random_range(0..n_classes)).collect(),
        (0..b).collect(),
    )
    .unwrap()
}

pub fn loss_at(net: &Supernet, path: &Path, batch: &Batch) -> f64 {
    let (logits, _) = nn::forward(net, path, batch).unwrap();
    nn::cross_entropy(&logits, &batch.labels)
}

/// Relative error with an absolute floor below which differences are
/// dominated by finite-difference rounding rather than gradient error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Largest relative error between analytic and central-difference gradients
/// over every element of every parameter in `grads`.
pub fn max_fd_error(
    net: &Supernet,
    path: &Path,
    batch: &Batch,
    grads: &GradientSet,
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (name, g) in grads.iter() {
        for i in 0..g.len() {
            let mut plus = net.clone();
            plus.param_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = net.clone();
            minus.param_mut(name).unwrap().data_mut()[i] -= h;
            let fd = (loss_at(&plus, path, batch) - loss_at(&minus, path, batch)) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[i], fd));
        }
    }
    worst
}

/// A tiny random instance whose path uses `forced` on edge `edge`; instances
/// with a ReLU pre-activation within 1e-3 of the kink are redrawn, since a
/// finite difference straddling the kink measures a different function.
pub fn fd_instance(seed: u64, edge: usize, forced: OpKind) -> (Supernet, Path, Batch) {
    let spec = CellSpec::full(4, 3, 3).unwrap();
    let mut r = rng(seed);
    loop {
        let net = random_supernet(&spec, &mut r);
        let mut path = spec.random_path(&mut r);
        path.ops[edge] = OpKind::ALL.iter().position(|&o| o == forced).unwrap();
        let batch = random_batch(&mut r, 2, 3, 3);
        let (_, cache) = nn::forward(&net, &path, &batch).unwrap();
        if cache.min_abs_preactivation() >= 1e-3 {
            return (net, path, batch);
        }
    }
}

pub fn brute_force_kendall(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).partial_cmp(&0.0).unwrap() as i64;
            let y = (b[i] - b[j]).partial_cmp(&0.0).unwrap() as i64;
            s += x * y;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

/// Top-k by descending score, earlier index first among equals.
pub fn brute_force_topk(scores: &[f64], k: usize) -> std::collections::BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    idx.into_iter().take(k).collect()
}

pub fn brute_force_precision(pred: &[f64], truth: &[f64], k_frac: f64) -> f64 {
    let k = ((k_frac * pred.len() as f64).floor() as usize).max(1);
    let p = brute_force_topk(pred, k);
    let t = brute_force_topk(truth, k);
    p.intersection(&t).count() as f64 / k as f64
}

/// Softmax minus one-hot written out directly.
pub fn reference_last_layer(logits: &Tensor, labels: &[usize]) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter()
                .enumerate()
                .map(|(c, v)| v / z - if c == labels[i] { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Single-path one-shot training written from scratch: uniform op per edge,
/// a fresh uniform permutation of the data per epoch, plain SGD.
pub fn reference_spos(cfg: &TrainConfig, spec: &CellSpec, data: &Dataset) -> Vec<EpochMetrics> {
    let mut net = Supernet::build(spec, &mut stream_rng(cfg.master_seed, Stream::Init)).unwrap();
    let mut path_rng = stream_rng(cfg.master_seed, Stream::Path);
    let mut data_rng = stream_rng(cfg.master_seed, Stream::Data);
    let mut opt =
        OptimizerState::new(cfg.base_lr, cfg.min_lr, cfg.momentum, cfg.weight_decay).unwrap();
    let mut history = Vec::new();
    let mut steps = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr, cfg.min_lr).unwrap();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut data_rng);
        let mut gv = GradVarTracker::new(cfg.gv_scope);
        let mut loss = 0.0;
        let mut batches = 0;
        for ids in order.chunks(cfg.batch_size) {
            let path = Path::new(
                (0..spec.n_edges())
                    .map(|_| (path_rng.random::<f64>() * spec.n_ops() as f64) as usize)
                    .collect(),
            );
            let batch = data.batch(ids);
            let (_, cache) = nn::forward(&net, &path, &batch).unwrap();
            let bw = nn::backward(&net, &path, &batch, &cache, 1.0).unwrap();
            gv.record(&bw.grads);
            sgd_step(&mut net, &bw.grads, &mut opt, lr).unwrap();
            loss += bw.loss;
            batches += 1;
            steps += 1;
        }
        history.push(EpochMetrics {
            epoch: epoch + 1,
            step_count: steps,
            mean_loss: loss / batches as f64,
            gv: gv.supernet_gv().unwrap_or(f64::NAN),
            delta: 0.0,
            tau: 0.0,
            lr,
        });
    }
    history
}

/// Two-pass population variance of a logged trace, averaged per the GV definition.
pub fn two_pass_gv(trace: &[GradientSet], candidate_only: bool) -> f64 {
    let mut per_param: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for g in trace {
        for (name, t) in g.iter() {
            if !candidate_only || name.starts_with("edge") {
                per_param.entry(name).or_default().push(t.data());
            }
        }
    }
    let vars: Vec<f64> = per_param
        .values()
        .filter(|rows| rows.len() >= 2)
        .map(|rows| {
            let s = rows.len() as f64;
            let len = rows[0].len();
            (0..len)
                .map(|i| {
                    let mean = rows.iter().map(|r| r[i]).sum::<f64>() / s;
                    rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / s
                })
                .sum::<f64>()
                / len as f64
        })
        .collect();
    vars.iter().sum::<f64>() / vars.len() as f64
}
