mod common;

use common::*;
use pada_core::nn;
use pada_core::sampling::PathDistribution;
use pada_core::space::{CellSpec, OpKind, Path};
use pada_core::tensor::Tensor;

#[test]
fn analytic_gradients_match_finite_differences() {
    for trial in 0..100u64 {
        let forced = OpKind::ALL[trial as usize % OpKind::ALL.len()];
        let (net, path, batch) = fd_instance(1000 + trial, trial as usize % 6, forced);
        let (_, cache) = nn::forward(&net, &path, &batch).unwrap();
        let bw = nn::backward(&net, &path, &batch, &cache, 1.0).unwrap();
        let err = max_fd_error(&net, &path, &batch, &bw.grads, 1e-5);
        assert!(
            err < 1e-6,
            "trial {trial} path {path}: relative error {err:e}"
        );
    }
}

#[test]
fn loss_scale_scales_every_gradient() {
    let (net, path, batch) = fd_instance(7, 0, OpKind::Mlp2);
    let (_, cache) = nn::forward(&net, &path, &batch).unwrap();
    let a = nn::backward(&net, &path, &batch, &cache, 1.0).unwrap();
    let b = nn::backward(&net, &path, &batch, &cache, 3.0).unwrap();
    for (name, g) in a.grads.iter() {
        let h = b.grads.get(name).unwrap();
        for (x, y) in g.data().iter().zip(h.data()) {
            assert!((3.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
    assert_eq!(a.last_layer_grad, b.last_layer_grad);
}

#[test]
fn last_layer_shortcut_is_batch_times_logit_gradient() {
    let spec = CellSpec::full(6, 5, 4).unwrap();
    for trial in 0..100u64 {
        let mut r = rng(trial);
        let net = random_supernet(&spec, &mut r);
        let path = spec.random_path(&mut r);
        let b = 1 + trial as usize % 9;
        let batch = random_batch(&mut r, b, 5, 4);
        let (logits, cache) = nn::forward(&net, &path, &batch).unwrap();
        let bw = nn::backward(&net, &path, &batch, &cache, 1.0).unwrap();
        let reference = reference_last_layer(&logits, &batch.labels);
        for i in 0..b {
            for c in 0..4 {
                let shortcut = bw.last_layer_grad.row(i)[c];
                let used = bw.logits_grad.row(i)[c];
                assert!((shortcut - b as f64 * used).abs() <= 1e-12, "trial {trial}");
                assert!((shortcut - reference[i][c]).abs() <= 1e-12, "trial {trial}");
            }
        }
        // the classifier bias gradient is the column sum of the logit gradient
        let cls_b = bw.grads.get("cls.b").unwrap();
        for c in 0..4 {
            let col: f64 = (0..b).map(|i| reference[i][c]).sum::<f64>() / b as f64;
            assert!((cls_b.data()[c] - col).abs() <= 1e-12);
        }
    }
}

/// Per-element sum over paths of `weight(path) * grad(path)`, zero-filled off-path.
fn weighted_sum(
    net: &pada_core::Supernet,
    paths: &[Path],
    batch: &nn::Batch,
    weight: impl Fn(&Path) -> (f64, f64),
) -> Vec<(String, Tensor)> {
    let mut total: Vec<(String, Tensor)> = net
        .iter()
        .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
        .collect();
    for p in paths {
        let (outer, loss_scale) = weight(p);
        let (_, cache) = nn::forward(net, p, batch).unwrap();
        let bw = nn::backward(net, p, batch, &cache, loss_scale).unwrap();
        for (name, acc) in total.iter_mut() {
            if let Some(g) = bw.grads.get(name) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += outer * v;
                }
            }
        }
    }
    total
}

#[test]
fn reweighted_path_gradient_is_unbiased() {
    let spec = CellSpec::toy();
    let mut r = rng(42);
    let net = random_supernet(&spec, &mut r);
    let batch = random_batch(&mut r, 8, 16, 4);
    let paths = spec.enumerate_paths(64).unwrap();
    let n = paths.len() as f64;
    let probs: Vec<Vec<f64>> = (0..6)
        .map(|e| {
            let a = 0.05 + 0.15 * e as f64;
            vec![a, 1.0 - a]
        })
        .collect();
    let dist = PathDistribution::from_probs(probs).unwrap();
    let expectation = weighted_sum(&net, &paths, &batch, |p| {
        let prob = dist.path_probability(p);
        (prob, dist.importance_weight(prob, n))
    });
    let uniform_mean = weighted_sum(&net, &paths, &batch, |_| (1.0 / n, 1.0));
    for ((name, a), (_, b)) in expectation.iter().zip(&uniform_mean) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-10, "{name}: {x} vs {y}");
        }
    }
}
