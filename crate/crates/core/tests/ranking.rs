mod common;

use common::*;
use pada_core::data::{generate_split, BlobParams};
use pada_core::ranking::{
    evaluate_all, kendall_tau, oracle_table, precision_at_topk, train_standalone_oracle,
    OracleConfig,
};
use pada_core::rng::{stream_rng, Stream};
use pada_core::search::{search, SearchConfig, Strategy};
use pada_core::space::{CellSpec, Path};
use pada_core::train::{train_supernet, TrainConfig};
use rand::Rng;

fn blobs(separation: f64, noise: f64) -> BlobParams {
    BlobParams {
        n_classes: 4,
        d_in: 16,
        separation,
        noise,
        seed: 11,
    }
}

#[test]
fn well_separated_blobs_are_learned() {
    let (train, eval) = generate_split(128, 64, &blobs(10.0, 0.1)).unwrap();
    let spec = CellSpec::toy();
    // all-skip: stem, a fixed 4x gain, classifier -- a plain linear model
    let acc = train_standalone_oracle(
        &spec,
        &Path::uniform(6, 0),
        &train,
        &eval,
        &OracleConfig::default(),
        0,
    )
    .unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn divergence_names_path_and_step() {
    // six stacked linear ops on large inputs blow up at this learning rate
    let (train, eval) = generate_split(128, 8, &blobs(10.0, 0.1)).unwrap();
    let err = train_standalone_oracle(
        &CellSpec::toy(),
        &Path::uniform(6, 1),
        &train,
        &eval,
        &OracleConfig::default(),
        0,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let msg = err.to_string();
    assert!(msg.contains("1,1,1,1,1,1") && msg.contains("step"), "{msg}");
}

#[test]
fn indistinguishable_classes_give_chance_accuracy() {
    let (train, eval) = generate_split(128, 256, &blobs(0.0, 0.2)).unwrap();
    let spec = CellSpec::toy();
    let paths: Vec<Path> = spec
        .enumerate_paths(64)
        .unwrap()
        .into_iter()
        .step_by(9)
        .collect();
    let cfg = OracleConfig {
        epochs: 10,
        ..OracleConfig::default()
    };
    for acc in oracle_table(&spec, &paths, &train, &eval, &cfg, 0).unwrap() {
        // 1024 eval samples: chance 0.25 with sd ~0.014
        assert!((acc - 0.25).abs() < 0.06, "accuracy {acc}");
    }
}

#[test]
fn metric_oracles_agree_on_random_scores() {
    let mut r = rng(77);
    for trial in 0..100 {
        let n = r.random_range(2..=200);
        let levels = if trial % 2 == 0 { 5 } else { 1_000_000 };
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64).collect();
        assert_eq!(kendall_tau(&a, &b).unwrap(), brute_force_kendall(&a, &b));
        for k_frac in [0.05, 0.1, 0.5] {
            assert_eq!(
                precision_at_topk(&a, &b, k_frac).unwrap(),
                brute_force_precision(&a, &b, k_frac)
            );
        }
    }
}

#[test]
fn search_scores_match_direct_evaluation() {
    let (train, eval) = generate_split(32, 32, &blobs(0.125, 0.175)).unwrap();
    let spec = CellSpec::toy();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let net = train_supernet(cfg, &spec, &train).unwrap().supernet;
    for strategy in [Strategy::Random, Strategy::Evolution] {
        let sc = SearchConfig {
            strategy,
            rounds: 3,
            population: 8,
            n_mutate: 4,
            n_crossover: 4,
            ..SearchConfig::default()
        };
        let res = search(&net, &sc, &eval, &mut stream_rng(0, Stream::Search)).unwrap();
        let direct = evaluate_all(&net, std::slice::from_ref(&res.best), &eval).unwrap()[0];
        assert_eq!(res.score.to_bits(), direct.to_bits(), "{strategy}");
    }
}

#[test]
fn evaluation_is_order_independent() {
    let (_, eval) = generate_split(1, 32, &blobs(0.5, 0.5)).unwrap();
    let spec = CellSpec::toy();
    let net = pada_core::Supernet::build(&spec, &mut stream_rng(3, Stream::Init)).unwrap();
    let paths = spec.enumerate_paths(64).unwrap();
    let forward = evaluate_all(&net, &paths, &eval).unwrap();
    let mut rev = paths.clone();
    rev.reverse();
    let mut backward = evaluate_all(&net, &rev, &eval).unwrap();
    backward.reverse();
    assert_eq!(forward, backward);
}
