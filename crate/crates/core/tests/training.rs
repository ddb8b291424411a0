mod common;

use common::{reference_spos, two_pass_gv};
use pada_core::checkpoint::Checkpoint;
use pada_core::data::{generate_split, BlobParams, Dataset};
use pada_core::space::CellSpec;
use pada_core::train::{metrics_csv, TrainConfig, Trainer};
use rand::Rng;

fn dataset() -> Dataset {
    let p = BlobParams {
        n_classes: 4,
        d_in: 16,
        separation: 0.125,
        noise: 0.175,
        seed: 9,
    };
    generate_split(32, 0, &p).unwrap().0
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        master_seed: 5,
        ..TrainConfig::default()
    }
}

fn run(cfg: TrainConfig, data: &Dataset) -> Trainer<'_> {
    let mut t = Trainer::new(cfg, &CellSpec::toy(), data).unwrap();
    t.run().unwrap();
    t
}

#[test]
fn same_seed_same_bytes() {
    let data = dataset();
    for (pa, da) in [(true, true), (false, false), (true, false), (false, true)] {
        let c = cfg(4).with_sampling(pa, da);
        let a = run(c, &data);
        let b = run(c, &data);
        assert_eq!(metrics_csv(a.history()), metrics_csv(b.history()));
        assert_eq!(
            a.checkpoint().to_bytes().unwrap(),
            b.checkpoint().to_bytes().unwrap()
        );
    }
    let other = run(
        TrainConfig {
            master_seed: 6,
            ..cfg(4)
        },
        &data,
    );
    assert_ne!(
        metrics_csv(run(cfg(4), &data).history()),
        metrics_csv(other.history())
    );
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = dataset();
    let dir = tempfile::tempdir().unwrap();
    for c in [cfg(6), cfg(6).baseline(), {
        let mut c = cfg(6);
        c.pa.reweight = true;
        c.pa.update_freq = pada_core::sampling::UpdateFreq::PerStep;
        c.da.granularity = pada_core::sampling::Granularity::Class;
        c
    }] {
        let full = run(c, &data);
        for k in [1, 3, 5] {
            let mut first = Trainer::new(c, &CellSpec::toy(), &data).unwrap();
            first.run_until(k).unwrap();
            let file = dir.path().join(format!("ck{k}.bin"));
            first.checkpoint().save(&file).unwrap();
            drop(first);
            let mut second = Trainer::resume(c, &data, Checkpoint::load(&file).unwrap()).unwrap();
            second.run().unwrap();
            assert_eq!(
                metrics_csv(second.history()),
                metrics_csv(full.history()),
                "k={k}"
            );
            assert_eq!(
                second.checkpoint().to_bytes().unwrap(),
                full.checkpoint().to_bytes().unwrap()
            );
        }
    }
}

#[test]
fn resume_rejects_mismatched_run_length() {
    let data = dataset();
    let mut t = Trainer::new(cfg(4), &CellSpec::toy(), &data).unwrap();
    t.run_until(2).unwrap();
    assert!(Trainer::resume(cfg(5), &data, t.checkpoint()).is_err());
}

#[test]
fn disabled_sampling_is_plain_spos() {
    let data = dataset();
    for seed in [0, 1, 2] {
        let c = TrainConfig {
            master_seed: seed,
            ..cfg(5)
        }
        .baseline();
        let ours = run(c, &data);
        let reference = reference_spos(&c, &CellSpec::toy(), &data);
        assert_eq!(metrics_csv(ours.history()), metrics_csv(&reference));
    }
}

#[test]
fn search_stream_does_not_touch_training() {
    let data = dataset();
    let plain = run(cfg(3), &data);
    let mut t = Trainer::new(cfg(3), &CellSpec::toy(), &data).unwrap();
    for _ in 0..1000 {
        let _: u64 = t.search_rng().random();
    }
    t.run().unwrap();
    assert_eq!(metrics_csv(t.history()), metrics_csv(plain.history()));
}

#[test]
fn distributions_and_gv_valid_every_epoch() {
    let data = dataset();
    let mut c = cfg(8);
    c.da.granularity = pada_core::sampling::Granularity::Class;
    let mut t = Trainer::new(c, &CellSpec::toy(), &data).unwrap();
    while !t.is_done() {
        let m = t.run_epoch().unwrap();
        assert!(t.path_distribution().is_valid());
        assert!(t.data_distribution().is_valid());
        assert!(m.gv.is_finite() && m.gv >= 0.0);
    }
}

#[test]
fn epoch_gv_replays_from_gradient_trace() {
    let data = dataset();
    let mut t = Trainer::new(cfg(3), &CellSpec::toy(), &data).unwrap();
    while !t.is_done() {
        let mut trace = Vec::new();
        let m = t
            .run_epoch_observed(&mut |g| trace.push(g.clone()))
            .unwrap();
        let offline = two_pass_gv(&trace, true);
        assert!(
            (m.gv - offline).abs() <= 1e-9 * offline,
            "{} vs {offline}",
            m.gv
        );
    }
}
