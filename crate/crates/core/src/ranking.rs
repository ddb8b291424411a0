//! Ranking consistency: inherited-weight evaluation, the standalone-training
//! ground truth, Kendall's tau and precision at top-k.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Batch};
use crate::optim::{cosine_lr, sgd_step, OptimizerState};
use crate::rng::{stream_rng, Stream};
use crate::space::{CellSpec, Path};
use crate::supernet::Supernet;

/// Accuracy of every path with inherited weights, in input order.
pub fn evaluate_all(net: &Supernet, paths: &[Path], eval: &Dataset) -> Result<Vec<f64>> {
    let batch = eval.full_batch();
    evaluate_on_batch(net, paths, &batch)
}

pub(crate) fn evaluate_on_batch(net: &Supernet, paths: &[Path], batch: &Batch) -> Result<Vec<f64>> {
    paths
        .par_iter()
        .map(|p| net.inherit_weights(p)?.accuracy(batch))
        .collect()
}

/// Training budget for standalone sub-models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            epochs: 60,
            batch_size: 64,
            base_lr: 0.05,
            min_lr: 0.0,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// Trains a fresh model holding only `path`'s ops and returns its eval accuracy.
pub fn train_standalone_oracle(
    spec: &CellSpec,
    path: &Path,
    train: &Dataset,
    eval: &Dataset,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<f64> {
    spec.validate_path(path)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config(
            "oracle epochs and batch size must be positive",
        ));
    }
    let mut net = Supernet::build(spec, &mut stream_rng(seed, Stream::Init))?;
    let mut data_rng = stream_rng(seed, Stream::Data);
    let mut opt = OptimizerState::new(cfg.base_lr, cfg.min_lr, cfg.momentum, cfg.weight_decay)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr, cfg.min_lr)?;
        order.shuffle(&mut data_rng);
        for ids in order.chunks(cfg.batch_size) {
            let batch = train.batch(ids);
            let diverged = |e: Error| {
                Error::numeric(format!(
                    "standalone path {path} diverged at step {step}: {e}"
                ))
            };
            let (_, cache) = nn::forward(&net, path, &batch).map_err(diverged)?;
            let bw = nn::backward(&net, path, &batch, &cache, 1.0)?;
            if !bw.loss.is_finite() {
                return Err(Error::numeric(format!(
                    "standalone path {path} diverged at step {step}: loss {}",
                    bw.loss
                )));
            }
            sgd_step(&mut net, &bw.grads, &mut opt, lr)?;
            step += 1;
        }
    }
    net.inherit_weights(path)?.accuracy(&eval.full_batch())
}

/// Ground truth for many paths, trained in parallel, returned in input order.
pub fn oracle_table(
    spec: &CellSpec,
    paths: &[Path],
    train: &Dataset,
    eval: &Dataset,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    paths
        .par_iter()
        .map(|p| train_standalone_oracle(spec, p, train, eval, cfg, seed))
        .collect()
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "score vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts pairs i < j with v[i] > v[j], sorting `v` in place.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            inv += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..]);
    v.copy_from_slice(buf);
    inv
}

/// Tau-a: (concordant - discordant) / (n(n-1)/2). Pairs tied in either
/// vector are neither concordant nor discordant. O(n log n).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    if n < 2 {
        return Err(Error::usage("kendall tau needs at least two scores"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let a_sorted: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
    let ties_a = tied_pairs(&a_sorted);
    let mut joint = 0u64;
    let mut run = 1u64;
    for w in idx.windows(2) {
        if a[w[0]] == a[w[1]] && b[w[0]] == b[w[1]] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;

    let mut b_seq: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let discordant = count_inversions(&mut b_seq, &mut Vec::with_capacity(n));
    // b_seq is now sorted
    let ties_b = tied_pairs(&b_seq);
    let total = (n as u64) * (n as u64 - 1) / 2;
    let concordant = total + joint - ties_a - ties_b - discordant;
    Ok((concordant as f64 - discordant as f64) / total as f64)
}

/// Indices of the `k` largest scores; ties go to the earlier index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(Ordering::Equal));
    idx.truncate(k);
    idx
}

pub fn top_k_count(n: usize, k_frac: f64) -> usize {
    ((k_frac * n as f64).floor() as usize).max(1)
}

/// |top_k(pred) ∩ top_k(truth)| / k with `k = max(1, floor(k_frac * n))`.
pub fn precision_at_topk(pred: &[f64], truth: &[f64], k_frac: f64) -> Result<f64> {
    check_lengths(pred, truth)?;
    if !(k_frac > 0.0 && k_frac <= 1.0) {
        return Err(Error::usage(format!("k fraction {k_frac} outside (0, 1]")));
    }
    if pred.is_empty() {
        return Err(Error::usage("empty score vectors"));
    }
    let k = top_k_count(pred.len(), k_frac);
    let mut in_truth = vec![false; truth.len()];
    for i in top_k_indices(truth, k) {
        in_truth[i] = true;
    }
    let hits = top_k_indices(pred, k)
        .into_iter()
        .filter(|&i| in_truth[i])
        .count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub paths: Vec<String>,
    pub supernet_accuracy: Vec<f64>,
    pub ground_truth_accuracy: Vec<f64>,
    pub kendall_tau: f64,
    pub p_at_topk: f64,
    pub k_frac: f64,
    pub seed: u64,
    pub timestamp: u64,
}

impl RankingReport {
    pub fn new(
        paths: &[Path],
        supernet_accuracy: Vec<f64>,
        ground_truth_accuracy: Vec<f64>,
        k_frac: f64,
        seed: u64,
    ) -> Result<Self> {
        if paths.len() != supernet_accuracy.len() {
            return Err(Error::usage("one supernet score per path required"));
        }
        let kendall_tau = kendall_tau(&supernet_accuracy, &ground_truth_accuracy)?;
        let p_at_topk = precision_at_topk(&supernet_accuracy, &ground_truth_accuracy, k_frac)?;
        Ok(RankingReport {
            paths: paths.iter().map(Path::to_string).collect(),
            supernet_accuracy,
            ground_truth_accuracy,
            kendall_tau,
            p_at_topk,
            k_frac,
            seed,
            timestamp: report_timestamp(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(0, e.to_string()))
    }
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so reports can
/// be reproduced byte for byte.
pub fn report_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

/// One row of the ground-truth table.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub path: Path,
    pub accuracy: f64,
    pub seed: u64,
}

/// Writes `path,accuracy,seed` rows; the path field is quoted since it holds commas.
pub fn write_ground_truth(path: &FsPath, rows: &[GroundTruthRow]) -> Result<()> {
    let mut out = String::from("path,accuracy,seed\n");
    for r in rows {
        out.push_str(&format!("\"{}\",{},{}\n", r.path, r.accuracy, r.seed));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_ground_truth(path: &FsPath) -> Result<Vec<GroundTruthRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut offset = 0u64;
    for (i, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::parse(here, format!("malformed ground-truth line {}", i + 1));
        let mut parts = line.rsplitn(3, ',');
        let seed = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let accuracy = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let p = parts.next().ok_or_else(bad)?.trim().trim_matches('"');
        rows.push(GroundTruthRow {
            path: p.parse()?,
            accuracy,
            seed,
        });
    }
    Ok(rows)
}
