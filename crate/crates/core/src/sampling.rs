//! Path and data importance sampling.
//!
//! Both distributions follow the same recipe: record a gradient-norm signal
//! while training, normalize it into a probability vector at the update
//! point, and mix it with the uniform distribution using a smoothing weight
//! that is scheduled over the epochs.
//!
//! For paths the signal is the L2 norm of each sampled op's parameter
//! gradients, accumulated per (edge, op). For data it is the norm of
//! `softmax(logits) - onehot(label)` per sample, which bounds the per-sample
//! gradient norm and is free to compute.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::GradientSet;
use crate::space::Path;
use crate::tensor::Tensor;

/// Added to every norm before normalization so no arm is starved outright.
pub const NORM_FLOOR: f64 = 1e-12;

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            #[allow(dead_code)]
            pub(crate) fn code(self) -> f64 {
                let all = [$($name::$variant),+];
                all.iter().position(|v| *v == self).unwrap() as f64
            }

            #[allow(dead_code)]
            pub(crate) fn from_code(code: f64) -> Result<Self> {
                let all = [$($name::$variant),+];
                all.get(code as usize)
                    .copied()
                    .filter(|_| code >= 0.0 && code.fract() == 0.0)
                    .ok_or_else(|| Error::config(format!("bad {} code {code}", stringify!($name))))
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::config(format!(
                        "expected one of [{}], got `{other}`",
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}
pub(crate) use text_enum;

text_enum!(UpdateFreq { PerEpoch => "per_epoch", PerStep => "per_step" });
text_enum!(ScheduleStyle { Increase => "increase", Decrease => "decrease" });
text_enum!(Granularity { Instance => "instance", Class => "class" });
text_enum!(Accumulation { Sum => "sum", Mean => "mean" });

/// Smoothing weight after `epoch` of `total_epochs` epochs (1-based).
pub fn schedule(epoch: usize, total_epochs: usize, style: ScheduleStyle) -> f64 {
    let t = (epoch as f64 / total_epochs.max(1) as f64).clamp(0.0, 1.0);
    match style {
        ScheduleStyle::Increase => t,
        ScheduleStyle::Decrease => 1.0 - t,
    }
}

/// Minimizer of `sum g_i^2 / p_i` over the simplex: `p_i = g_i / sum g`.
/// Falls back to uniform when every norm is zero.
pub fn optimal_simplex_weights(norms: &[f64]) -> Vec<f64> {
    let total: f64 = norms.iter().sum();
    if !(total > 0.0) {
        return vec![1.0 / norms.len() as f64; norms.len()];
    }
    norms.iter().map(|g| g / total).collect()
}

/// Row-wise L2 norms of `softmax - onehot`; each lies in `[0, sqrt(2)]`.
pub fn per_sample_importance(last_layer_grad: &Tensor) -> Vec<f64> {
    let c = last_layer_grad.cols();
    last_layer_grad
        .data()
        .chunks(c)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn mix_with_uniform(importance: &[f64], weight: f64) -> Vec<f64> {
    let floored: Vec<f64> = importance.iter().map(|v| v + NORM_FLOOR).collect();
    let u = 1.0 / importance.len() as f64;
    optimal_simplex_weights(&floored)
        .into_iter()
        .map(|p| weight * p + (1.0 - weight) * u)
        .collect()
}

/// Categorical draw by inverse CDF on one uniform variate.
fn draw_from_cdf(cdf: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|&c| c <= u);
    if i < cdf.len() {
        return i;
    }
    // u landed above the rounded total: take the last index with mass
    let mut j = cdf.len() - 1;
    while j > 0 && cdf[j] == cdf[j - 1] {
        j -= 1;
    }
    j
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

fn is_simplex(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

/// Per-edge operation sampling probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDistribution {
    probs: Vec<Vec<f64>>,
    acc: Vec<Vec<f64>>,
    counts: Vec<Vec<f64>>,
    delta: f64,
    pub update_freq: UpdateFreq,
    pub style: ScheduleStyle,
    pub reweight: bool,
    pub accumulation: Accumulation,
}

impl PathDistribution {
    pub fn uniform(n_edges: usize, n_ops: usize) -> Self {
        PathDistribution {
            probs: vec![vec![1.0 / n_ops as f64; n_ops]; n_edges],
            acc: vec![vec![0.0; n_ops]; n_edges],
            counts: vec![vec![0.0; n_ops]; n_edges],
            delta: 0.0,
            update_freq: UpdateFreq::PerEpoch,
            style: ScheduleStyle::Increase,
            reweight: false,
            accumulation: Accumulation::Sum,
        }
    }

    pub fn with_modes(
        mut self,
        update_freq: UpdateFreq,
        style: ScheduleStyle,
        reweight: bool,
        accumulation: Accumulation,
    ) -> Self {
        self.update_freq = update_freq;
        self.style = style;
        self.reweight = reweight;
        self.accumulation = accumulation;
        self
    }

    /// Builds a distribution with explicit per-edge probabilities.
    pub fn from_probs(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| p.is_empty() || !is_simplex(p)) {
            return Err(Error::config("edge probabilities must each form a simplex"));
        }
        let (e, k) = (probs.len(), probs[0].len());
        if probs.iter().any(|p| p.len() != k) {
            return Err(Error::config("every edge needs the same number of ops"));
        }
        let mut d = PathDistribution::uniform(e, k);
        d.probs = probs;
        Ok(d)
    }

    pub fn n_edges(&self) -> usize {
        self.probs.len()
    }

    pub fn n_ops(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.acc
    }

    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub(crate) fn restore(
        &mut self,
        probs: Vec<Vec<f64>>,
        acc: Vec<Vec<f64>>,
        counts: Vec<Vec<f64>>,
        delta: f64,
    ) {
        self.probs = probs;
        self.acc = acc;
        self.counts = counts;
        self.delta = delta;
    }

    pub fn set_accumulators(&mut self, acc: Vec<Vec<f64>>) {
        self.counts = acc.iter().map(|r| vec![1.0; r.len()]).collect();
        self.acc = acc;
    }

    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|p| is_simplex(p)) && self.acc.iter().flatten().all(|&a| a >= 0.0)
    }

    /// Mean over edges of the total-variation distance to uniform.
    pub fn distance_from_uniform(&self) -> f64 {
        let k = self.n_ops() as f64;
        let tv: f64 = self
            .probs
            .iter()
            .map(|p| 0.5 * p.iter().map(|v| (v - 1.0 / k).abs()).sum::<f64>())
            .sum();
        tv / self.n_edges() as f64
    }

    /// Adds each chosen op's gradient norm (over all its tensors) to its accumulator.
    pub fn accumulate_path_norms(&mut self, path: &Path, grads: &GradientSet) {
        for (e, &k) in path.ops.iter().enumerate() {
            let prefix = format!("edge{e}.op{k}.");
            let sq: f64 = grads
                .iter()
                .filter(|(name, _)| name.starts_with(&prefix))
                .map(|(_, t)| t.sum_squares())
                .sum();
            self.acc[e][k] += sq.sqrt();
            self.counts[e][k] += 1.0;
        }
    }

    fn importance(&self, edge: usize) -> Vec<f64> {
        match self.accumulation {
            Accumulation::Sum => self.acc[edge].clone(),
            Accumulation::Mean => self.acc[edge]
                .iter()
                .zip(&self.counts[edge])
                .map(|(a, &c)| if c > 0.0 { a / c } else { 0.0 })
                .collect(),
        }
    }

    fn refresh_edge(&mut self, edge: usize) {
        self.probs[edge] = mix_with_uniform(&self.importance(edge), self.delta);
    }

    /// Per-step refresh used by the `per_step` ablation; accumulators persist.
    pub fn step_update(&mut self, path: &Path) {
        if self.update_freq == UpdateFreq::PerStep {
            for e in 0..path.ops.len() {
                self.refresh_edge(e);
            }
        }
    }

    /// Epoch-end update: advance the smoothing weight, rebuild every edge's
    /// probabilities and (in per-epoch mode) clear the accumulators.
    pub fn update(&mut self, epoch: usize, total_epochs: usize) {
        self.delta = schedule(epoch, total_epochs, self.style);
        for e in 0..self.n_edges() {
            self.refresh_edge(e);
        }
        if self.update_freq == UpdateFreq::PerEpoch {
            self.acc.iter_mut().flatten().for_each(|a| *a = 0.0);
            self.counts.iter_mut().flatten().for_each(|a| *a = 0.0);
        }
    }

    /// Independent categorical draw per edge; returns the path and its probability.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> (Path, f64) {
        let mut prob = 1.0;
        let ops = self
            .probs
            .iter()
            .map(|p| {
                let k = draw_from_cdf(&cumulative(p), rng.random::<f64>());
                prob *= p[k];
                k
            })
            .collect();
        (Path::new(ops), prob)
    }

    pub fn path_probability(&self, path: &Path) -> f64 {
        path.ops
            .iter()
            .zip(&self.probs)
            .map(|(&k, p)| p[k])
            .product()
    }

    /// Loss multiplier `1 / (N p(path))` that keeps the gradient unbiased with
    /// respect to uniform sampling over `space_size` paths.
    pub fn importance_weight(&self, path_prob: f64, space_size: f64) -> f64 {
        1.0 / (space_size * path_prob)
    }
}

/// Per-sample training-data sampling probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDistribution {
    probs: Vec<f64>,
    acc: Vec<f64>,
    counts: Vec<f64>,
    sampled: Vec<bool>,
    tau: f64,
    classes: Vec<usize>,
    n_classes: usize,
    pub granularity: Granularity,
    pub style: ScheduleStyle,
    pub accumulation: Accumulation,
}

impl DataDistribution {
    /// Uniform distribution over samples whose labels are `classes`.
    pub fn uniform(classes: Vec<usize>, n_classes: usize) -> Self {
        let n = classes.len();
        DataDistribution {
            probs: vec![1.0 / n as f64; n],
            acc: vec![0.0; n],
            counts: vec![0.0; n],
            sampled: vec![false; n],
            tau: 0.0,
            classes,
            n_classes,
            granularity: Granularity::Instance,
            style: ScheduleStyle::Increase,
            accumulation: Accumulation::Sum,
        }
    }

    pub fn with_modes(
        mut self,
        granularity: Granularity,
        style: ScheduleStyle,
        accumulation: Accumulation,
    ) -> Self {
        self.granularity = granularity;
        self.style = style;
        self.accumulation = accumulation;
        self
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || !is_simplex(&probs) {
            return Err(Error::config("sample probabilities must form a simplex"));
        }
        let mut d = DataDistribution::uniform(vec![0; probs.len()], 1);
        d.probs = probs;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.acc
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn sampled(&self) -> &[bool] {
        &self.sampled
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn restore(
        &mut self,
        probs: Vec<f64>,
        acc: Vec<f64>,
        counts: Vec<f64>,
        sampled: Vec<bool>,
        tau: f64,
    ) {
        self.probs = probs;
        self.acc = acc;
        self.counts = counts;
        self.sampled = sampled;
        self.tau = tau;
    }

    pub fn set_accumulators(&mut self, acc: Vec<f64>) {
        self.counts = vec![1.0; acc.len()];
        self.acc = acc;
    }

    pub fn is_valid(&self) -> bool {
        is_simplex(&self.probs) && self.acc.iter().all(|&a| a >= 0.0)
    }

    pub fn distance_from_uniform(&self) -> f64 {
        let u = 1.0 / self.len() as f64;
        0.5 * self.probs.iter().map(|p| (p - u).abs()).sum::<f64>()
    }

    /// Records the importance of each sample in a batch.
    pub fn record(&mut self, sample_ids: &[usize], importance: &[f64]) {
        for (&i, &v) in sample_ids.iter().zip(importance) {
            self.acc[i] += v;
            self.counts[i] += 1.0;
            self.sampled[i] = true;
        }
    }

    fn importance(&self) -> Vec<f64> {
        match self.accumulation {
            Accumulation::Sum => self.acc.clone(),
            Accumulation::Mean => self
                .acc
                .iter()
                .zip(&self.counts)
                .map(|(a, &c)| if c > 0.0 { a / c } else { 0.0 })
                .collect(),
        }
    }

    /// Epoch-end update of `q`; accumulators and sampled flags are cleared.
    pub fn update(&mut self, epoch: usize, total_epochs: usize) {
        self.tau = schedule(epoch, total_epochs, self.style);
        let importance = self.importance();
        self.probs = match self.granularity {
            Granularity::Instance => mix_with_uniform(&importance, self.tau),
            Granularity::Class => {
                let mut sums = vec![0.0; self.n_classes];
                let mut sizes = vec![0usize; self.n_classes];
                for (&c, v) in self.classes.iter().zip(&importance) {
                    sums[c] += v;
                    sizes[c] += 1;
                }
                let means: Vec<f64> = sums
                    .iter()
                    .zip(&sizes)
                    .map(|(&s, &n)| {
                        if n > 0 {
                            s / n as f64 + NORM_FLOOR
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mass = optimal_simplex_weights(&means);
                let u = 1.0 / self.len() as f64;
                self.classes
                    .iter()
                    .map(|&c| self.tau * mass[c] / sizes[c] as f64 + (1.0 - self.tau) * u)
                    .collect()
            }
        };
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        self.counts.iter_mut().for_each(|a| *a = 0.0);
        self.sampled.iter_mut().for_each(|s| *s = false);
    }

    /// `n` i.i.d. draws from `q`, with replacement.
    pub fn sample_epoch_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let cdf = cumulative(&self.probs);
        (0..n)
            .map(|_| draw_from_cdf(&cdf, rng.random::<f64>()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn simplex_weights() {
        assert_eq!(
            optimal_simplex_weights(&[2.0, 1.0, 1.0]),
            vec![0.5, 0.25, 0.25]
        );
        assert_eq!(optimal_simplex_weights(&[3.0, 1.0]), vec![0.75, 0.25]);
        assert_eq!(optimal_simplex_weights(&[0.7; 4]), vec![0.25; 4]);
        assert_eq!(optimal_simplex_weights(&[0.0; 3]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn grid_minimum_of_variance_objective() {
        // brute force over p = (t, 1-t) for norms [3, 1]
        let g = [3.0f64, 1.0];
        let best = (1..1000)
            .map(|i| i as f64 * 0.001)
            .min_by(|a, b| {
                let f = |t: f64| g[0] * g[0] / t + g[1] * g[1] / (1.0 - t);
                f(*a).total_cmp(&f(*b))
            })
            .unwrap();
        assert!((best - 0.75).abs() <= 0.001);
    }

    #[test]
    fn accumulate_norms() {
        let mut d = PathDistribution::uniform(6, 2);
        let mut grads = GradientSet::new();
        grads.insert(
            "edge0.op1.W",
            Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap(),
        );
        grads.insert("edge0.op1.b", Tensor::zeros(&[2]));
        grads.insert("stem.W", Tensor::from_rows(&[vec![100.0]]).unwrap());
        let path = Path::new(vec![1, 0, 0, 0, 0, 0]);
        d.accumulate_path_norms(&path, &grads);
        assert_eq!(d.accumulators()[0], vec![0.0, 5.0]);
        // skip edges accumulate exactly zero
        assert!(d.accumulators()[1..].iter().flatten().all(|&a| a == 0.0));

        let mut grads2 = GradientSet::new();
        grads2.insert(
            "edge0.op1.W",
            Tensor::from_rows(&[vec![7.0, 0.0], vec![0.0, 0.0]]).unwrap(),
        );
        d.accumulate_path_norms(&path, &grads2);
        assert_eq!(d.accumulators()[0], vec![0.0, 12.0]);
    }

    #[test]
    fn path_update_arithmetic() {
        let mut d = PathDistribution::uniform(1, 3);
        d.set_accumulators(vec![vec![2.0, 1.0, 1.0]]);
        d.update(0, 10); // delta = 0
        assert!(close(&d.probs()[0], &[1.0 / 3.0; 3], 1e-15));

        d.set_accumulators(vec![vec![2.0, 1.0, 1.0]]);
        d.update(10, 10); // delta = 1
        assert!(close(&d.probs()[0], &[0.5, 0.25, 0.25], 1e-6));
        assert!(d.accumulators()[0].iter().all(|&a| a == 0.0));

        let mut d = PathDistribution::uniform(1, 2);
        d.set_accumulators(vec![vec![1.0, 3.0]]);
        d.update(5, 10); // delta = 0.5
        assert!(close(&d.probs()[0], &[0.375, 0.625], 1e-12));
    }

    #[test]
    fn per_step_mode_keeps_accumulators() {
        let mut d = PathDistribution::uniform(1, 2).with_modes(
            UpdateFreq::PerStep,
            ScheduleStyle::Increase,
            false,
            Accumulation::Sum,
        );
        d.set_accumulators(vec![vec![1.0, 3.0]]);
        d.update(10, 10);
        assert_eq!(d.accumulators()[0], vec![1.0, 3.0]);
        d.step_update(&Path::new(vec![0]));
        assert!(close(&d.probs()[0], &[0.25, 0.75], 1e-9));
    }

    #[test]
    fn path_sampling_degenerate_and_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = PathDistribution::from_probs(vec![vec![1.0, 0.0]; 6]).unwrap();
        for _ in 0..100 {
            let (p, prob) = d.sample_path(&mut rng);
            assert_eq!(p, Path::uniform(6, 0));
            assert_eq!(prob, 1.0);
        }
        let u = PathDistribution::uniform(6, 2);
        let (p, prob) = u.sample_path(&mut rng);
        assert_eq!(prob, 0.015625);
        assert_eq!(u.path_probability(&p), prob);
    }

    #[test]
    fn path_sampling_frequencies() {
        let probs = vec![
            vec![0.1, 0.6, 0.3],
            vec![0.5, 0.25, 0.25],
            vec![0.05, 0.05, 0.9],
        ];
        let d = PathDistribution::from_probs(probs.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut counts = vec![vec![0usize; 3]; 3];
        for _ in 0..n {
            let (p, prob) = d.sample_path(&mut rng);
            assert!((prob - d.path_probability(&p)).abs() < 1e-15);
            for (e, &k) in p.ops.iter().enumerate() {
                counts[e][k] += 1;
            }
        }
        for e in 0..3 {
            for k in 0..3 {
                let p = probs[e][k];
                let sigma = (n as f64 * p * (1.0 - p)).sqrt();
                assert!((counts[e][k] as f64 - n as f64 * p).abs() < 3.0 * sigma);
            }
        }
    }

    #[test]
    fn importance_values() {
        let g = Tensor::from_rows(&[vec![-0.5, 0.5], vec![0.0, 0.0], vec![1.0, -1.0]]).unwrap();
        let v = per_sample_importance(&g);
        assert!((v[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 2.0f64.sqrt()).abs() < 1e-15);
        let saturated_wrong =
            crate::nn::last_layer_gradient(&Tensor::from_rows(&[vec![-30.0, 30.0]]).unwrap(), &[0]);
        assert!((per_sample_importance(&saturated_wrong)[0] - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn data_update_arithmetic() {
        let mut d = DataDistribution::uniform(vec![0, 0, 1, 1], 2);
        d.record(&[0, 1, 2], &[1.0, 1.0, 2.0]);
        assert_eq!(d.sampled(), &[true, true, true, false]);
        d.update(0, 4);
        assert!(close(d.probs(), &[0.25; 4], 1e-15));

        d.record(&[0, 1, 2], &[1.0, 1.0, 2.0]);
        d.update(4, 4);
        assert!(close(d.probs(), &[0.25, 0.25, 0.5, 0.0], 1e-6));
        assert!(d.sampled().iter().all(|s| !s));

        let mut c = DataDistribution::uniform(vec![0, 0, 1, 1], 2).with_modes(
            Granularity::Class,
            ScheduleStyle::Increase,
            Accumulation::Sum,
        );
        c.record(&[0, 1, 2, 3], &[1.0, 3.0, 2.0, 2.0]);
        c.update(1, 1);
        assert!(close(c.probs(), &[0.25; 4], 1e-12));
    }

    #[test]
    fn data_sampling() {
        let d = DataDistribution::from_probs(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(d
            .sample_epoch_indices(500, &mut rng)
            .iter()
            .all(|&i| i == 0));

        let u = DataDistribution::uniform(vec![0; 4], 1);
        let n = 40_000;
        let idx = u.sample_epoch_indices(n, &mut rng);
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for k in 0..4 {
            let c = idx.iter().filter(|&&i| i == k).count() as f64;
            assert!((c - n as f64 * 0.25).abs() < 3.0 * sigma);
        }
        let a = u.sample_epoch_indices(100, &mut ChaCha8Rng::seed_from_u64(9));
        let b = u.sample_epoch_indices(100, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(schedule(256, 256, ScheduleStyle::Increase), 1.0);
        assert_eq!(schedule(256, 256, ScheduleStyle::Decrease), 0.0);
        assert_eq!(schedule(64, 256, ScheduleStyle::Increase), 0.25);
    }

    #[test]
    fn cdf_rounding_tail() {
        assert_eq!(draw_from_cdf(&[0.3, 0.9999999, 0.9999999], 0.99999995), 1);
        assert_eq!(draw_from_cdf(&[0.5, 1.0], 0.5), 1);
        assert_eq!(draw_from_cdf(&[0.0, 1.0], 0.0), 1);
    }

    #[test]
    fn text_enums() {
        assert_eq!(
            "per_step".parse::<UpdateFreq>().unwrap(),
            UpdateFreq::PerStep
        );
        assert!("sometimes".parse::<UpdateFreq>().is_err());
        assert_eq!(
            Granularity::from_code(Granularity::Class.code()).unwrap(),
            Granularity::Class
        );
        assert!(Granularity::from_code(7.0).is_err());
    }

    #[test]
    fn tv_distance_grows_with_increasing_delta() {
        let mut d = PathDistribution::uniform(3, 3);
        let frozen = vec![
            vec![5.0, 1.0, 0.5],
            vec![0.0, 2.0, 2.0],
            vec![1.0, 1.0, 3.0],
        ];
        let mut data = DataDistribution::uniform(vec![0, 1, 0, 1, 1], 2);
        let frozen_data = vec![0.1, 0.9, 1.3, 0.0, 0.4];
        let mut last = (0.0, 0.0);
        for epoch in 1..=20 {
            d.set_accumulators(frozen.clone());
            d.update(epoch, 20);
            data.set_accumulators(frozen_data.clone());
            data.update(epoch, 20);
            let now = (d.distance_from_uniform(), data.distance_from_uniform());
            assert!(now.0 >= last.0 && now.1 >= last.1);
            assert!(d.is_valid() && data.is_valid());
            last = now;
        }
    }

    proptest! {
        #[test]
        fn updates_publish_valid_simplices(
            acc in proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, 4), 1..7),
            samples in proptest::collection::vec(0.0f64..1.5, 1..40),
            epoch in 0usize..=30,
            per_step in any::<bool>(),
            class_mode in any::<bool>(),
        ) {
            let mut d = PathDistribution::uniform(acc.len(), 4);
            if per_step {
                d.update_freq = UpdateFreq::PerStep;
            }
            d.set_accumulators(acc);
            d.update(epoch, 30);
            prop_assert!(d.is_valid());
            d.step_update(&Path::uniform(d.n_edges(), 0));
            prop_assert!(d.is_valid());

            let classes = (0..samples.len()).map(|i| i % 3).collect();
            let mut q = DataDistribution::uniform(classes, 3);
            if class_mode {
                q.granularity = Granularity::Class;
            }
            q.set_accumulators(samples);
            q.update(epoch, 30);
            prop_assert!(q.is_valid());
        }

        #[test]
        fn importance_is_bounded(logits in proptest::collection::vec(-40.0f64..40.0, 5), label in 0usize..5) {
            let g = crate::nn::last_layer_gradient(&Tensor::new(vec![1, 5], logits).unwrap(), &[label]);
            let v = per_sample_importance(&g)[0];
            prop_assert!((0.0..=2.0f64.sqrt() + 1e-12).contains(&v));
        }
    }
}
