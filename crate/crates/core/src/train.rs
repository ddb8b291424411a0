//! Supernet training with path (PA) and data (DA) importance sampling.
//!
//! Per step: draw a path from `p`, take the next mini-batch of the epoch's
//! index plan, backpropagate, apply SGD, then record the path's op gradient
//! norms and the batch's last-layer importance. Per epoch: advance the
//! smoothing weights, then rebuild `p`, then rebuild `q`.
//!
//! With both PA and DA disabled the loop is plain single-path one-shot
//! training: uniform paths and a fresh uniform shuffle of the data per epoch.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn;
use crate::optim::{cosine_lr, sgd_step, OptimizerState};
use crate::rng::{stream_rng, Stream};
use crate::sampling::{
    per_sample_importance, Accumulation, DataDistribution, Granularity, PathDistribution,
    ScheduleStyle, UpdateFreq,
};
use crate::space::CellSpec;
use crate::supernet::Supernet;
use crate::variance::{GradVarTracker, GvScope};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaConfig {
    pub enabled: bool,
    pub update_freq: UpdateFreq,
    pub style: ScheduleStyle,
    pub reweight: bool,
    pub accumulation: Accumulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaConfig {
    pub enabled: bool,
    pub style: ScheduleStyle,
    pub granularity: Granularity,
    pub accumulation: Accumulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub pa: PaConfig,
    pub da: DaConfig,
    pub master_seed: u64,
    pub gv_scope: GvScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            base_lr: 0.05,
            min_lr: 0.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            pa: PaConfig {
                enabled: true,
                update_freq: UpdateFreq::PerEpoch,
                style: ScheduleStyle::Increase,
                reweight: false,
                accumulation: Accumulation::Sum,
            },
            da: DaConfig {
                enabled: true,
                style: ScheduleStyle::Increase,
                granularity: Granularity::Instance,
                accumulation: Accumulation::Sum,
            },
            master_seed: 0,
            gv_scope: GvScope::CandidateOps,
        }
    }
}

impl TrainConfig {
    /// Uniform-path, uniform-data baseline with otherwise identical settings.
    pub fn baseline(mut self) -> Self {
        self.pa.enabled = false;
        self.da.enabled = false;
        self
    }

    pub fn with_sampling(mut self, pa: bool, da: bool) -> Self {
        self.pa.enabled = pa;
        self.da.enabled = da;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        OptimizerState::new(self.base_lr, self.min_lr, self.momentum, self.weight_decay)?;
        Ok(())
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step_count: u64,
    pub mean_loss: f64,
    /// Supernet gradient variance over this epoch; NaN if undefined.
    pub gv: f64,
    pub delta: f64,
    pub tau: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub(crate) fn to_row(self) -> [f64; 7] {
        [
            self.epoch as f64,
            self.step_count as f64,
            self.mean_loss,
            self.gv,
            self.delta,
            self.tau,
            self.lr,
        ]
    }

    pub(crate) fn from_row(r: &[f64]) -> Self {
        EpochMetrics {
            epoch: r[0] as usize,
            step_count: r[1] as u64,
            mean_loss: r[2],
            gv: r[3],
            delta: r[4],
            tau: r[5],
            lr: r[6],
        }
    }
}

pub const METRICS_HEADER: &str = "epoch,step_count,mean_loss,gv,delta,tau,lr";

/// Metrics CSV text; floats use the shortest round-trip representation.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch, m.step_count, m.mean_loss, m.gv, m.delta, m.tau, m.lr
        );
    }
    out
}

/// `n` indices drawn with replacement from `q`, cut into batches of
/// `batch_size` in draw order (the last batch may be short).
pub fn epoch_data_plan<R: Rng + ?Sized>(
    dist: &DataDistribution,
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    dist.sample_epoch_indices(n, rng)
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Uniform permutation without replacement, cut into batches.
pub fn shuffled_plan<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Everything that evolves during supernet training.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: &'a Dataset,
    net: Supernet,
    opt: OptimizerState,
    path_dist: PathDistribution,
    data_dist: DataDistribution,
    rngs: StreamSet,
    epoch_gv: GradVarTracker,
    run_gv: GradVarTracker,
    epoch: usize,
    step: u64,
    history: Vec<EpochMetrics>,
}

/// The four named generators of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSet {
    pub init: ChaCha8Rng,
    pub path: ChaCha8Rng,
    pub data: ChaCha8Rng,
    pub search: ChaCha8Rng,
}

impl StreamSet {
    pub fn from_master(seed: u64) -> Self {
        StreamSet {
            init: stream_rng(seed, Stream::Init),
            path: stream_rng(seed, Stream::Path),
            data: stream_rng(seed, Stream::Data),
            search: stream_rng(seed, Stream::Search),
        }
    }

    pub fn get(&self, s: Stream) -> &ChaCha8Rng {
        match s {
            Stream::Init => &self.init,
            Stream::Path => &self.path,
            Stream::Data => &self.data,
            Stream::Search => &self.search,
        }
    }

    pub fn get_mut(&mut self, s: Stream) -> &mut ChaCha8Rng {
        match s {
            Stream::Init => &mut self.init,
            Stream::Path => &mut self.path,
            Stream::Data => &mut self.data,
            Stream::Search => &mut self.search,
        }
    }
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub supernet: Supernet,
    pub history: Vec<EpochMetrics>,
    pub path_dist: PathDistribution,
    pub data_dist: DataDistribution,
    /// GV over the whole run (never reset).
    pub run_gv: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, spec: &CellSpec, train: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        check_dataset(spec, train)?;
        let mut rngs = StreamSet::from_master(cfg.master_seed);
        let net = Supernet::build(spec, &mut rngs.init)?;
        let opt = OptimizerState::new(cfg.base_lr, cfg.min_lr, cfg.momentum, cfg.weight_decay)?;
        let path_dist = PathDistribution::uniform(spec.n_edges(), spec.n_ops()).with_modes(
            cfg.pa.update_freq,
            cfg.pa.style,
            cfg.pa.reweight,
            cfg.pa.accumulation,
        );
        let data_dist = DataDistribution::uniform(train.labels().to_vec(), train.n_classes())
            .with_modes(cfg.da.granularity, cfg.da.style, cfg.da.accumulation);
        Ok(Trainer {
            cfg,
            train,
            net,
            opt,
            path_dist,
            data_dist,
            rngs,
            epoch_gv: GradVarTracker::new(cfg.gv_scope),
            run_gv: GradVarTracker::new(cfg.gv_scope),
            epoch: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    /// Restores a run from a checkpoint taken at an epoch boundary.
    pub fn resume(cfg: TrainConfig, train: &'a Dataset, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        check_dataset(&ckpt.spec, train)?;
        if ckpt.total_epochs != cfg.epochs {
            return Err(Error::config(format!(
                "checkpoint was written for {} epochs, config asks for {}",
                ckpt.total_epochs, cfg.epochs
            )));
        }
        if ckpt.data_dist.len() != train.len() {
            return Err(Error::config(
                "checkpoint data distribution does not match the dataset",
            ));
        }
        let mut opt = OptimizerState::new(cfg.base_lr, cfg.min_lr, cfg.momentum, cfg.weight_decay)?;
        for (name, t) in ckpt.optimizer_buffers {
            opt.set_buffer(name, t);
        }
        opt.step = ckpt.step;
        opt.epoch = ckpt.epoch;
        let mut path_dist = ckpt.path_dist;
        path_dist.update_freq = cfg.pa.update_freq;
        path_dist.style = cfg.pa.style;
        path_dist.reweight = cfg.pa.reweight;
        path_dist.accumulation = cfg.pa.accumulation;
        let mut data_dist = ckpt.data_dist;
        data_dist.granularity = cfg.da.granularity;
        data_dist.style = cfg.da.style;
        data_dist.accumulation = cfg.da.accumulation;
        let mut run_gv = ckpt.run_gv;
        if run_gv.scope() != cfg.gv_scope {
            let mut rescoped = GradVarTracker::new(cfg.gv_scope);
            for (n, m) in run_gv.moments() {
                rescoped.insert_moments(n.to_string(), m.clone());
            }
            run_gv = rescoped;
        }
        Ok(Trainer {
            cfg,
            train,
            net: ckpt.supernet,
            opt,
            path_dist,
            data_dist,
            rngs: ckpt.rngs,
            epoch_gv: GradVarTracker::new(cfg.gv_scope),
            run_gv,
            epoch: ckpt.epoch,
            step: ckpt.step,
            history: ckpt.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.net.spec().clone(),
            supernet: self.net.clone(),
            optimizer_buffers: self
                .opt
                .buffers()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            path_dist: self.path_dist.clone(),
            data_dist: self.data_dist.clone(),
            rngs: self.rngs.clone(),
            epoch: self.epoch,
            total_epochs: self.cfg.epochs,
            step: self.step,
            history: self.history.clone(),
            run_gv: self.run_gv.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn supernet(&self) -> &Supernet {
        &self.net
    }

    pub fn path_distribution(&self) -> &PathDistribution {
        &self.path_dist
    }

    pub fn data_distribution(&self) -> &DataDistribution {
        &self.data_dist
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn search_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rngs.search
    }

    /// Runs one epoch and appends its metrics row.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        self.run_epoch_observed(&mut |_| {})
    }

    /// Like [`Trainer::run_epoch`], handing every step's unscaled gradients to `observe`.
    pub fn run_epoch_observed(
        &mut self,
        observe: &mut dyn FnMut(&nn::GradientSet),
    ) -> Result<EpochMetrics> {
        if self.is_done() {
            return Err(Error::usage("training already finished"));
        }
        let cfg = self.cfg;
        let lr = cosine_lr(self.epoch, cfg.epochs, cfg.base_lr, cfg.min_lr)?;
        let n = self.train.len();
        let plan = if cfg.da.enabled {
            epoch_data_plan(&self.data_dist, n, cfg.batch_size, &mut self.rngs.data)
        } else {
            shuffled_plan(n, cfg.batch_size, &mut self.rngs.data)
        };
        let space_size = self.net.spec().space_size() as f64;
        let mut loss_sum = 0.0;
        for ids in &plan {
            let (path, prob) = self.path_dist.sample_path(&mut self.rngs.path);
            let batch = self.train.batch(ids);
            let context = |e: Error, step: u64| {
                Error::numeric(format!(
                    "epoch {} step {step} path {path} batch starting at sample {}: {e}",
                    self.epoch + 1,
                    ids[0]
                ))
            };
            let (_, cache) = nn::forward(&self.net, &path, &batch).map_err(|e| match e {
                Error::Numeric(_) => context(e, self.step),
                other => other,
            })?;
            let mut bw = nn::backward(&self.net, &path, &batch, &cache, 1.0)?;
            if !bw.loss.is_finite() {
                return Err(context(
                    Error::numeric(format!("loss {}", bw.loss)),
                    self.step,
                ));
            }
            if cfg.pa.enabled {
                self.path_dist.accumulate_path_norms(&path, &bw.grads);
                self.path_dist.step_update(&path);
            }
            if cfg.da.enabled {
                let importance = per_sample_importance(&bw.last_layer_grad);
                self.data_dist.record(&batch.sample_ids, &importance);
            }
            observe(&bw.grads);
            self.epoch_gv.record(&bw.grads);
            self.run_gv.record(&bw.grads);
            if cfg.pa.enabled && cfg.pa.reweight {
                bw.grads
                    .scale(self.path_dist.importance_weight(prob, space_size));
            }
            sgd_step(&mut self.net, &bw.grads, &mut self.opt, lr)?;
            loss_sum += bw.loss;
            self.step += 1;
        }
        self.epoch += 1;
        self.opt.epoch = self.epoch;
        if cfg.pa.enabled {
            self.path_dist.update(self.epoch, cfg.epochs);
        }
        if cfg.da.enabled {
            self.data_dist.update(self.epoch, cfg.epochs);
        }
        let gv = self.epoch_gv.supernet_gv().unwrap_or(f64::NAN);
        self.epoch_gv.reset();
        let metrics = EpochMetrics {
            epoch: self.epoch,
            step_count: self.step,
            mean_loss: loss_sum / plan.len() as f64,
            gv,
            delta: self.path_dist.delta(),
            tau: self.data_dist.tau(),
            lr,
        };
        self.history.push(metrics);
        Ok(metrics)
    }

    /// Runs until `epoch` epochs are complete (or the configured total).
    pub fn run_until(&mut self, epoch: usize) -> Result<()> {
        while self.epoch < epoch.min(self.cfg.epochs) {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.cfg.epochs)
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            run_gv: self.run_gv.supernet_gv().unwrap_or(f64::NAN),
            supernet: self.net,
            history: self.history,
            path_dist: self.path_dist,
            data_dist: self.data_dist,
        }
    }
}

fn check_dataset(spec: &CellSpec, train: &Dataset) -> Result<()> {
    if train.d_in() != spec.d_in {
        return Err(Error::config(format!(
            "dataset has {} features, space expects {}",
            train.d_in(),
            spec.d_in
        )));
    }
    if train.n_classes() > spec.n_classes {
        return Err(Error::config(format!(
            "dataset has {} classes, space has {}",
            train.n_classes(),
            spec.n_classes
        )));
    }
    Ok(())
}

/// Trains a supernet from scratch and returns it with the per-epoch metrics.
pub fn train_supernet(cfg: TrainConfig, spec: &CellSpec, train: &Dataset) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg, spec, train)?;
    t.run()?;
    Ok(t.finish())
}
