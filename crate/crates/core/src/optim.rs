//! SGD with momentum and a cosine learning-rate schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::GradientSet;
use crate::supernet::Supernet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub base_lr: f64,
    pub min_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub epoch: usize,
    buffers: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(base_lr: f64, min_lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(base_lr > 0.0) || !(min_lr >= 0.0) || min_lr > base_lr {
            return Err(Error::config(format!(
                "need 0 <= min_lr <= base_lr and base_lr > 0, got {min_lr} / {base_lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0,1)")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        Ok(OptimizerState {
            base_lr,
            min_lr,
            momentum,
            weight_decay,
            step: 0,
            epoch: 0,
            buffers: BTreeMap::new(),
        })
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn lr_at(&self, epoch: usize, total_epochs: usize) -> Result<f64> {
        cosine_lr(epoch, total_epochs, self.base_lr, self.min_lr)
    }
}

/// `min + (base - min) * (1 + cos(pi * epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64, min_lr: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::config("total_epochs must be positive"));
    }
    let t = epoch as f64 / total_epochs as f64;
    Ok(min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (PI * t).cos()))
}

/// `v <- m*v + g + wd*w; w <- w - lr*v`, only for parameters present in `grads`.
pub fn sgd_step(
    net: &mut Supernet,
    grads: &GradientSet,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for (name, g) in grads.iter() {
        match net.param(name) {
            Some(w) if w.shape() == g.shape() => {}
            Some(w) => {
                return Err(Error::config(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    w.shape()
                )))
            }
            None => {
                return Err(Error::usage(format!(
                    "gradient for unknown parameter {name}"
                )))
            }
        }
    }
    let (m, wd) = (opt.momentum, opt.weight_decay);
    for (name, w) in net.tensors_mut() {
        let Some(g) = grads.get(name) else { continue };
        let v = opt
            .buffers
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for ((vi, wi), gi) in v.data_mut().iter_mut().zip(w.data_mut()).zip(g.data()) {
            *vi = m * *vi + gi + wd * *wi;
            *wi -= lr * *vi;
        }
    }
    opt.step += 1;
    Ok(())
}
