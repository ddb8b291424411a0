//! Forward and backward passes for a sampled path through the supernet.
//!
//! Architecture: `stem (linear) -> cell -> classifier (linear)`. No
//! activation sits between stem, cell and classifier; non-linearity comes
//! only from the candidate ops themselves.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::space::{OpKind, Path};
use crate::supernet::{Supernet, CLS_B, CLS_W, STEM_B, STEM_W};
use crate::tensor::Tensor;

/// A mini-batch drawn from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>, sample_ids: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::config("batch inputs must be 2-D"));
        }
        if labels.len() != inputs.rows() || sample_ids.len() != inputs.rows() {
            return Err(Error::config(format!(
                "batch has {} rows but {} labels and {} ids",
                inputs.rows(),
                labels.len(),
                sample_ids.len()
            )));
        }
        Ok(Batch {
            inputs,
            labels,
            sample_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gradients keyed by parameter name. Parameters off the sampled path are
/// absent rather than zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    entries: BTreeMap<String, Tensor>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn scale(&mut self, factor: f64) {
        self.entries.values_mut().for_each(|t| t.scale(factor));
    }
}

#[derive(Debug, Clone)]
enum EdgeCache {
    Plain,
    Relu { pre: Tensor },
    Mlp { pre: Tensor, hidden: Tensor },
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    path: Path,
    generation: u64,
    sample_ids: Vec<usize>,
    nodes: Vec<Tensor>,
    edges: Vec<EdgeCache>,
    logits: Tensor,
}

impl ForwardCache {
    /// Smallest |pre-activation| over every ReLU on the path (∞ if none).
    /// Finite-difference checks use it to stay clear of kinks.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.edges
            .iter()
            .flat_map(|c| match c {
                EdgeCache::Plain => [].iter(),
                EdgeCache::Relu { pre } | EdgeCache::Mlp { pre, .. } => pre.data().iter(),
            })
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = x.matmul(w)?;
    y.add_row(b);
    Ok(y)
}

pub fn forward(net: &Supernet, path: &Path, batch: &Batch) -> Result<(Tensor, ForwardCache)> {
    let spec = net.spec();
    spec.validate_path(path)?;
    if batch.inputs.cols() != spec.d_in {
        return Err(Error::config(format!(
            "batch input dim {} does not match stem input dim {}",
            batch.inputs.cols(),
            spec.d_in
        )));
    }
    let (rows, h) = (batch.len(), spec.hidden);
    let param = |name: &str| net.param(name).expect("stem/classifier always present");

    let mut nodes = Vec::with_capacity(spec.n_nodes);
    nodes.push(linear(&batch.inputs, param(STEM_W), param(STEM_B))?);
    let mut edge_caches = vec![EdgeCache::Plain; spec.n_edges()];
    for dst in 1..spec.n_nodes {
        let mut acc = Tensor::zeros(&[rows, h]);
        for (e, &(src, d)) in spec.edges.iter().enumerate() {
            if d != dst {
                continue;
            }
            let input = &nodes[src];
            let slot = net.slot(e, path.ops[e]);
            match spec.op(path, e) {
                OpKind::Zero => {}
                OpKind::Skip => acc.add_assign(input),
                OpKind::Linear => {
                    acc.add_assign(&linear(
                        input,
                        net.by_index(slot[0]),
                        net.by_index(slot[1]),
                    )?);
                }
                OpKind::LinearRelu => {
                    let pre = linear(input, net.by_index(slot[0]), net.by_index(slot[1]))?;
                    acc.add_assign(&pre.relu());
                    edge_caches[e] = EdgeCache::Relu { pre };
                }
                OpKind::Mlp2 => {
                    let pre = linear(input, net.by_index(slot[0]), net.by_index(slot[1]))?;
                    let hidden = pre.relu();
                    acc.add_assign(&linear(
                        &hidden,
                        net.by_index(slot[2]),
                        net.by_index(slot[3]),
                    )?);
                    edge_caches[e] = EdgeCache::Mlp { pre, hidden };
                }
            }
        }
        nodes.push(acc);
    }
    let logits = linear(nodes.last().unwrap(), param(CLS_W), param(CLS_B))?;
    if !logits.is_finite() {
        let culprit = net
            .path_params(path)
            .into_iter()
            .find(|n| !net.param(n).unwrap().is_finite())
            .unwrap_or_else(|| "<activations overflowed; all parameters finite>".into());
        return Err(Error::numeric(format!(
            "non-finite logits on path {path}; first non-finite parameter: {culprit}"
        )));
    }
    let cache = ForwardCache {
        path: path.clone(),
        generation: net.generation(),
        sample_ids: batch.sample_ids.clone(),
        nodes,
        edges: edge_caches,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    /// Mean cross-entropy over the batch (before any loss scaling).
    pub loss: f64,
    pub grads: GradientSet,
    /// Per-sample `softmax(logits) - onehot(label)`, not divided by batch size.
    pub last_layer_grad: Tensor,
    /// Gradient of the scaled mean loss with respect to the logits.
    pub logits_grad: Tensor,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy via log-sum-exp.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.cols();
    let total: f64 = logits
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}

/// `softmax(logits) - onehot(labels)` per row.
pub fn last_layer_gradient(logits: &Tensor, labels: &[usize]) -> Tensor {
    let mut g = softmax_rows(logits);
    let c = g.cols();
    for (row, &y) in g.data_mut().chunks_mut(c).zip(labels) {
        row[y] -= 1.0;
    }
    g
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let c = logits.cols();
    let correct = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Backpropagates the mean cross-entropy, multiplied by `loss_scale`.
pub fn backward(
    net: &Supernet,
    path: &Path,
    batch: &Batch,
    cache: &ForwardCache,
    loss_scale: f64,
) -> Result<Backward> {
    if cache.path != *path || cache.sample_ids != batch.sample_ids {
        return Err(Error::usage(
            "forward cache belongs to a different path or batch",
        ));
    }
    if cache.generation != net.generation() {
        return Err(Error::usage(
            "stale forward cache: supernet weights changed since the forward pass",
        ));
    }
    let spec = net.spec();
    let rows = batch.len();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= spec.n_classes) {
        return Err(Error::config(format!(
            "label {bad} out of range for {} classes",
            spec.n_classes
        )));
    }
    let loss = cross_entropy(&cache.logits, &batch.labels);
    let last_layer_grad = last_layer_gradient(&cache.logits, &batch.labels);
    let mut logits_grad = last_layer_grad.clone();
    logits_grad.scale(loss_scale / rows as f64);

    let mut grads = GradientSet::new();
    let out = cache.nodes.last().unwrap();
    grads.insert(CLS_W, out.t_matmul(&logits_grad));
    grads.insert(CLS_B, logits_grad.col_sums());
    let mut dnodes: Vec<Tensor> = (0..spec.n_nodes)
        .map(|_| Tensor::zeros(&[rows, spec.hidden]))
        .collect();
    dnodes[spec.n_nodes - 1] = logits_grad.matmul_t(net.param(CLS_W).unwrap());

    for dst in (1..spec.n_nodes).rev() {
        let (lower, upper) = dnodes.split_at_mut(dst);
        let g = &upper[0];
        for (e, &(src, d)) in spec.edges.iter().enumerate() {
            if d != dst {
                continue;
            }
            let input = &cache.nodes[src];
            let slot = net.slot(e, path.ops[e]);
            match (spec.op(path, e), &cache.edges[e]) {
                (OpKind::Zero, _) => {}
                (OpKind::Skip, _) => lower[src].add_assign(g),
                (OpKind::Linear, _) => {
                    grads.insert(net.name_of(slot[0]), input.t_matmul(g));
                    grads.insert(net.name_of(slot[1]), g.col_sums());
                    lower[src].add_assign(&g.matmul_t(net.by_index(slot[0])));
                }
                (OpKind::LinearRelu, EdgeCache::Relu { pre }) => {
                    let mut gz = g.clone();
                    gz.mask_relu(pre);
                    grads.insert(net.name_of(slot[0]), input.t_matmul(&gz));
                    grads.insert(net.name_of(slot[1]), gz.col_sums());
                    lower[src].add_assign(&gz.matmul_t(net.by_index(slot[0])));
                }
                (OpKind::Mlp2, EdgeCache::Mlp { pre, hidden }) => {
                    grads.insert(net.name_of(slot[2]), hidden.t_matmul(g));
                    grads.insert(net.name_of(slot[3]), g.col_sums());
                    let mut ga = g.matmul_t(net.by_index(slot[2]));
                    ga.mask_relu(pre);
                    grads.insert(net.name_of(slot[0]), input.t_matmul(&ga));
                    grads.insert(net.name_of(slot[1]), ga.col_sums());
                    lower[src].add_assign(&ga.matmul_t(net.by_index(slot[0])));
                }
                _ => return Err(Error::usage("forward cache does not match op kinds")),
            }
        }
    }
    grads.insert(STEM_W, batch.inputs.t_matmul(&dnodes[0]));
    grads.insert(STEM_B, dnodes[0].col_sums());

    Ok(Backward {
        loss,
        grads,
        last_layer_grad,
        logits_grad,
    })
}
