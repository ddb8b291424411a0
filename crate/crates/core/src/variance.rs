//! Streaming per-parameter gradient variance and the scalar supernet GV.
//!
//! Every element of every parameter keeps Welford moments over the steps in
//! which that parameter received a gradient. A parameter's variance is the
//! mean of its elements' population variances; the supernet GV is the
//! unweighted mean over parameters seen at least twice.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::GradientSet;
use crate::supernet::Supernet;

/// Which parameters enter the supernet GV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GvScope {
    /// Candidate-op weights only; stem and classifier excluded.
    CandidateOps,
    All,
}

impl std::str::FromStr for GvScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "candidate_ops" => Ok(GvScope::CandidateOps),
            "all" => Ok(GvScope::All),
            other => Err(Error::config(format!(
                "expected one of [candidate_ops, all], got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for GvScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GvScope::CandidateOps => "candidate_ops",
            GvScope::All => "all",
        })
    }
}

/// Welford moments for every element of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ElementMoments {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl ElementMoments {
    fn push(&mut self, values: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; values.len()];
            self.m2 = vec![0.0; values.len()];
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mu, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(values) {
            let d = x - *mu;
            *mu += d / n;
            *m2 += d * (x - *mu);
        }
    }

    /// Mean over elements of the population variance `M2 / S`.
    pub fn variance(&self) -> f64 {
        if self.count == 0 || self.m2.is_empty() {
            return 0.0;
        }
        let s = self.count as f64;
        self.m2.iter().map(|m| m / s).sum::<f64>() / self.m2.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradVarTracker {
    scope: GvScope,
    moments: BTreeMap<String, ElementMoments>,
}

impl GradVarTracker {
    pub fn new(scope: GvScope) -> Self {
        GradVarTracker {
            scope,
            moments: BTreeMap::new(),
        }
    }

    pub fn scope(&self) -> GvScope {
        self.scope
    }

    /// Folds one step's gradients in; parameters absent from `grads` are untouched.
    pub fn record(&mut self, grads: &GradientSet) {
        for (name, g) in grads.iter() {
            self.moments
                .entry(name.to_string())
                .or_default()
                .push(g.data());
        }
    }

    pub fn reset(&mut self) {
        self.moments.clear();
    }

    pub fn count(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.count)
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &ElementMoments)> {
        self.moments.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn insert_moments(&mut self, name: String, m: ElementMoments) {
        self.moments.insert(name, m);
    }

    pub fn variance(&self, name: &str) -> Option<f64> {
        self.moments.get(name).map(ElementMoments::variance)
    }

    fn in_scope(&self, name: &str) -> bool {
        match self.scope {
            GvScope::All => true,
            GvScope::CandidateOps => Supernet::is_candidate_param(name),
        }
    }

    /// Mean per-parameter variance over in-scope parameters with at least two samples.
    pub fn supernet_gv(&self) -> Result<f64> {
        let vars: Vec<f64> = self
            .moments
            .iter()
            .filter(|(name, m)| m.count >= 2 && self.in_scope(name))
            .map(|(_, m)| m.variance())
            .collect();
        if vars.is_empty() {
            return Err(Error::InsufficientSamples(
                "no parameter has received two or more gradients".into(),
            ));
        }
        Ok(vars.iter().sum::<f64>() / vars.len() as f64)
    }
}
