//! Cell topology, candidate operations and sub-model paths.
//!
//! A cell is a DAG over `n_nodes` nodes. Node 0 is the stem output; every
//! later node is the sum of its incoming edge operations and the last node is
//! the cell output. A [`Path`] picks one candidate operation per edge.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: usize = 20_000;

/// Candidate operation on an edge. Dense analogues of the usual
/// none / skip / conv1x1 / conv3x3 / pooling choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Zero,
    Skip,
    Linear,
    LinearRelu,
    Mlp2,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::Zero,
        OpKind::Skip,
        OpKind::Linear,
        OpKind::LinearRelu,
        OpKind::Mlp2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::Skip => "skip",
            OpKind::Linear => "linear",
            OpKind::LinearRelu => "linear_relu",
            OpKind::Mlp2 => "mlp2",
        }
    }

    pub fn is_parameterized(self) -> bool {
        !matches!(self, OpKind::Zero | OpKind::Skip)
    }

    /// Named parameter tensors owned by one instance of this op, with shapes.
    pub fn param_shapes(self, hidden: usize) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            OpKind::Zero | OpKind::Skip => Vec::new(),
            OpKind::Linear | OpKind::LinearRelu => {
                vec![("W", vec![hidden, hidden]), ("b", vec![hidden])]
            }
            OpKind::Mlp2 => {
                let half = hidden / 2;
                vec![
                    ("W1", vec![hidden, half]),
                    ("b1", vec![half]),
                    ("W2", vec![half, hidden]),
                    ("b2", vec![hidden]),
                ]
            }
        }
    }

    pub fn param_count(self, hidden: usize) -> usize {
        self.param_shapes(hidden)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.name() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown op kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub ops: Vec<OpKind>,
    pub hidden: usize,
    pub d_in: usize,
    pub n_classes: usize,
}

/// All `(src, dst)` pairs over `n` nodes, ordered by destination then source.
pub fn complete_edges(n_nodes: usize) -> Vec<(usize, usize)> {
    (1..n_nodes)
        .flat_map(|dst| (0..dst).map(move |src| (src, dst)))
        .collect()
}

impl CellSpec {
    pub fn new(
        n_nodes: usize,
        ops: Vec<OpKind>,
        hidden: usize,
        d_in: usize,
        n_classes: usize,
    ) -> Result<Self> {
        let spec = CellSpec {
            n_nodes,
            edges: complete_edges(n_nodes),
            ops,
            hidden,
            d_in,
            n_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 64-path space: {skip, linear} on the six edges of a 4-node cell.
    pub fn toy() -> Self {
        CellSpec::new(4, vec![OpKind::Skip, OpKind::Linear], 16, 16, 4).expect("toy spec is valid")
    }

    /// All five candidate ops on the six edges of a 4-node cell.
    pub fn full(hidden: usize, d_in: usize, n_classes: usize) -> Result<Self> {
        CellSpec::new(4, OpKind::ALL.to_vec(), hidden, d_in, n_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::config("a cell needs at least two nodes"));
        }
        if self.ops.is_empty() {
            return Err(Error::config("op set is empty"));
        }
        if self.hidden == 0 || self.d_in == 0 || self.n_classes == 0 {
            return Err(Error::config("hidden, d_in and n_classes must be positive"));
        }
        for (i, op) in self.ops.iter().enumerate() {
            if self.ops[..i].contains(op) {
                return Err(Error::config(format!("op `{op}` listed twice")));
            }
        }
        if self.ops.contains(&OpKind::Mlp2) && !self.hidden.is_multiple_of(2) {
            return Err(Error::config(format!(
                "mlp2 needs an even hidden size, got {}",
                self.hidden
            )));
        }
        for &(s, d) in &self.edges {
            if s >= d || d >= self.n_nodes {
                return Err(Error::config(format!("invalid edge ({s},{d})")));
            }
        }
        Ok(())
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_ops(&self) -> usize {
        self.ops.len()
    }

    /// |A| = |ops|^|edges|, saturating.
    pub fn space_size(&self) -> u128 {
        (self.n_ops() as u128)
            .checked_pow(self.n_edges() as u32)
            .unwrap_or(u128::MAX)
    }

    pub fn op(&self, path: &Path, edge: usize) -> OpKind {
        self.ops[path.ops[edge]]
    }

    pub fn validate_path(&self, path: &Path) -> Result<()> {
        if path.ops.len() != self.n_edges() {
            return Err(Error::usage(format!(
                "path has {} edges, spec has {}",
                path.ops.len(),
                self.n_edges()
            )));
        }
        if let Some(&bad) = path.ops.iter().find(|&&k| k >= self.n_ops()) {
            return Err(Error::usage(format!(
                "op index {bad} out of range for {} ops",
                self.n_ops()
            )));
        }
        Ok(())
    }

    /// Parameters shared by every path: stem and classifier.
    pub fn base_param_count(&self) -> usize {
        self.d_in * self.hidden + self.hidden + self.hidden * self.n_classes + self.n_classes
    }

    pub fn path_param_count(&self, path: &Path) -> usize {
        self.base_param_count()
            + path
                .ops
                .iter()
                .map(|&k| self.ops[k].param_count(self.hidden))
                .sum::<usize>()
    }

    /// Every path in lexicographic order of op indices.
    pub fn enumerate_paths(&self, cap: usize) -> Result<Vec<Path>> {
        let count = self.space_size();
        if count > cap as u128 {
            return Err(Error::EnumerationCap { count, cap });
        }
        let (e, k) = (self.n_edges(), self.n_ops());
        let mut out = Vec::with_capacity(count as usize);
        let mut cur = vec![0usize; e];
        loop {
            out.push(Path::new(cur.clone()));
            // odometer increment, last edge fastest
            let mut pos = e;
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                cur[pos] += 1;
                if cur[pos] < k {
                    break;
                }
                cur[pos] = 0;
            }
        }
    }

    pub fn random_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Path {
        Path::new(
            (0..self.n_edges())
                .map(|_| rng.random_range(0..self.n_ops()))
                .collect(),
        )
    }

    /// Resamples each edge uniformly with probability `rate`.
    pub fn mutate<R: Rng + ?Sized>(&self, path: &Path, rate: f64, rng: &mut R) -> Path {
        let ops = path
            .ops
            .iter()
            .map(|&k| {
                if rng.random::<f64>() < rate {
                    rng.random_range(0..self.n_ops())
                } else {
                    k
                }
            })
            .collect();
        Path::new(ops)
    }

    /// Uniform per-edge choice between two parents.
    pub fn crossover<R: Rng + ?Sized>(&self, a: &Path, b: &Path, rng: &mut R) -> Result<Path> {
        self.validate_path(a)?;
        self.validate_path(b)?;
        Ok(Path::new(
            a.ops
                .iter()
                .zip(&b.ops)
                .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
                .collect(),
        ))
    }
}

/// One sub-model: an op index per edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    pub ops: Vec<usize>,
}

impl Path {
    pub fn new(ops: Vec<usize>) -> Self {
        Path { ops }
    }

    pub fn uniform(n_edges: usize, op: usize) -> Self {
        Path {
            ops: vec![op; n_edges],
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.ops.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

impl FromStr for Path {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::usage(format!("bad op index `{t}` in path `{s}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Path::new)
    }
}

/// Reference evaluation of the node-sum rule on plain vectors.
///
/// `edge_fn(edge, input)` applies the chosen op of `edge`; returns every node value.
pub fn cell_forward_rule<F>(spec: &CellSpec, input: &[f64], mut edge_fn: F) -> Vec<Vec<f64>>
where
    F: FnMut(usize, &[f64]) -> Vec<f64>,
{
    let mut nodes = vec![vec![0.0; input.len()]; spec.n_nodes];
    nodes[0] = input.to_vec();
    for dst in 1..spec.n_nodes {
        let mut acc = vec![0.0; input.len()];
        for (e, &(src, d)) in spec.edges.iter().enumerate() {
            if d != dst {
                continue;
            }
            let out = edge_fn(e, &nodes[src]);
            for (a, v) in acc.iter_mut().zip(out) {
                *a += v;
            }
        }
        nodes[dst] = acc;
    }
    nodes
}
