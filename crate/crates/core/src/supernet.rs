//! Shared weight store: one parameter set per (edge, candidate op) plus the
//! stem and classifier that every sub-model uses.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, Batch, ForwardCache};
use crate::space::{CellSpec, Path};
use crate::tensor::Tensor;

pub const STEM_W: &str = "stem.W";
pub const STEM_B: &str = "stem.b";
pub const CLS_W: &str = "cls.W";
pub const CLS_B: &str = "cls.b";

#[derive(Debug, Clone, PartialEq)]
pub struct Supernet {
    spec: CellSpec,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    /// `op_slots[edge][op]` lists the parameter indices owned by that op.
    op_slots: Vec<Vec<Vec<usize>>>,
    generation: u64,
}

pub fn op_param_name(edge: usize, op: usize, tensor: &str) -> String {
    format!("edge{edge}.op{op}.{tensor}")
}

impl Supernet {
    /// Allocates every parameter, weights uniform in ±sqrt(6/fan_in), biases zero.
    pub fn build<R: Rng + ?Sized>(spec: &CellSpec, rng: &mut R) -> Result<Self> {
        let mut net = Supernet::zeroed(spec)?;
        for t in &mut net.tensors {
            if t.shape().len() == 2 {
                let bound = (6.0 / t.shape()[0] as f64).sqrt();
                for v in t.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(net)
    }

    fn zeroed(spec: &CellSpec) -> Result<Self> {
        spec.validate()?;
        let mut layout: Vec<(String, Vec<usize>)> = vec![
            (STEM_W.into(), vec![spec.d_in, spec.hidden]),
            (STEM_B.into(), vec![spec.hidden]),
            (CLS_W.into(), vec![spec.hidden, spec.n_classes]),
            (CLS_B.into(), vec![spec.n_classes]),
        ];
        let mut op_slots = vec![vec![Vec::new(); spec.n_ops()]; spec.n_edges()];
        for (e, slots) in op_slots.iter_mut().enumerate() {
            for (k, op) in spec.ops.iter().enumerate() {
                for (tname, shape) in op.param_shapes(spec.hidden) {
                    slots[k].push(layout.len());
                    layout.push((op_param_name(e, k, tname), shape));
                }
            }
        }
        let (names, tensors): (Vec<String>, Vec<Tensor>) = layout
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .unzip();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Supernet {
            spec: spec.clone(),
            names,
            tensors,
            index,
            op_slots,
            generation: 0,
        })
    }

    /// Reassembles a store from named tensors, checking names and shapes
    /// against the layout for `spec`.
    pub fn from_named(spec: &CellSpec, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut net = Supernet::zeroed(spec)?;
        if entries.len() != net.names.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, found {}",
                net.names.len(),
                entries.len()
            )));
        }
        for (i, (name, tensor)) in entries.into_iter().enumerate() {
            if name != net.names[i] || tensor.shape() != net.tensors[i].shape() {
                return Err(Error::config(format!(
                    "parameter {i}: expected `{}` {:?}, found `{name}` {:?}",
                    net.names[i],
                    net.tensors[i].shape(),
                    tensor.shape()
                )));
            }
            net.tensors[i] = tensor;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Bumped on every mutable access; forward caches remember it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        self.generation += 1;
        Some(&mut self.tensors[i])
    }

    pub(crate) fn by_index(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub(crate) fn slot(&self, edge: usize, op: usize) -> &[usize] {
        &self.op_slots[edge][op]
    }

    pub(crate) fn name_of(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.generation += 1;
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter_mut())
    }

    /// Is this parameter owned by a candidate op (as opposed to stem/classifier)?
    pub fn is_candidate_param(name: &str) -> bool {
        name.starts_with("edge")
    }

    /// Names of the parameters a path reads: stem, classifier and its chosen ops.
    pub fn path_params(&self, path: &Path) -> Vec<String> {
        let mut out: Vec<String> = [STEM_W, STEM_B, CLS_W, CLS_B]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (e, &k) in path.ops.iter().enumerate() {
            out.extend(self.op_slots[e][k].iter().map(|&i| self.names[i].clone()));
        }
        out
    }

    pub fn forward(&self, path: &Path, batch: &Batch) -> Result<(Tensor, ForwardCache)> {
        nn::forward(self, path, batch)
    }

    /// Read-only view of one sub-model that reads the shared weights in place.
    pub fn inherit_weights(&self, path: &Path) -> Result<SubModel<'_>> {
        self.spec.validate_path(path)?;
        Ok(SubModel {
            net: self,
            path: path.clone(),
        })
    }
}

/// A sub-model evaluated with inherited supernet weights.
///
/// The view borrows the supernet, so the store cannot be modified while any
/// view is alive:
///
/// ```compile_fail
/// use pada_core::{space::CellSpec, supernet::Supernet};
/// use rand::SeedableRng;
/// let spec = CellSpec::toy();
/// let mut net = Supernet::build(&spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
/// let path = "0,0,0,0,0,0".parse().unwrap();
/// let view = net.inherit_weights(&path).unwrap();
/// net.param_mut("stem.W");
/// drop(view);
/// ```
#[derive(Debug, Clone)]
pub struct SubModel<'a> {
    net: &'a Supernet,
    path: Path,
}

impl SubModel<'_> {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn forward(&self, batch: &Batch) -> Result<Tensor> {
        nn::forward(self.net, &self.path, batch).map(|(logits, _)| logits)
    }

    pub fn param_count(&self) -> usize {
        self.net.spec().path_param_count(&self.path)
    }

    /// Fraction of argmax predictions matching the labels.
    pub fn accuracy(&self, batch: &Batch) -> Result<f64> {
        let logits = self.forward(batch)?;
        Ok(nn::accuracy(&logits, &batch.labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::OpKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn toy_store_has_sixteen_tensors() {
        let net = Supernet::build(&CellSpec::toy(), &mut rng(0)).unwrap();
        assert_eq!(net.len(), 16);
        assert_eq!(&net.names()[..4], &[STEM_W, STEM_B, CLS_W, CLS_B]);
        assert!(net.param("edge0.op1.W").is_some());
        assert!(net.param("edge0.op0.W").is_none());
    }

    #[test]
    fn full_store_has_fifty_two_tensors() {
        let spec = CellSpec::full(16, 16, 4).unwrap();
        let net = Supernet::build(&spec, &mut rng(0)).unwrap();
        let per_edge: usize = spec.ops.iter().map(|op| op.param_shapes(16).len()).sum();
        assert_eq!(per_edge, 8);
        assert_eq!(net.len(), 6 * per_edge + 4);
        assert_eq!(net.len(), 52);
    }

    #[test]
    fn build_is_deterministic() {
        let spec = CellSpec::full(8, 4, 3).unwrap();
        let a = Supernet::build(&spec, &mut rng(7)).unwrap();
        let b = Supernet::build(&spec, &mut rng(7)).unwrap();
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let c = Supernet::build(&spec, &mut rng(8)).unwrap();
        assert_ne!(a.param(STEM_W), c.param(STEM_W));
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let spec = CellSpec::full(8, 4, 3).unwrap();
        let net = Supernet::build(&spec, &mut rng(1)).unwrap();
        for (name, t) in net.iter() {
            if t.shape().len() == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                let bound = (6.0 / t.shape()[0] as f64).sqrt();
                assert!(t.data().iter().all(|v| v.abs() < bound), "{name}");
            }
        }
    }

    #[test]
    fn odd_hidden_with_mlp2_is_a_config_error() {
        let spec = CellSpec {
            n_nodes: 4,
            edges: crate::space::complete_edges(4),
            ops: vec![OpKind::Mlp2],
            hidden: 5,
            d_in: 3,
            n_classes: 2,
        };
        assert!(matches!(
            Supernet::build(&spec, &mut rng(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn path_params_lists_chosen_ops() {
        let net = Supernet::build(&CellSpec::toy(), &mut rng(0)).unwrap();
        let skip = Path::uniform(6, 0);
        assert_eq!(net.path_params(&skip), vec![STEM_W, STEM_B, CLS_W, CLS_B]);
        let mut one = skip.clone();
        one.ops[0] = 1;
        let names = net.path_params(&one);
        assert_eq!(names.len(), 6);
        assert!(names.contains(&"edge0.op1.W".to_string()));
        assert!(names.contains(&"edge0.op1.b".to_string()));
    }

    #[test]
    fn path_params_match_shape_scan() {
        let spec = CellSpec::full(8, 4, 3).unwrap();
        let net = Supernet::build(&spec, &mut rng(0)).unwrap();
        let mut r = rng(42);
        for _ in 0..20 {
            let path = spec.random_path(&mut r);
            let mut expected = vec![
                STEM_W.to_string(),
                STEM_B.into(),
                CLS_W.into(),
                CLS_B.into(),
            ];
            for (e, &k) in path.ops.iter().enumerate() {
                for (t, _) in spec.ops[k].param_shapes(spec.hidden) {
                    expected.push(format!("edge{e}.op{k}.{t}"));
                }
            }
            assert_eq!(net.path_params(&path), expected);
            let counted: usize = expected.iter().map(|n| net.param(n).unwrap().len()).sum();
            assert_eq!(counted, spec.path_param_count(&path));
        }
    }

    #[test]
    fn from_named_round_trip_and_rejects_mismatch() {
        let spec = CellSpec::toy();
        let net = Supernet::build(&spec, &mut rng(3)).unwrap();
        let entries: Vec<(String, Tensor)> = net
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let back = Supernet::from_named(&spec, entries.clone()).unwrap();
        assert_eq!(back.tensors, net.tensors);
        let mut bad = entries;
        bad.swap(0, 1);
        assert!(Supernet::from_named(&spec, bad).is_err());
    }
}
