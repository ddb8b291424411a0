//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PADA"  u32 version
//! block*: u32 entry_count
//!         entry*: u16 name_len, name (utf-8), u8 ndim, u32 dims[ndim], u64 words[prod(dims)]
//! ```
//!
//! Float payloads are stored as their IEEE-754 bit patterns, so a
//! save/load/save cycle is byte-identical. Blocks appear in a fixed order:
//! parameters, optimizer, path distribution, data distribution, rng, trainer,
//! run gradient variance. A file is fully parsed and validated before any
//! state is built from it.

use std::path::Path as FsPath;

use crate::error::{Error, Result};
use crate::rng::{rng_from_words, rng_to_words, Stream};
use crate::sampling::{
    Accumulation, DataDistribution, Granularity, PathDistribution, ScheduleStyle, UpdateFreq,
};
use crate::space::{CellSpec, OpKind};
use crate::supernet::Supernet;
use crate::tensor::Tensor;
use crate::train::{EpochMetrics, StreamSet};
use crate::variance::{ElementMoments, GradVarTracker, GvScope};

pub const MAGIC: &[u8; 4] = b"PADA";
pub const VERSION: u32 = 1;
const N_BLOCKS: usize = 7;

/// A named array of 64-bit words with a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub words: Vec<u64>,
}

impl Entry {
    pub fn floats(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Self {
        Entry {
            name: name.into(),
            shape,
            words: values.iter().map(|v| v.to_bits()).collect(),
        }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::floats(name, vec![1], &[v])
    }

    pub fn raw(name: impl Into<String>, words: Vec<u64>) -> Self {
        Entry {
            name: name.into(),
            shape: vec![words.len()],
            words,
        }
    }

    pub fn to_floats(&self) -> Vec<f64> {
        self.words.iter().map(|&w| f64::from_bits(w)).collect()
    }
}

pub type Block = Vec<Entry>;

pub fn encode(blocks: &[Block]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for block in blocks {
        out.extend_from_slice(&u32::try_from(block.len()).map_err(too_big)?.to_le_bytes());
        for e in block {
            let name = e.name.as_bytes();
            out.extend_from_slice(&u16::try_from(name.len()).map_err(too_big)?.to_le_bytes());
            out.extend_from_slice(name);
            out.push(u8::try_from(e.shape.len()).map_err(too_big)?);
            for &d in &e.shape {
                out.extend_from_slice(&u32::try_from(d).map_err(too_big)?.to_le_bytes());
            }
            if e.shape.iter().product::<usize>() != e.words.len() {
                return Err(Error::usage(format!(
                    "entry {} has {} words for shape {:?}",
                    e.name,
                    e.words.len(),
                    e.shape
                )));
            }
            for w in &e.words {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn too_big<E>(_: E) -> Error {
    Error::usage("checkpoint entry exceeds the format's size limits")
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Block>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "not a checkpoint file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(
            4,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let mut blocks = Vec::new();
    while r.pos < bytes.len() {
        let count = r.u32("block entry count")? as usize;
        // each entry takes at least 3 bytes; reject impossible counts early
        if count > (bytes.len() - r.pos) / 3 {
            return Err(Error::parse(
                (r.pos - 4) as u64,
                format!("block claims {count} entries, more than the file can hold"),
            ));
        }
        let mut block = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "entry name")?)
                .map_err(|_| Error::parse(at, "entry name is not utf-8"))?
                .to_string();
            let ndim = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= (bytes.len() - r.pos) / 8)
                .ok_or_else(|| {
                    Error::parse(
                        r.pos as u64,
                        format!("truncated checkpoint: entry {name} payload {shape:?} overruns the file"),
                    )
                })?;
            let mut words = Vec::with_capacity(n);
            for _ in 0..n {
                words.push(r.u64("payload")?);
            }
            block.push(Entry { name, shape, words });
        }
        blocks.push(block);
    }
    Ok(blocks)
}

/// Full training state at an epoch boundary.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: CellSpec,
    pub supernet: Supernet,
    pub optimizer_buffers: Vec<(String, Tensor)>,
    pub path_dist: PathDistribution,
    pub data_dist: DataDistribution,
    pub rngs: StreamSet,
    pub epoch: usize,
    pub total_epochs: usize,
    pub step: u64,
    pub history: Vec<EpochMetrics>,
    pub run_gv: GradVarTracker,
}

const STREAMS: [Stream; 4] = [Stream::Init, Stream::Path, Stream::Data, Stream::Search];

fn tensor_entry(name: &str, t: &Tensor) -> Entry {
    Entry::floats(name, t.shape().to_vec(), t.data())
}

fn entry_tensor(e: &Entry) -> Result<Tensor> {
    Tensor::new(e.shape.clone(), e.to_floats())
}

fn flat2(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn unflat2(v: Vec<f64>, cols: usize) -> Vec<Vec<f64>> {
    v.chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

impl Checkpoint {
    pub fn to_blocks(&self) -> Vec<Block> {
        let params = self
            .supernet
            .iter()
            .map(|(n, t)| tensor_entry(n, t))
            .collect();

        let mut optim: Block = vec![Entry::scalar("opt.step", self.step as f64)];
        optim.extend(
            self.optimizer_buffers
                .iter()
                .map(|(n, t)| tensor_entry(&format!("opt.v.{n}"), t)),
        );

        let p = &self.path_dist;
        let ek = vec![p.n_edges(), p.n_ops()];
        let path = vec![
            Entry::floats("pa.probs", ek.clone(), &flat2(p.probs())),
            Entry::floats("pa.acc", ek.clone(), &flat2(p.accumulators())),
            Entry::floats("pa.counts", ek, &flat2(p.counts())),
            Entry::scalar("pa.delta", p.delta()),
            Entry::floats(
                "pa.modes",
                vec![4],
                &[
                    p.update_freq.code(),
                    p.style.code(),
                    p.reweight as u8 as f64,
                    p.accumulation.code(),
                ],
            ),
        ];

        let q = &self.data_dist;
        let n = vec![q.len()];
        let data = vec![
            Entry::floats("da.probs", n.clone(), q.probs()),
            Entry::floats("da.acc", n.clone(), q.accumulators()),
            Entry::floats("da.counts", n.clone(), q.counts()),
            Entry::floats(
                "da.sampled",
                n.clone(),
                &q.sampled()
                    .iter()
                    .map(|&s| s as u8 as f64)
                    .collect::<Vec<_>>(),
            ),
            Entry::floats(
                "da.classes",
                n,
                &q.classes().iter().map(|&c| c as f64).collect::<Vec<_>>(),
            ),
            Entry::scalar("da.n_classes", q.n_classes() as f64),
            Entry::scalar("da.tau", q.tau()),
            Entry::floats(
                "da.modes",
                vec![3],
                &[q.granularity.code(), q.style.code(), q.accumulation.code()],
            ),
        ];

        let rng = STREAMS
            .iter()
            .map(|&s| {
                Entry::raw(
                    format!("rng.{}", s.label()),
                    rng_to_words(self.rngs.get(s)).to_vec(),
                )
            })
            .collect();

        let s = &self.spec;
        let rows: Vec<f64> = self.history.iter().flat_map(|m| m.to_row()).collect();
        let trainer = vec![
            Entry::floats(
                "space.dims",
                vec![4],
                &[
                    s.n_nodes as f64,
                    s.hidden as f64,
                    s.d_in as f64,
                    s.n_classes as f64,
                ],
            ),
            Entry::floats(
                "space.ops",
                vec![s.ops.len()],
                &s.ops.iter().map(|o| op_code(*o)).collect::<Vec<_>>(),
            ),
            Entry::scalar("train.epoch", self.epoch as f64),
            Entry::scalar("train.total_epochs", self.total_epochs as f64),
            Entry::floats("train.metrics", vec![self.history.len(), 7], &rows),
        ];

        let mut gv: Block = vec![Entry::scalar(
            "gv.scope",
            match self.run_gv.scope() {
                GvScope::CandidateOps => 0.0,
                GvScope::All => 1.0,
            },
        )];
        for (name, m) in self.run_gv.moments() {
            gv.push(Entry::scalar(format!("gv.count.{name}"), m.count as f64));
            gv.push(Entry::floats(
                format!("gv.mean.{name}"),
                vec![m.mean.len()],
                &m.mean,
            ));
            gv.push(Entry::floats(
                format!("gv.m2.{name}"),
                vec![m.m2.len()],
                &m.m2,
            ));
        }

        vec![params, optim, path, data, rng, trainer, gv]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(&self.to_blocks())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let blocks = decode(bytes)?;
        if blocks.len() != N_BLOCKS {
            return Err(Error::parse(
                bytes.len() as u64,
                format!(
                    "checkpoint has {} blocks, expected {N_BLOCKS}",
                    blocks.len()
                ),
            ));
        }
        Self::from_blocks(blocks).map_err(|e| match e {
            Error::Parse { .. } => e,
            other => Error::parse(0, format!("inconsistent checkpoint: {other}")),
        })
    }

    fn from_blocks(blocks: Vec<Block>) -> Result<Self> {
        let mut it = blocks.into_iter();
        let (params, optim, path, data, rng, trainer, gv) = (
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        );

        let t = Fields::new(&trainer);
        let dims = t.floats("space.dims", 4)?;
        let ops = t
            .get("space.ops")?
            .to_floats()
            .into_iter()
            .map(op_from_code)
            .collect::<Result<Vec<_>>>()?;
        let spec = CellSpec::new(
            dims[0] as usize,
            ops,
            dims[1] as usize,
            dims[2] as usize,
            dims[3] as usize,
        )?;
        let epoch = t.floats("train.epoch", 1)?[0] as usize;
        let total_epochs = t.floats("train.total_epochs", 1)?[0] as usize;
        let metrics = t.get("train.metrics")?;
        if metrics.shape.len() != 2 || metrics.shape[1] != 7 {
            return Err(Error::config("train.metrics must be an n x 7 table"));
        }
        let history = metrics
            .to_floats()
            .chunks(7)
            .map(EpochMetrics::from_row)
            .collect();

        let supernet = Supernet::from_named(
            &spec,
            params
                .iter()
                .map(|e| Ok((e.name.clone(), entry_tensor(e)?)))
                .collect::<Result<Vec<_>>>()?,
        )?;

        let o = Fields::new(&optim);
        let step = o.floats("opt.step", 1)?[0] as u64;
        let mut optimizer_buffers = Vec::new();
        for e in optim.iter().filter(|e| e.name != "opt.step") {
            let name = e
                .name
                .strip_prefix("opt.v.")
                .ok_or_else(|| Error::config(format!("unexpected optimizer entry {}", e.name)))?;
            let param = supernet.param(name).ok_or_else(|| {
                Error::config(format!("optimizer buffer for unknown parameter {name}"))
            })?;
            if param.shape() != e.shape.as_slice() {
                return Err(Error::config(format!(
                    "optimizer buffer {name} has the wrong shape"
                )));
            }
            optimizer_buffers.push((name.to_string(), entry_tensor(e)?));
        }

        let p = Fields::new(&path);
        let (ne, nk) = (spec.n_edges(), spec.n_ops());
        let probs = unflat2(p.floats("pa.probs", ne * nk)?, nk);
        let acc = unflat2(p.floats("pa.acc", ne * nk)?, nk);
        let counts = unflat2(p.floats("pa.counts", ne * nk)?, nk);
        let delta = p.floats("pa.delta", 1)?[0];
        let modes = p.floats("pa.modes", 4)?;
        let mut path_dist = PathDistribution::from_probs(probs.clone())?.with_modes(
            UpdateFreq::from_code(modes[0])?,
            ScheduleStyle::from_code(modes[1])?,
            modes[2] != 0.0,
            Accumulation::from_code(modes[3])?,
        );
        path_dist.restore(probs, acc, counts, delta);

        let d = Fields::new(&data);
        let n = d.get("da.probs")?.words.len();
        let probs = d.floats("da.probs", n)?;
        let acc = d.floats("da.acc", n)?;
        let counts = d.floats("da.counts", n)?;
        let sampled = d
            .floats("da.sampled", n)?
            .iter()
            .map(|&s| s != 0.0)
            .collect();
        let classes: Vec<usize> = d
            .floats("da.classes", n)?
            .iter()
            .map(|&c| c as usize)
            .collect();
        let n_classes = d.floats("da.n_classes", 1)?[0] as usize;
        if classes.iter().any(|&c| c >= n_classes) {
            return Err(Error::config("data distribution class out of range"));
        }
        let tau = d.floats("da.tau", 1)?[0];
        let modes = d.floats("da.modes", 3)?;
        let mut data_dist = DataDistribution::uniform(classes, n_classes).with_modes(
            Granularity::from_code(modes[0])?,
            ScheduleStyle::from_code(modes[1])?,
            Accumulation::from_code(modes[2])?,
        );
        data_dist.restore(probs, acc, counts, sampled, tau);
        if !path_dist.is_valid() || !data_dist.is_valid() {
            return Err(Error::config(
                "stored sampling distribution is not a valid simplex",
            ));
        }

        let r = Fields::new(&rng);
        let mut rngs = StreamSet::from_master(0);
        for s in STREAMS {
            *rngs.get_mut(s) = rng_from_words(&r.get(&format!("rng.{}", s.label()))?.words)?;
        }

        let g = Fields::new(&gv);
        let scope = match g.floats("gv.scope", 1)?[0] {
            0.0 => GvScope::CandidateOps,
            1.0 => GvScope::All,
            other => return Err(Error::config(format!("unknown gv scope code {other}"))),
        };
        let mut run_gv = GradVarTracker::new(scope);
        for e in gv.iter().filter(|e| e.name.starts_with("gv.count.")) {
            let name = &e.name["gv.count.".len()..];
            let len = supernet
                .param(name)
                .ok_or_else(|| {
                    Error::config(format!("gradient moments for unknown parameter {name}"))
                })?
                .len();
            let m = ElementMoments {
                count: e.to_floats()[0] as u64,
                mean: g.floats(&format!("gv.mean.{name}"), len)?,
                m2: g.floats(&format!("gv.m2.{name}"), len)?,
            };
            run_gv.insert_moments(name.to_string(), m);
        }

        Ok(Checkpoint {
            spec,
            supernet,
            optimizer_buffers,
            path_dist,
            data_dist,
            rngs,
            epoch,
            total_epochs,
            step,
            history,
            run_gv,
        })
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Fields<'a>(&'a [Entry]);

impl<'a> Fields<'a> {
    fn new(block: &'a [Entry]) -> Self {
        Fields(block)
    }

    fn get(&self, name: &str) -> Result<&'a Entry> {
        self.0
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::config(format!("missing entry {name}")))
    }

    fn floats(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let e = self.get(name)?;
        if e.words.len() != len {
            return Err(Error::config(format!(
                "entry {name} has {} values, expected {len}",
                e.words.len()
            )));
        }
        Ok(e.to_floats())
    }
}

fn op_code(op: OpKind) -> f64 {
    OpKind::ALL.iter().position(|&o| o == op).unwrap() as f64
}

fn op_from_code(c: f64) -> Result<OpKind> {
    OpKind::ALL
        .get(c as usize)
        .copied()
        .filter(|_| c >= 0.0 && c.fract() == 0.0)
        .ok_or_else(|| Error::config(format!("unknown op code {c}")))
}
