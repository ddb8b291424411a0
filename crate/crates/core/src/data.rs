//! Datasets: synthetic Gaussian blobs, IDX ingestion, CSV persistence.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::config(
                "dataset inputs must be [N x d] with N labels",
            ));
        }
        if labels.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            n_classes,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.inputs.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given sample indices into a batch.
    pub fn batch(&self, ids: &[usize]) -> Batch {
        let d = self.d_in();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.inputs.row(i));
        }
        let inputs = Tensor::new(vec![ids.len(), d], data).expect("row gather");
        Batch {
            inputs,
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            sample_ids: ids.to_vec(),
        }
    }

    pub fn full_batch(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// The first `n` samples (all of them if `n` is 0 or too large).
    pub fn head(&self, n: usize) -> Dataset {
        let n = if n == 0 {
            self.len()
        } else {
            n.min(self.len())
        };
        let ids: Vec<usize> = (0..n).collect();
        let b = self.batch(&ids);
        Dataset {
            inputs: b.inputs,
            labels: b.labels,
            n_classes: self.n_classes,
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    pub fn majority_class_frequency(&self) -> f64 {
        let mut counts = vec![0usize; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        *counts.iter().max().unwrap() as f64 / self.len() as f64
    }

    /// SHA-256 over shape, input bits and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.inputs.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.inputs.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// CSV with header `label,x0,...`; floats in shortest round-trip form.
    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        let header: Vec<String> = (0..self.d_in()).map(|i| format!("x{i}")).collect();
        writeln!(w, "label,{}", header.join(","))?;
        for (i, &y) in self.labels.iter().enumerate() {
            write!(w, "{y}")?;
            for v in self.inputs.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads [`Dataset::write_csv`] output; `n_classes` defaults to max label + 1.
    pub fn read_csv(path: &FsPath, split: Split, n_classes: Option<usize>) -> Result<Dataset> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut labels = Vec::new();
        let mut data = Vec::new();
        let mut width = None;
        let mut offset = 0u64;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line_len = line.len() as u64 + 1;
            if lineno == 0 {
                if !line.starts_with("label") {
                    return Err(Error::parse(0, "missing `label,...` header"));
                }
                offset += line_len;
                continue;
            }
            if line.trim().is_empty() {
                offset += line_len;
                continue;
            }
            let mut fields = line.split(',');
            let y = fields
                .next()
                .unwrap()
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(offset, format!("bad label on line {}", lineno + 1)))?;
            let row: Vec<f64> = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(offset, format!("bad value on line {}", lineno + 1)))?;
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(Error::parse(
                    offset,
                    format!("ragged row on line {}", lineno + 1),
                ));
            }
            labels.push(y);
            data.extend(row);
            offset += line_len;
        }
        let d = width.ok_or_else(|| Error::parse(offset, "no samples"))?;
        let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        let inputs = Tensor::new(vec![labels.len(), d], data)?;
        Dataset::new(inputs, labels, n_classes, split, path.display().to_string())
    }
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub n_classes: usize,
    pub d_in: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl BlobParams {
    fn provenance(&self) -> String {
        format!(
            "synthetic blobs: classes={} d_in={} separation={} noise={} seed={}",
            self.n_classes, self.d_in, self.separation, self.noise, self.seed
        )
    }

    fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.seed, Stream::Init);
        (0..self.n_classes)
            .map(|_| {
                (0..self.d_in)
                    .map(|_| {
                        self.separation * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                    })
                    .collect()
            })
            .collect()
    }
}

fn sample_blobs(
    p: &BlobParams,
    means: &[Vec<f64>],
    n_per_class: usize,
    rng: &mut impl rand::Rng,
) -> (Vec<f64>, Vec<usize>) {
    let mut data = Vec::with_capacity(n_per_class * p.n_classes * p.d_in);
    let mut labels = Vec::with_capacity(n_per_class * p.n_classes);
    // classes interleaved: sample i has label i % n_classes
    for _ in 0..n_per_class {
        for (c, mean) in means.iter().enumerate() {
            for &m in mean {
                let z: f64 = StandardNormal.sample(rng);
                data.push(m + p.noise * z);
            }
            labels.push(c);
        }
    }
    (data, labels)
}

/// Gaussian blobs: one mean per class drawn from a seeded normal and scaled
/// by `separation`; samples are `mean + noise * N(0, I)`.
pub fn generate_synthetic(n_per_class: usize, p: &BlobParams) -> Result<Dataset> {
    generate_split(n_per_class, 0, p).map(|(train, _)| train)
}

/// Train and eval sets drawn around the same class means from one noise
/// stream; the eval samples follow the train samples, so they never overlap.
pub fn generate_split(
    n_train_per_class: usize,
    n_eval_per_class: usize,
    p: &BlobParams,
) -> Result<(Dataset, Dataset)> {
    if n_train_per_class == 0 || p.n_classes == 0 || p.d_in == 0 {
        return Err(Error::config("blob sizes must be positive"));
    }
    if p.separation < 0.0 || p.noise < 0.0 {
        return Err(Error::config("separation and noise must be nonnegative"));
    }
    let means = p.class_means();
    let mut rng = stream_rng(p.seed, Stream::Data);
    let (train_x, train_y) = sample_blobs(p, &means, n_train_per_class, &mut rng);
    let train = Dataset::new(
        Tensor::new(vec![train_y.len(), p.d_in], train_x)?,
        train_y,
        p.n_classes,
        Split::Train,
        p.provenance(),
    )?;
    let eval = if n_eval_per_class > 0 {
        let (x, y) = sample_blobs(p, &means, n_eval_per_class, &mut rng);
        Dataset::new(
            Tensor::new(vec![y.len(), p.d_in], x)?,
            y,
            p.n_classes,
            Split::Eval,
            p.provenance(),
        )?
    } else {
        train.clone()
    };
    Ok((train, eval))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::parse(offset as u64, format!("truncated {what}")))
}

/// Parses an IDX image/label pair already in memory.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    limit: Option<usize>,
    normalize: bool,
) -> Result<Dataset> {
    let magic = be_u32(images, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(0, format!("bad image magic {magic:#010x}")));
    }
    let n_img = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let magic = be_u32(labels, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(0, format!("bad label magic {magic:#010x}")));
    }
    let n_lab = be_u32(labels, 4, "label count")? as usize;
    if n_img != n_lab {
        return Err(Error::parse(
            4,
            format!("image count {n_img} does not match label count {n_lab}"),
        ));
    }
    let n = limit.map_or(n_img, |l| l.min(n_img));
    if n == 0 {
        return Err(Error::parse(4, "no samples"));
    }
    let pixels = rows * cols;
    let img_end = 16 + n * pixels;
    if images.len() < img_end {
        return Err(Error::parse(
            images.len() as u64,
            format!("image payload truncated: need {img_end} bytes"),
        ));
    }
    if labels.len() < 8 + n {
        return Err(Error::parse(
            labels.len() as u64,
            format!("label payload truncated: need {} bytes", 8 + n),
        ));
    }
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    let data = images[16..img_end]
        .iter()
        .map(|&b| b as f64 * scale)
        .collect();
    let ys: Vec<usize> = labels[8..8 + n].iter().map(|&b| b as usize).collect();
    let n_classes = ys.iter().max().map_or(1, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![n, pixels], data)?,
        ys,
        n_classes,
        Split::Train,
        "idx",
    )
}

pub fn load_idx(
    images_path: &FsPath,
    labels_path: &FsPath,
    limit: Option<usize>,
    normalize: bool,
) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    let mut ds = parse_idx(&images, &labels, limit, normalize)?;
    ds.provenance = format!("idx: {} + {}", images_path.display(), labels_path.display());
    Ok(ds)
}
