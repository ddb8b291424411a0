//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key has a default, so an empty file is a complete configuration.
//! Unknown keys, repeated keys, malformed values and out-of-range values are
//! rejected with the offending line number. [`ExperimentConfig::to_text`]
//! writes the fully resolved configuration back in the same format.

use std::fmt::Write as _;
use std::path::Path as FsPath;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::BlobParams;
use crate::error::{Error, Result};
use crate::ranking::OracleConfig;
use crate::search::SearchConfig;
use crate::space::{CellSpec, OpKind, DEFAULT_ENUMERATION_CAP};
use crate::train::TrainConfig;

/// Synthetic dataset settings; dimensions come from the space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_train_per_class: usize,
    pub n_eval_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train_per_class: 512,
            n_eval_per_class: 128,
            separation: 0.125,
            noise: 0.175,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn blob_params(&self, spec: &CellSpec) -> BlobParams {
        BlobParams {
            n_classes: spec.n_classes,
            d_in: spec.d_in,
            separation: self.separation,
            noise: self.noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub oracle: OracleConfig,
    pub data: DataConfig,
    pub space: CellSpec,
    pub enumeration_cap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            oracle: OracleConfig::default(),
            data: DataConfig::default(),
            space: CellSpec::toy(),
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// Space fields are collected first and the cell is built once at the end.
struct SpaceDraft {
    nodes: usize,
    ops: Vec<OpKind>,
    hidden: usize,
    d_in: usize,
    n_classes: usize,
}

type SetResult = std::result::Result<(), String>;

fn parse_num<T: FromStr>(v: &str, what: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("expected {what}, got `{v}`"))
}

fn count(v: &str, min: usize) -> std::result::Result<usize, String> {
    if v.starts_with('-') {
        return Err(format!("must be at least {min}, got {v}"));
    }
    let n: usize = parse_num(v, "a nonnegative integer")?;
    if n < min {
        return Err(format!("must be at least {min}, got {n}"));
    }
    Ok(n)
}

fn real(v: &str, lo: f64, hi: f64) -> std::result::Result<f64, String> {
    let x: f64 = parse_num(v, "a number")?;
    if !x.is_finite() || x < lo || x > hi {
        return Err(format!("must lie in [{lo}, {hi}], got {v}"));
    }
    Ok(x)
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn choice<T: FromStr<Err = Error>>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|e| match e {
        Error::Config(m) => m,
        other => other.to_string(),
    })
}

fn optional(v: &str, min: usize) -> std::result::Result<Option<usize>, String> {
    if v == "none" {
        Ok(None)
    } else {
        count(v, min).map(Some)
    }
}

fn opt_text(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |n| n.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let s = &cfg.space;
        let mut space = SpaceDraft {
            nodes: s.n_nodes,
            ops: s.ops.clone(),
            hidden: s.hidden,
            d_in: s.d_in,
            n_classes: s.n_classes,
        };
        let mut seen: Vec<(String, usize)> = Vec::new();
        let mut space_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigLine {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
                return Err(Error::ConfigLine {
                    line,
                    message: format!("`{key}` already set on line {first}"),
                });
            }
            seen.push((key.to_string(), line));
            if key.starts_with("space.") {
                space_line = line;
            }
            cfg.set(&mut space, key, value)
                .map_err(|message| Error::ConfigLine {
                    line,
                    message: format!("{key}: {message}"),
                })?;
        }
        cfg.space = CellSpec::new(
            space.nodes,
            space.ops,
            space.hidden,
            space.d_in,
            space.n_classes,
        )
        .map_err(|e| at_line(space_line, e))?;
        let line_of = |prefix: &str| {
            seen.iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(_, l)| *l)
                .max()
                .unwrap_or(0)
        };
        cfg.train
            .validate()
            .map_err(|e| at_line(line_of("train."), e))?;
        cfg.search
            .validate()
            .map_err(|e| at_line(line_of("search."), e))?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, space: &mut SpaceDraft, key: &str, v: &str) -> SetResult {
        let t = &mut self.train;
        let s = &mut self.search;
        let o = &mut self.oracle;
        let d = &mut self.data;
        match key {
            "train.epochs" => t.epochs = count(v, 1)?,
            "train.batch_size" => t.batch_size = count(v, 1)?,
            "train.base_lr" => t.base_lr = real(v, f64::MIN_POSITIVE, f64::MAX)?,
            "train.min_lr" => t.min_lr = real(v, 0.0, f64::MAX)?,
            "train.momentum" => t.momentum = real(v, 0.0, 0.999_999)?,
            "train.weight_decay" => t.weight_decay = real(v, 0.0, f64::MAX)?,
            "pa.enabled" => t.pa.enabled = flag(v)?,
            "pa.update_freq" => t.pa.update_freq = choice(v)?,
            "pa.style" => t.pa.style = choice(v)?,
            "pa.reweight" => t.pa.reweight = flag(v)?,
            "pa.accumulation" => t.pa.accumulation = choice(v)?,
            "da.enabled" => t.da.enabled = flag(v)?,
            "da.style" => t.da.style = choice(v)?,
            "da.granularity" => t.da.granularity = choice(v)?,
            "da.accumulation" => t.da.accumulation = choice(v)?,
            "seed.master" => t.master_seed = parse_num(v, "an unsigned integer")?,
            "gv.scope" => t.gv_scope = choice(v)?,
            "space.nodes" => space.nodes = count(v, 2)?,
            "space.ops" => {
                space.ops = v
                    .split(',')
                    .map(|op| choice::<OpKind>(op.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "space.hidden" => space.hidden = count(v, 1)?,
            "space.d_in" => space.d_in = count(v, 1)?,
            "space.n_classes" => space.n_classes = count(v, 2)?,
            "space.enumeration_cap" => self.enumeration_cap = count(v, 1)?,
            "search.strategy" => s.strategy = choice(v)?,
            "search.rounds" => s.rounds = count(v, 1)?,
            "search.population" => s.population = count(v, 1)?,
            "search.n_mutate" => s.n_mutate = count(v, 0)?,
            "search.n_crossover" => s.n_crossover = count(v, 0)?,
            "search.mutation_rate" => s.mutation_rate = real(v, 0.0, 1.0)?,
            "search.param_budget" => s.param_budget = optional(v, 1)?,
            "search.eval_subset_size" => s.eval_subset_size = optional(v, 1)?,
            "search.n_parents" => s.n_parents = count(v, 1)?,
            "search.max_retries" => s.max_retries = count(v, 1)?,
            "oracle.epochs" => o.epochs = count(v, 1)?,
            "oracle.batch_size" => o.batch_size = count(v, 1)?,
            "oracle.base_lr" => o.base_lr = real(v, f64::MIN_POSITIVE, f64::MAX)?,
            "oracle.min_lr" => o.min_lr = real(v, 0.0, f64::MAX)?,
            "oracle.momentum" => o.momentum = real(v, 0.0, 0.999_999)?,
            "oracle.weight_decay" => o.weight_decay = real(v, 0.0, f64::MAX)?,
            "data.n_train_per_class" => d.n_train_per_class = count(v, 1)?,
            "data.n_eval_per_class" => d.n_eval_per_class = count(v, 0)?,
            "data.separation" => d.separation = real(v, 0.0, f64::MAX)?,
            "data.noise" => d.noise = real(v, 0.0, f64::MAX)?,
            "data.seed" => d.seed = parse_num(v, "an unsigned integer")?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// The resolved configuration in the input format; parses back to `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.search;
        let o = &self.oracle;
        let d = &self.data;
        let sp = &self.space;
        let ops: Vec<&str> = sp.ops.iter().map(|op| op.name()).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.base_lr", t.base_lr.to_string());
        kv("train.min_lr", t.min_lr.to_string());
        kv("train.momentum", t.momentum.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("pa.enabled", t.pa.enabled.to_string());
        kv("pa.update_freq", t.pa.update_freq.to_string());
        kv("pa.style", t.pa.style.to_string());
        kv("pa.reweight", t.pa.reweight.to_string());
        kv("pa.accumulation", t.pa.accumulation.to_string());
        kv("da.enabled", t.da.enabled.to_string());
        kv("da.style", t.da.style.to_string());
        kv("da.granularity", t.da.granularity.to_string());
        kv("da.accumulation", t.da.accumulation.to_string());
        kv("seed.master", t.master_seed.to_string());
        kv("gv.scope", t.gv_scope.to_string());
        kv("space.nodes", sp.n_nodes.to_string());
        kv("space.ops", ops.join(","));
        kv("space.hidden", sp.hidden.to_string());
        kv("space.d_in", sp.d_in.to_string());
        kv("space.n_classes", sp.n_classes.to_string());
        kv("space.enumeration_cap", self.enumeration_cap.to_string());
        kv("search.strategy", s.strategy.to_string());
        kv("search.rounds", s.rounds.to_string());
        kv("search.population", s.population.to_string());
        kv("search.n_mutate", s.n_mutate.to_string());
        kv("search.n_crossover", s.n_crossover.to_string());
        kv("search.mutation_rate", s.mutation_rate.to_string());
        kv("search.param_budget", opt_text(s.param_budget));
        kv("search.eval_subset_size", opt_text(s.eval_subset_size));
        kv("search.n_parents", s.n_parents.to_string());
        kv("search.max_retries", s.max_retries.to_string());
        kv("oracle.epochs", o.epochs.to_string());
        kv("oracle.batch_size", o.batch_size.to_string());
        kv("oracle.base_lr", o.base_lr.to_string());
        kv("oracle.min_lr", o.min_lr.to_string());
        kv("oracle.momentum", o.momentum.to_string());
        kv("oracle.weight_decay", o.weight_decay.to_string());
        kv("data.n_train_per_class", d.n_train_per_class.to_string());
        kv("data.n_eval_per_class", d.n_eval_per_class.to_string());
        kv("data.separation", d.separation.to_string());
        kv("data.noise", d.noise.to_string());
        kv("data.seed", d.seed.to_string());
        out
    }
}

fn at_line(line: usize, e: Error) -> Error {
    match e {
        Error::Config(message) if line > 0 => Error::ConfigLine { line, message },
        other => other,
    }
}
