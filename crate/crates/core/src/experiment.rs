//! The multi-seed ablation protocol: one dataset and one standalone ground
//! truth, then SPOS / PA / DA / PA&DA supernets per seed, each scored by
//! ranking consistency and gradient variance.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{generate_split, Dataset};
use crate::error::{Error, Result};
use crate::ranking::{evaluate_all, kendall_tau, oracle_table, precision_at_topk};
use crate::space::Path;
use crate::train::train_supernet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Spos,
    PaOnly,
    DaOnly,
    PaDa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Spos,
        Variant::PaOnly,
        Variant::DaOnly,
        Variant::PaDa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Spos => "spos",
            Variant::PaOnly => "pa",
            Variant::DaOnly => "da",
            Variant::PaDa => "pa+da",
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Spos => (false, false),
            Variant::PaOnly => (true, false),
            Variant::DaOnly => (false, true),
            Variant::PaDa => (true, true),
        }
    }
}

/// Dataset, enumerated space and standalone accuracies shared by all cells.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub train: Dataset,
    pub eval: Dataset,
    pub paths: Vec<Path>,
    pub accuracy: Vec<f64>,
}

pub fn ground_truth(cfg: &ExperimentConfig, oracle_seed: u64) -> Result<GroundTruth> {
    let p = cfg.data.blob_params(&cfg.space);
    let (train, eval) = generate_split(cfg.data.n_train_per_class, cfg.data.n_eval_per_class, &p)?;
    let paths = cfg.space.enumerate_paths(cfg.enumeration_cap)?;
    let accuracy = oracle_table(&cfg.space, &paths, &train, &eval, &cfg.oracle, oracle_seed)?;
    Ok(GroundTruth {
        train,
        eval,
        paths,
        accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub variant: Variant,
    pub seed: u64,
    pub kendall_tau: f64,
    pub p_at_topk: f64,
    /// Mean per-epoch GV over the last quarter of epochs.
    pub late_gv: f64,
    pub final_loss: f64,
}

/// Mean of the last `ceil(n/4)` finite values.
pub fn last_quarter_mean(values: &[f64]) -> f64 {
    let k = values.len().div_ceil(4);
    let tail: Vec<f64> = values[values.len() - k..]
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    gt: &GroundTruth,
    variant: Variant,
    seed: u64,
    k_frac: f64,
) -> Result<CellResult> {
    let (pa, da) = variant.flags();
    let mut tc = cfg.train.with_sampling(pa, da);
    tc.master_seed = seed;
    let out = train_supernet(tc, &cfg.space, &gt.train)?;
    let pred = evaluate_all(&out.supernet, &gt.paths, &gt.eval)?;
    let gv: Vec<f64> = out.history.iter().map(|m| m.gv).collect();
    Ok(CellResult {
        variant,
        seed,
        kendall_tau: kendall_tau(&pred, &gt.accuracy)?,
        p_at_topk: precision_at_topk(&pred, &gt.accuracy, k_frac)?,
        late_gv: last_quarter_mean(&gv),
        final_loss: out.history.last().map_or(f64::NAN, |m| m.mean_loss),
    })
}

/// Every (variant, seed) cell, in variant-major order; cells run in parallel.
pub fn run_grid(
    cfg: &ExperimentConfig,
    gt: &GroundTruth,
    variants: &[Variant],
    seeds: &[u64],
    k_frac: f64,
) -> Result<Vec<CellResult>> {
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.par_iter()
        .map(|&(v, s)| run_cell(cfg, gt, v, s, k_frac))
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub variant: Variant,
    pub kendall_tau: (f64, f64),
    pub p_at_topk: (f64, f64),
    pub late_gv: (f64, f64),
}

pub fn summarize(cells: &[CellResult]) -> Vec<Summary> {
    Variant::ALL
        .iter()
        .filter(|v| cells.iter().any(|c| c.variant == **v))
        .map(|&v| {
            let of = |f: fn(&CellResult) -> f64| -> Vec<f64> {
                cells.iter().filter(|c| c.variant == v).map(f).collect()
            };
            Summary {
                variant: v,
                kendall_tau: mean_std(&of(|c| c.kendall_tau)),
                p_at_topk: mean_std(&of(|c| c.p_at_topk)),
                late_gv: mean_std(&of(|c| c.late_gv)),
            }
        })
        .collect()
}

pub const CELLS_HEADER: &str = "variant,seed,kendall_tau,p_at_topk,late_gv,final_loss";

pub fn cells_csv(cells: &[CellResult]) -> String {
    let mut out = String::from(CELLS_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.variant.name(),
            c.seed,
            c.kendall_tau,
            c.p_at_topk,
            c.late_gv,
            c.final_loss
        );
    }
    out
}

pub fn parse_cells_csv(text: &str) -> Result<Vec<CellResult>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CELLS_HEADER) {
        return Err(Error::parse(0, format!("expected header `{CELLS_HEADER}`")));
    }
    let mut offset = CELLS_HEADER.len() as u64 + 1;
    let mut out = Vec::new();
    for line in lines {
        let bad = |m: &str| Error::parse(offset, format!("{m} in `{line}`"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let variant = Variant::ALL
            .into_iter()
            .find(|v| v.name() == f[0])
            .ok_or_else(|| bad("unknown variant"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        out.push(CellResult {
            variant,
            seed: f[1].parse().map_err(|_| bad("bad seed"))?,
            kendall_tau: num(f[2])?,
            p_at_topk: num(f[3])?,
            late_gv: num(f[4])?,
            final_loss: num(f[5])?,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

/// Mean ± std table, one row per variant.
pub fn summary_table(rows: &[Summary]) -> String {
    let mut out =
        String::from("| method | KT | P@Top-k | GV (last quarter) |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4e} ± {:.2e} |",
            r.variant.name(),
            r.kendall_tau.0,
            r.kendall_tau.1,
            r.p_at_topk.0,
            r.p_at_topk.1,
            r.late_gv.0,
            r.late_gv.1
        );
    }
    out
}
