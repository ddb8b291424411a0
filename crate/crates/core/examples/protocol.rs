//! Runs the four-way ablation grid and prints a summary table.
//!
//! Usage: cargo run --release --example protocol -- [config-file] [n-seeds]

use std::time::Instant;

use pada_core::config::ExperimentConfig;
use pada_core::experiment::{cells_csv, ground_truth, run_grid, summarize, summary_table, Variant};

fn main() -> pada_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = match args.get(1) {
        Some(p) if p != "-" => ExperimentConfig::load(p.as_ref())?,
        _ => ExperimentConfig::default(),
    };
    let n_seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let t = Instant::now();
    let gt = ground_truth(&cfg, 0)?;
    let (lo, hi) = gt
        .accuracy
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    eprintln!(
        "oracle: {} paths in {:.1?}, accuracy range {lo:.4}..{hi:.4}",
        gt.paths.len(),
        t.elapsed()
    );
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let cells = run_grid(&cfg, &gt, &Variant::ALL, &seeds, 0.1)?;
    eprintln!("grid done in {:.1?}", t.elapsed());
    print!("{}", cells_csv(&cells));
    print!("{}", summary_table(&summarize(&cells)));
    Ok(())
}
