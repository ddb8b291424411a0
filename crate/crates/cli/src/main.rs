use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand_chacha::ChaCha8Rng;

use pada_core::checkpoint::Checkpoint;
use pada_core::config::ExperimentConfig;
use pada_core::data::{generate_split, load_idx, Dataset, Split};
use pada_core::experiment::{
    cells_csv, last_quarter_mean, parse_cells_csv, run_grid, summarize, summary_table, CellResult,
    GroundTruth, Variant,
};
use pada_core::manifest::RunManifest;
use pada_core::ranking::{
    evaluate_all, oracle_table, read_ground_truth, write_ground_truth, GroundTruthRow,
    RankingReport,
};
use pada_core::rng::{stream_rng, Stream};
use pada_core::sampling::{DataDistribution, PathDistribution};
use pada_core::search::{search, Strategy};
use pada_core::space::Path;
use pada_core::train::{metrics_csv, Trainer};
use pada_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pada",
    version,
    about = "Supernet training with path and data importance sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/eval CSVs, or convert an IDX pair to CSV.
    GenData(GenData),
    /// Train a supernet and write metrics, distributions and a checkpoint.
    TrainSupernet(TrainSupernet),
    /// Train every path of the space standalone and write the ground-truth table.
    Oracle(Oracle),
    /// Kendall's tau and precision at top-k of a checkpoint against ground truth.
    EvalRanking(EvalRanking),
    /// Random or evolutionary sub-model search over a checkpoint.
    Search(SearchCmd),
    /// Aggregate per-seed result CSVs into a mean ± std table.
    Report(Report),
    /// Ground truth plus every method on every seed, in one run.
    Ablation(Ablation),
}

#[derive(Args)]
struct Common {
    /// Config file (key = value) or a run manifest (JSON); defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Training CSV; synthetic data from the config if omitted.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Evaluation CSV; synthetic data from the config if omitted.
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args)]
struct GenData {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    /// Scale IDX pixels to [0, 1].
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct TrainSupernet {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop (and checkpoint) once this many epochs are complete.
    #[arg(long)]
    stop_after: Option<usize>,
    /// Override seed.master.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Oracle {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalRanking {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    k_frac: f64,
    /// RankingReport JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Also append a result row for `report` under this method name.
    #[arg(long, requires = "cells_out")]
    variant: Option<String>,
    #[arg(long)]
    cells_out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Override search.strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Seed of the search stream; defaults to seed.master.
    #[arg(long)]
    seed: Option<u64>,
    /// Best path and score are written here.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Report {
    /// Result CSVs (`variant,seed,kendall_tau,...`).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Ablation {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0.05)]
    k_frac: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Config plus any train/eval inputs recorded by a manifest.
struct Loaded {
    cfg: ExperimentConfig,
    data: DataArgs,
}

fn load(common: &Common, data: &DataArgs) -> Result<Loaded> {
    let mut data = DataArgs {
        train: data.train.clone(),
        eval: data.eval.clone(),
    };
    let Some(path) = &common.config else {
        return Ok(Loaded {
            cfg: ExperimentConfig::default(),
            data,
        });
    };
    let text = fs::read_to_string(path)?;
    if !text.trim_start().starts_with('{') {
        return Ok(Loaded {
            cfg: ExperimentConfig::parse(&text)?,
            data,
        });
    }
    let manifest = RunManifest::from_json(&text)?;
    if data.train.is_none() && data.eval.is_none() {
        data.train = manifest.artifacts.get("train").map(PathBuf::from);
        data.eval = manifest.artifacts.get("eval").map(PathBuf::from);
    }
    Ok(Loaded {
        cfg: manifest.config()?,
        data,
    })
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    Ok(load(
        common,
        &DataArgs {
            train: None,
            eval: None,
        },
    )?
    .cfg)
}

fn load_data(cfg: &ExperimentConfig, args: &DataArgs) -> Result<(Dataset, Dataset)> {
    let n_classes = Some(cfg.space.n_classes);
    match (&args.train, &args.eval) {
        (Some(t), Some(e)) => Ok((
            Dataset::read_csv(t, Split::Train, n_classes)?,
            Dataset::read_csv(e, Split::Eval, n_classes)?,
        )),
        (None, None) => generate_split(
            cfg.data.n_train_per_class,
            cfg.data.n_eval_per_class,
            &cfg.data.blob_params(&cfg.space),
        ),
        _ => Err(Error::Usage(
            "--train and --eval must be given together".into(),
        )),
    }
}

fn with_inputs(mut manifest: RunManifest, data: &DataArgs) -> RunManifest {
    if let Some(p) = &data.train {
        manifest = manifest.artifact("train", p);
    }
    if let Some(p) = &data.eval {
        manifest = manifest.artifact("eval", p);
    }
    manifest
}

fn ensure_dir(dir: &FsPath) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn path_dist_csv(p: &PathDistribution) -> String {
    let mut out = String::from("edge,op,prob\n");
    for (e, row) in p.probs().iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let _ = writeln!(out, "{e},{k},{v}");
        }
    }
    out
}

fn data_dist_csv(q: &DataDistribution) -> String {
    let mut out = String::from("sample_id,prob\n");
    for (i, v) in q.probs().iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = load_config(&a.common)?;
    ensure_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("gen-data", &cfg, String::new());
    if let (Some(images), Some(labels)) = (&a.idx_images, &a.idx_labels) {
        manifest = manifest
            .artifact("idx_images", images)
            .artifact("idx_labels", labels)
            .artifact("train", &a.out_dir.join("train.csv"));
        manifest.save(&a.out_dir.join("manifest.json"))?;
        let ds = load_idx(images, labels, a.limit, a.normalize)?;
        ds.write_csv(&a.out_dir.join("train.csv"))?;
        info!(
            "converted {} IDX samples ({} features)",
            ds.len(),
            ds.d_in()
        );
        return Ok(());
    }
    if a.idx_labels.is_some() || a.limit.is_some() || a.normalize {
        return Err(Error::Usage(
            "--idx-labels, --limit and --normalize need --idx-images".into(),
        ));
    }
    manifest = manifest
        .artifact("train", &a.out_dir.join("train.csv"))
        .artifact("eval", &a.out_dir.join("eval.csv"));
    manifest.save(&a.out_dir.join("manifest.json"))?;
    let (train, eval) = load_data(
        &cfg,
        &DataArgs {
            train: None,
            eval: None,
        },
    )?;
    train.write_csv(&a.out_dir.join("train.csv"))?;
    eval.write_csv(&a.out_dir.join("eval.csv"))?;
    info!(
        "wrote {} train and {} eval samples (fingerprint {})",
        train.len(),
        eval.len(),
        train.fingerprint()
    );
    Ok(())
}

fn train_cmd(a: TrainSupernet) -> Result<()> {
    let Loaded { mut cfg, data } = load(&a.common, &a.data)?;
    if let Some(seed) = a.seed {
        cfg.train.master_seed = seed;
    }
    let (train, _) = load_data(&cfg, &data)?;
    ensure_dir(&a.out_dir)?;
    let ckpt_path = a.out_dir.join("checkpoint.bin");
    let metrics_path = a.out_dir.join("metrics.csv");
    let mut manifest = RunManifest::new("train-supernet", &cfg, train.fingerprint())
        .artifact("checkpoint", &ckpt_path)
        .artifact("metrics", &metrics_path)
        .artifact("path_distribution", &a.out_dir.join("path_dist.csv"))
        .artifact("data_distribution", &a.out_dir.join("data_dist.csv"));
    manifest = with_inputs(manifest, &data);
    if let Some(p) = &a.resume {
        manifest = manifest.artifact("resume_from", p);
    }
    manifest.save(&a.out_dir.join("manifest.json"))?;

    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(cfg.train, &train, Checkpoint::load(p)?)?,
        None => Trainer::new(cfg.train, &cfg.space, &train)?,
    };
    let stop = a
        .stop_after
        .unwrap_or(cfg.train.epochs)
        .min(cfg.train.epochs);
    while trainer.epochs_done() < stop {
        let m = trainer.run_epoch()?;
        info!(
            "epoch {}/{}: loss {:.5} gv {:.4e} delta {:.3} tau {:.3} lr {:.5}",
            m.epoch, cfg.train.epochs, m.mean_loss, m.gv, m.delta, m.tau, m.lr
        );
    }
    trainer.checkpoint().save(&ckpt_path)?;
    fs::write(&metrics_path, metrics_csv(trainer.history()))?;
    fs::write(
        a.out_dir.join("path_dist.csv"),
        path_dist_csv(trainer.path_distribution()),
    )?;
    fs::write(
        a.out_dir.join("data_dist.csv"),
        data_dist_csv(trainer.data_distribution()),
    )?;
    println!(
        "trained {} of {} epochs; checkpoint {}",
        trainer.epochs_done(),
        cfg.train.epochs,
        ckpt_path.display()
    );
    Ok(())
}

fn oracle_cmd(a: Oracle) -> Result<()> {
    let Loaded { cfg, data } = load(&a.common, &a.data)?;
    let (train, eval) = load_data(&cfg, &data)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    with_inputs(RunManifest::new("oracle", &cfg, train.fingerprint()), &data)
        .artifact("ground_truth", &a.out)
        .save(&a.out.with_extension("manifest.json"))?;
    let paths = cfg.space.enumerate_paths(cfg.enumeration_cap)?;
    info!("training {} paths standalone", paths.len());
    let acc = oracle_table(&cfg.space, &paths, &train, &eval, &cfg.oracle, a.seed)?;
    let rows: Vec<GroundTruthRow> = paths
        .iter()
        .zip(acc)
        .map(|(p, accuracy)| GroundTruthRow {
            path: p.clone(),
            accuracy,
            seed: a.seed,
        })
        .collect();
    write_ground_truth(&a.out, &rows)?;
    println!(
        "wrote {} ground-truth rows to {}",
        rows.len(),
        a.out.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalRanking) -> Result<()> {
    let Loaded { cfg, data } = load(&a.common, &a.data)?;
    let (train, eval) = load_data(&cfg, &data)?;
    let mut manifest = with_inputs(
        RunManifest::new("eval-ranking", &cfg, train.fingerprint()),
        &data,
    )
    .artifact("checkpoint", &a.checkpoint)
    .artifact("ground_truth", &a.ground_truth)
    .artifact("report", &a.out);
    if let Some(out) = &a.cells_out {
        manifest = manifest.artifact("cells", out);
    }
    manifest.save(&a.out.with_extension("manifest.json"))?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let rows = read_ground_truth(&a.ground_truth)?;
    let paths: Vec<Path> = rows.iter().map(|r| r.path.clone()).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let pred = evaluate_all(&ck.supernet, &paths, &eval)?;
    let master = cfg.train.master_seed;
    let report = RankingReport::new(&paths, pred, truth, a.k_frac, master)?;
    fs::write(&a.out, report.to_json() + "\n")?;
    println!(
        "kendall_tau {} p_at_top{}% {}",
        report.kendall_tau,
        a.k_frac * 100.0,
        report.p_at_topk
    );
    if let (Some(name), Some(out)) = (&a.variant, &a.cells_out) {
        let variant = Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| {
                Error::Usage(format!("unknown method `{name}` (spos, pa, da, pa+da)"))
            })?;
        let gv: Vec<f64> = ck.history.iter().map(|m| m.gv).collect();
        let cell = CellResult {
            variant,
            seed: master,
            kendall_tau: report.kendall_tau,
            p_at_topk: report.p_at_topk,
            late_gv: last_quarter_mean(&gv),
            final_loss: ck.history.last().map_or(f64::NAN, |m| m.mean_loss),
        };
        let mut cells = if out.exists() {
            parse_cells_csv(&fs::read_to_string(out)?)?
        } else {
            Vec::new()
        };
        cells.push(cell);
        fs::write(out, cells_csv(&cells))?;
    }
    Ok(())
}

fn search_cmd(a: SearchCmd) -> Result<()> {
    let Loaded { mut cfg, data } = load(&a.common, &a.data)?;
    if let Some(s) = a.strategy {
        cfg.search.strategy = s;
    }
    if let Some(seed) = a.seed {
        cfg.train.master_seed = seed;
    }
    let (train, eval) = load_data(&cfg, &data)?;
    with_inputs(RunManifest::new("search", &cfg, train.fingerprint()), &data)
        .artifact("checkpoint", &a.checkpoint)
        .artifact("best_path", &a.out)
        .save(&a.out.with_extension("manifest.json"))?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut rng: ChaCha8Rng = stream_rng(cfg.train.master_seed, Stream::Search);
    let res = search(&ck.supernet, &cfg.search, &eval, &mut rng)?;
    let params = cfg.space.path_param_count(&res.best);
    fs::write(
        &a.out,
        format!(
            "path,score,params\n\"{}\",{},{}\n",
            res.best, res.score, params
        ),
    )?;
    println!(
        "best path {} score {} params {} ({} candidates scored)",
        res.best, res.score, params, res.evaluated
    );
    Ok(())
}

fn report_cmd(a: Report) -> Result<()> {
    if let Some(out) = &a.out {
        let mut manifest = RunManifest::new("report", &ExperimentConfig::default(), String::new())
            .artifact("table", out);
        for (i, p) in a.inputs.iter().enumerate() {
            manifest = manifest.artifact(&format!("input{i}"), p);
        }
        manifest.save(&out.with_extension("manifest.json"))?;
    }
    let mut cells = Vec::new();
    for p in &a.inputs {
        cells.extend(parse_cells_csv(&fs::read_to_string(p)?)?);
    }
    let table = summary_table(&summarize(&cells));
    if let Some(out) = &a.out {
        fs::write(out, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn ablation_cmd(a: Ablation) -> Result<()> {
    let Loaded { cfg, data } = load(&a.common, &a.data)?;
    let (train, eval) = load_data(&cfg, &data)?;
    ensure_dir(&a.out_dir)?;
    with_inputs(
        RunManifest::new("ablation", &cfg, train.fingerprint()),
        &data,
    )
    .artifact("ground_truth", &a.out_dir.join("ground_truth.csv"))
    .artifact("cells", &a.out_dir.join("cells.csv"))
    .artifact("summary", &a.out_dir.join("summary.md"))
    .save(&a.out_dir.join("manifest.json"))?;
    let paths = cfg.space.enumerate_paths(cfg.enumeration_cap)?;
    info!("ground truth over {} paths", paths.len());
    let accuracy = oracle_table(&cfg.space, &paths, &train, &eval, &cfg.oracle, 0)?;
    let rows: Vec<GroundTruthRow> = paths
        .iter()
        .zip(&accuracy)
        .map(|(p, &accuracy)| GroundTruthRow {
            path: p.clone(),
            accuracy,
            seed: 0,
        })
        .collect();
    write_ground_truth(&a.out_dir.join("ground_truth.csv"), &rows)?;
    let gt = GroundTruth {
        train,
        eval,
        paths,
        accuracy,
    };
    let seeds: Vec<u64> = (0..a.seeds).collect();
    info!("training {} supernets", seeds.len() * Variant::ALL.len());
    let cells = run_grid(&cfg, &gt, &Variant::ALL, &seeds, a.k_frac)?;
    fs::write(a.out_dir.join("cells.csv"), cells_csv(&cells))?;
    let table = summary_table(&summarize(&cells));
    fs::write(a.out_dir.join("summary.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainSupernet(a) => train_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::EvalRanking(a) => eval_cmd(a),
        Command::Search(a) => search_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Ablation(a) => ablation_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
