//! Batch commands that run in this process.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use cstgn_core::checkpoint;
use cstgn_core::eval::{
    evaluate, generate_queries, run_experiment, split, write_rows_csv, EvalReport, Experiment,
    ExperimentConfig, Split,
};
use cstgn_core::graph::{encode_query, TemporalGraph};
use cstgn_core::model::Model;
use cstgn_core::search::identify_community;
use cstgn_core::trainer::{train_temporal, write_trace, QuerySample, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tracing::info;

use crate::args::{communities, parse_ids, ConfigFile, GraphArgs, ModelArgs, SampleArgs, TrainArgs};
use crate::user_error;

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Ground-truth communities, one per line.
    #[arg(long)]
    pub communities: Option<PathBuf>,
    /// Directory for `summary.json` and the normalized `edges.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct GraphSummary {
    nodes: usize,
    attr_dim: usize,
    edges_per_snapshot: Vec<usize>,
    communities: Option<usize>,
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let file = ConfigFile::load(a.graph.config.as_deref())?;
    let g = a.graph.load(&file)?;
    let cs = a.communities.as_deref().map(|p| communities(p, &g)).transpose()?;
    let summary = GraphSummary {
        nodes: g.num_nodes(),
        attr_dim: g.attr_dim(),
        edges_per_snapshot: g.snapshots().iter().map(|s| s.num_edges()).collect(),
        communities: cs.as_ref().map(|c| c.len()),
    };
    println!("nodes      {}", summary.nodes);
    println!("attr dim   {}", summary.attr_dim);
    for (t, e) in summary.edges_per_snapshot.iter().enumerate() {
        println!("t={:<3}      {e} edges", t + 1);
    }
    if let Some(c) = summary.communities {
        println!("communities {c}");
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("summary.json"), &summary)?;
        g.write_edge_list(BufWriter::new(File::create(out.join("edges.txt"))?))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub communities: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory for `model.ckpt`, `trace.jsonl` and `summary.json`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_val_f1: f64,
    epochs_run: usize,
    train: usize,
    val: usize,
    test: usize,
}

fn sampled_split(g: &TemporalGraph, communities_path: &Path, s: &SampleArgs, file: &ConfigFile, seed: u64) -> Result<Split> {
    let cs = communities(communities_path, g)?;
    let (count, size) = s.resolve(file);
    let samples: Vec<QuerySample> = generate_queries(g, &cs, count, size, seed)?;
    Ok(split(&samples, seed)?)
}

pub fn train(a: &TrainCmd) -> Result<()> {
    let file = ConfigFile::load(a.graph.config.as_deref())?;
    let g = a.graph.load(&file)?;
    let model_cfg = a.model.resolve(&file, g.attr_dim())?;
    let cfg = a.train.resolve(&file, &TrainConfig::default())?;
    let sp = sampled_split(&g, &a.communities, &a.train.sampling, &file, cfg.seed)?;
    info!(train = sp.train.len(), val = sp.val.len(), "training");
    let init = Model::init(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let out = train_temporal(init, &g, &sp.train, &sp.val, &cfg)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    checkpoint::save(&a.out.join("model.ckpt"), &out.best, Some(&cfg))?;
    let mut w = BufWriter::new(File::create(a.out.join("trace.jsonl"))?);
    write_trace(&out.trace, &mut w)?;
    w.flush()?;
    let summary = TrainSummary {
        best_epoch: out.best_epoch,
        best_val_f1: out.best_val_f1,
        epochs_run: out.epochs_run,
        train: sp.train.len(),
        val: sp.val.len(),
        test: sp.test.len(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "best epoch {} of {}, validation F1 {:.4}",
        out.best_epoch, out.epochs_run, out.best_val_f1
    );
    println!("wrote {}", a.out.join("model.ckpt").display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct QueryCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Query node ids, comma separated or repeated.
    #[arg(long, required = true, num_args = 1..)]
    pub nodes: Vec<String>,
    /// [default: the checkpoint's training threshold, else 0.5]
    #[arg(long)]
    pub eta: Option<f64>,
    /// One-based snapshot [default: latest].
    #[arg(long)]
    pub t: Option<usize>,
    /// Writes the result to this file as one JSON line.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_checkpoint(path: &Path) -> Result<(Model, Option<TrainConfig>)> {
    let (model, meta) = checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((model, meta.train))
}

pub fn query(a: &QueryCmd) -> Result<()> {
    let file = ConfigFile::load(a.graph.config.as_deref())?;
    let (model, train) = load_checkpoint(&a.checkpoint)?;
    let g = a.graph.load(&file)?;
    let ids = parse_ids(&a.nodes);
    let nodes = g
        .resolve_ids(&ids)
        .map_err(|unknown| user_error(format!("unknown node id(s): {}", unknown.join(", "))))?;
    let t = a.t.unwrap_or(g.num_snapshots());
    if t < 1 || t > g.num_snapshots() {
        return Err(user_error(format!("snapshot t={t} outside 1..={}", g.num_snapshots())));
    }
    let train = train.unwrap_or_default();
    let eta = a.eta.or(file.eta).unwrap_or(train.eta);
    let q = encode_query(&nodes, g.num_nodes())?;
    let result = identify_community(&model, &g, t - 1, &q, eta, train.candidate)?;
    let record = result.to_record(&g);

    let mut members = record.members.clone();
    members.sort();
    let psi: Vec<f64> = record.psi.values().copied().collect();
    let (lo, hi) = psi.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let mean = psi.iter().sum::<f64>() / psi.len() as f64;
    println!("members ({}): {}", members.len(), members.join(" "));
    println!("size {} at t={t}, eta {eta}", members.len());
    println!("psi over members: min {lo:.4} mean {mean:.4} max {hi:.4}");
    if let Some(out) = &a.out {
        let mut w = BufWriter::new(File::create(out)?);
        serde_json::to_writer(&mut w, &record)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub communities: PathBuf,
    /// [default: the checkpoint's training threshold]
    #[arg(long)]
    pub eta: Option<f64>,
    /// Seed of the query sample and split [default: the checkpoint's].
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sampling: SampleArgs,
    /// Directory for `report.json` and `queries.jsonl`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn eval(a: &EvalCmd) -> Result<()> {
    let file = ConfigFile::load(a.graph.config.as_deref())?;
    let (model, train) = load_checkpoint(&a.checkpoint)?;
    let train = train.unwrap_or_default();
    let g = a.graph.load(&file)?;
    let seed = a.seed.or(file.seed).unwrap_or(train.seed);
    let eta = a.eta.or(file.eta).unwrap_or(train.eta);
    let sp = sampled_split(&g, &a.communities, &a.sampling, &file, seed)?;
    if sp.test.is_empty() {
        return Err(user_error("test split is empty"));
    }
    let report = evaluate(&model, &g, &sp.test, eta, train.candidate)?;
    print_report(&report);
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    let mut w = BufWriter::new(File::create(a.out.join("queries.jsonl"))?);
    for q in &report.per_query {
        serde_json::to_writer(&mut w, q)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("{:>8} {:>10} {:>10} {:>10}", "queries", "precision", "recall", "f1");
    println!(
        "{:>8} {:>10.4} {:>10.4} {:>10.4}",
        r.per_query.len(),
        r.mean_precision,
        r.mean_recall,
        r.mean_f1
    );
    println!("median f1 {:.4} at t={}, eta {}", r.median_f1, r.snapshot, r.eta);
}

#[derive(Debug, Args)]
pub struct ExperimentCmd {
    /// ablation_gru, snapshot_count, eta_sweep or hidden_sweep.
    pub name: String,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub communities: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Directory for `<name>.csv` and `<name>.jsonl`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn experiment(a: &ExperimentCmd) -> Result<()> {
    let exp: Experiment = a.name.parse()?;
    let file = ConfigFile::load(a.graph.config.as_deref())?;
    let g = a.graph.load(&file)?;
    let model = a.model.resolve(&file, g.attr_dim())?;
    let train = a.train.resolve(&file, &TrainConfig::default())?;
    let cs = communities(&a.communities, &g)?;
    let (count, size) = a.train.sampling.resolve(&file);
    let samples = generate_queries(&g, &cs, count, size, train.seed)?;
    let rows = run_experiment(&g, &samples, &ExperimentConfig::new(model, train), exp)?;

    println!("{:<14} {:>8} {:>8}", "label", "x", "mean_f1");
    for r in &rows {
        println!("{:<14} {:>8} {:>8.4}", r.label, r.x, r.mean_f1);
    }
    fs::create_dir_all(&a.out)?;
    let mut csv = BufWriter::new(File::create(a.out.join(format!("{}.csv", a.name)))?);
    write_rows_csv(&rows, &mut csv)?;
    csv.flush()?;
    let mut jl = BufWriter::new(File::create(a.out.join(format!("{}.jsonl", a.name)))?);
    for r in &rows {
        serde_json::to_writer(&mut jl, r)?;
        writeln!(jl)?;
    }
    jl.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
