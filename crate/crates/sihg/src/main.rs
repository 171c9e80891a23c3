//! Command-line interface: train a model, evaluate or export a checkpoint,
//! and generate the synthetic fixtures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sihg::autodiff::Tape;
use sihg::error::{Error, Result};
use sihg::fixtures;
use sihg::geometry::GeometryKind;
use sihg::graph::{load_edge_list, split, SignedGraph, SplitPlan};
use sihg::model::{attention_rows, forward_opts, AttentionRow, EdgeSets, ModelParams};
use sihg::objective::EvalReport;
use sihg::trainer::{
    config_hash, evaluate_params, train_with, Checkpoint, EpochRecord, TrainConfig,
};

#[derive(Parser)]
#[command(name = "sihg", version, about = "Signed hyperbolic graph embeddings for link prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a signed edge list and write all run artifacts.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Export embeddings or the attention map from a checkpoint.
    Export(ExportArgs),
    /// Generate a synthetic fixture file.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct ConfigFlags {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<GeometryKind>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Decoder radius offset r.
    #[arg(long)]
    radius: Option<f64>,
    /// Decoder temperature t.
    #[arg(long)]
    temp: Option<f64>,
    /// Manifold curvature K.
    #[arg(long)]
    curvature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Test fraction of edges.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Replace learned attention with uniform neighbor averaging.
    #[arg(long)]
    uniform_attention: bool,
}

impl ConfigFlags {
    fn build(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text)?
            }
            None => TrainConfig::default(),
        };
        macro_rules! over {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { cfg.$field = v; } )* };
        }
        over!(model, dim, layers, epochs, lr, alpha, beta, gamma, radius, temp, curvature, seed, weight_decay, eval_every);
        if let Some(v) = self.split {
            cfg.split_fraction = v;
        }
        if self.uniform_attention {
            cfg.uniform_attention = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Signed edge list (src, dst, weight per line; comma, tab, or space separated).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the run artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Re-split with a different seed instead of the checkpoint's own split.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Where to write the report JSON (defaults to stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Embeddings,
    Attention,
}

#[derive(Args)]
struct ExportArgs {
    checkpoint: PathBuf,
    #[arg(value_enum)]
    what: ExportKind,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    Cliques,
    Triangles,
    Channel,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(value_enum)]
    kind: FixtureKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Channel noise level.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Channel sample count.
    #[arg(long, default_value_t = 2000)]
    rows: usize,
    /// Channel feature dimension.
    #[arg(long, default_value_t = 4)]
    dim: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a TrainConfig,
    config_hash: String,
    data: &'a Path,
    out: &'a Path,
    started_at_unix: u64,
    build: &'a str,
    num_threads: Option<String>,
}

#[derive(Serialize)]
struct ReportEnvelope<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    split_seed: u64,
    split_overridden: bool,
    config_hash: &'a str,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        }
    }
    std::fs::write(path, content).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,total,cls,pos,neg,mim,skipped_neutrals,auc,f1\r\n");
    for r in history {
        let auc = r.auc.map(|v| v.to_string()).unwrap_or_default();
        let f1 = r.f1.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}\r",
            r.epoch, r.lr, r.total, r.cls, r.pos, r.neg, r.mim, r.skipped_neutrals, auc, f1
        );
    }
    out
}

fn attention_csv(rows: &[AttentionRow]) -> String {
    let mut out = String::from(
        "layer,branch,sign_of_neighbor,src,dst,weight,theory_label,theory_label_alt\r\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}\r",
            r.layer, r.branch, r.sign_of_neighbor, r.src, r.dst, r.weight, r.theory_label,
            r.theory_label_alt
        );
    }
    out
}

fn load_data(path: &Path) -> Result<SignedGraph> {
    load_edge_list(path)
}

fn checkpoint_split(ck: &Checkpoint, graph: &SignedGraph, seed_override: Option<u64>) -> Result<SplitPlan> {
    let seed = seed_override.unwrap_or(ck.config.seed);
    split(graph, ck.config.split_fraction, seed)
}

fn verify_checkpoint(ck: &Checkpoint) -> Result<()> {
    let expected = config_hash(&ck.config);
    if ck.config_hash != expected {
        return Err(Error::State(format!(
            "checkpoint hash {} does not match its config (expected {expected})",
            ck.config_hash
        )));
    }
    Ok(())
}

fn eval_params_of(ck: &Checkpoint) -> &ModelParams {
    ck.best_params.as_ref().unwrap_or(&ck.params)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.build()?;
    let graph = load_data(&args.data)?;
    let plan = split(&graph, cfg.split_fraction, cfg.seed)?;
    let hash = config_hash(&cfg);

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    let manifest = Manifest {
        command: "train",
        config: &cfg,
        config_hash: hash.clone(),
        data: &args.data,
        out: &args.out,
        started_at_unix: now_unix(),
        build: env!("BUILD_GIT_DESCRIBE"),
        num_threads: std::env::var("SIHG_NUM_THREADS").ok(),
    };
    write_file(&args.out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;

    let abort = args.out.join("abort_checkpoint.json");
    let out = train_with(&graph, &plan, &cfg, None, Some(&abort), None)?;

    out.checkpoint.save(&args.out.join("checkpoint.json"))?;
    write_file(&args.out.join("metrics.csv"), &metrics_csv(&out.checkpoint.history))?;
    let envelope = ReportEnvelope {
        report: &out.report,
        split_seed: plan.seed,
        split_overridden: false,
        config_hash: &hash,
    };
    let report_json = serde_json::to_string_pretty(&envelope)?;
    write_file(&args.out.join("eval_report.json"), &report_json)?;
    write_file(&args.out.join("attention.csv"), &attention_csv(&out.attention))?;
    println!("{report_json}");
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    verify_checkpoint(&ck)?;
    let graph = load_data(&args.data)?;
    let plan = checkpoint_split(&ck, &graph, args.split_seed)?;
    let report = evaluate_params(&graph, &plan, &ck.config, eval_params_of(&ck))?;
    let envelope = ReportEnvelope {
        report: &report,
        split_seed: plan.seed,
        split_overridden: args.split_seed.is_some(),
        config_hash: &ck.config_hash,
    };
    let text = serde_json::to_string_pretty(&envelope)?;
    if let Some(path) = &args.out {
        write_file(path, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    verify_checkpoint(&ck)?;
    let graph = load_data(&args.data)?;
    let plan = checkpoint_split(&ck, &graph, None)?;
    let params = eval_params_of(&ck);

    let train_idx = plan.train_edge_indices(graph.edges.len());
    let lists = graph.neighbor_view(&train_idx);
    let edges = EdgeSets::from_lists(graph.num_nodes, &lists);
    let mut t = Tape::new();
    let pv = params.leaf_into(&mut t);
    let out = forward_opts(&mut t, &pv, &edges, ck.config.geometry(), ck.config.uniform_attention);

    match args.what {
        ExportKind::Embeddings => {
            let z = t.value(out.z_tangent);
            let mut text = String::new();
            let header: Vec<String> = (0..z.ncols()).map(|c| format!("t{c}")).collect();
            let _ = writeln!(text, "node,{}\r", header.join(","));
            for i in 0..z.nrows() {
                let row: Vec<String> = (0..z.ncols()).map(|c| z[(i, c)].to_string()).collect();
                let _ = writeln!(text, "{i},{}\r", row.join(","));
            }
            write_file(&args.out, &text)?;
        }
        ExportKind::Attention => {
            let rows = attention_rows(&t, &out);
            write_file(&args.out, &attention_csv(&rows))?;
        }
    }
    Ok(())
}

fn cmd_fixture(args: &FixtureArgs) -> Result<()> {
    let text = match args.kind {
        FixtureKind::Cliques => fixtures::cliques().to_edge_list_string(),
        FixtureKind::Triangles => fixtures::triangles().to_edge_list_string(),
        FixtureKind::Channel => {
            let (feats, signs) = fixtures::channel(args.rows, args.dim, args.noise, args.seed);
            let mut out = String::new();
            for r in 0..feats.nrows() {
                let row: Vec<String> = (0..feats.ncols()).map(|c| feats[(r, c)].to_string()).collect();
                let _ = writeln!(out, "{},{}", row.join(","), signs[(r, 0)]);
            }
            out
        }
    };
    write_file(&args.out, &text)
}

#[derive(Serialize)]
struct ErrorEnvelope {
    error: String,
    message: String,
    exit_code: i32,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Export(a) => cmd_export(a),
        Cmd::Fixture(a) => cmd_fixture(a),
    };
    if let Err(e) = result {
        let code = e.exit_code();
        let envelope = ErrorEnvelope {
            error: e.kind_name().to_string(),
            message: e.to_string(),
            exit_code: code,
        };
        eprintln!("{}", serde_json::to_string(&envelope).unwrap_or_else(|_| e.to_string()));
        std::process::exit(code);
    }
}
