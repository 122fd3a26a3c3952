//! `stgf` — the forecasting pipeline as explicit stages with file handoffs:
//! `embed` → `learn-graph` → `train` → `evaluate`, plus `ablate` for the
//! variant comparison. Every stage is reproducible from its inputs and the
//! seed; all randomness flows from one seed through named substreams, so no
//! stage's consumption can shift another's.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use stgf_core::data::{make_windows, Manifest, SpeedDataset, Split};
use stgf_core::error::{Error, Result};
use stgf_core::eval::{
    evaluate, historical_average, write_metrics_csv, write_plotdata_csv, ForecastReport,
};
use stgf_core::graphcore::Adjacency;
use stgf_core::graphlearn::{
    calibrate_beta, learn_graph_with_stats, pairwise_distances, train_gvae_with_history,
    weight_density, EmbeddingSet, GraphLearnConfig, GvaeConfig,
};
use stgf_core::model::{Checkpoint, ModelConfig, ResetGateActivation};
use stgf_core::train::{train, GraphSource, TrainConfig, TrainOptions};
use stgf_core::util::{configure_threads_from_env, stream_rng, streams};

/// Master seed used when neither the flag nor the config file sets one.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "stgf",
    version,
    about = "Traffic forecasting on road graphs: graph learning, training, evaluation",
    after_help = "Exit codes: 0 success, 2 usage/config error, 3 data/format error, \
                  4 numerical/convergence error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn node embeddings for the observed road network
    Embed(EmbedCmd),
    /// Learn a weighted graph from node embeddings
    LearnGraph(LearnGraphCmd),
    /// Train the forecaster and write a checkpoint
    Train(TrainCmd),
    /// Evaluate a checkpoint on the held-out split
    Evaluate(EvaluateCmd),
    /// Train ablation variants with a shared seed and compare them
    Ablate(AblateCmd),
}

/// Flags shared by every subcommand. Each falls back to the config file
/// (`--config`), then to a built-in default.
#[derive(Args, Debug)]
struct CommonArgs {
    /// Dataset manifest (TOML with name, interval, speed/adjacency paths)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (created if missing; default ".")
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for every randomized stage
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file presetting any flag; explicit flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Autoencoder training epochs
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct LearnGraphCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Embeddings CSV produced by `stgf embed`
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Log-barrier weight of the graph program
    #[arg(long)]
    alpha: Option<f64>,
    /// Density weight of the graph program, or "auto" to calibrate against
    /// the observed topology's density
    #[arg(long)]
    beta: Option<String>,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Graph to propagate on: a learned-graph CSV, or "obs" for the raw
    /// observed topology; omit to learn the graph as part of this run
    #[arg(long)]
    graph: Option<String>,
    /// Hidden units per node
    #[arg(long)]
    hidden: Option<usize>,
    /// Dropout probability for operator sampling
    #[arg(long)]
    dropout: Option<f64>,
    /// Reset-gate activation: sigmoid or identity
    #[arg(long, value_name = "ACT")]
    reset_act: Option<String>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Windows per optimizer step
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    lr0: Option<f64>,
    /// Log-barrier weight when the graph is learned in this run
    #[arg(long)]
    alpha: Option<f64>,
    /// Density weight ("auto" to calibrate) when the graph is learned here
    #[arg(long)]
    beta: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint written by `stgf train`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated forecast horizons in minutes
    #[arg(long)]
    horizons: Option<String>,
    /// Baseline to evaluate alongside the model ("ha")
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Args, Debug)]
struct AblateCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated subset of {bc, bd, full}
    #[arg(long)]
    variants: Option<String>,
    /// Graph to propagate on (see `train`); omit to learn it once here
    #[arg(long)]
    graph: Option<String>,
    /// Hidden units per node
    #[arg(long)]
    hidden: Option<usize>,
    /// Dropout probability used by the "full" variant
    #[arg(long)]
    dropout: Option<f64>,
    /// Training epochs per variant
    #[arg(long)]
    epochs: Option<usize>,
    /// Windows per optimizer step
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    lr0: Option<f64>,
    /// Log-barrier weight when the graph is learned in this run
    #[arg(long)]
    alpha: Option<f64>,
    /// Density weight ("auto" to calibrate) when the graph is learned here
    #[arg(long)]
    beta: Option<String>,
}

/// Any flag may be preset from a TOML file; unknown keys are rejected so
/// typos surface instead of being silently ignored.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    graph: Option<String>,
    embeddings: Option<PathBuf>,
    alpha: Option<f64>,
    beta: Option<toml::Value>,
    hidden: Option<usize>,
    dropout: Option<f64>,
    reset_act: Option<String>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr0: Option<f64>,
    seed: Option<u64>,
    horizons: Option<String>,
    out: Option<PathBuf>,
    baseline: Option<String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&raw)
            .map_err(|e| Error::config(format!("{}: invalid config: {e}", path.display())))
    }

    fn beta_text(&self) -> Result<Option<String>> {
        match &self.beta {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(toml::Value::Float(f)) => Ok(Some(f.to_string())),
            Some(toml::Value::Integer(i)) => Ok(Some(i.to_string())),
            Some(other) => Err(Error::config(format!(
                "config beta must be a number or \"auto\", got {other}"
            ))),
        }
    }
}

/// Density weight request: fixed value or calibrated from observed density.
#[derive(Debug, Clone, Copy, PartialEq)]
enum BetaChoice {
    Auto,
    Fixed(f64),
}

impl FromStr for BetaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BetaChoice::Auto);
        }
        s.parse::<f64>()
            .map(BetaChoice::Fixed)
            .map_err(|_| Error::config(format!("beta must be a number or \"auto\", got {s:?}")))
    }
}

fn main() -> ExitCode {
    configure_threads_from_env();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Embed(cmd) => run_embed(cmd),
        Command::LearnGraph(cmd) => run_learn_graph(cmd),
        Command::Train(cmd) => run_train(cmd),
        Command::Evaluate(cmd) => run_evaluate(cmd),
        Command::Ablate(cmd) => run_ablate(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Shared preamble: config file, manifest, dataset+adjacency with an
/// n-consistency check, resolved output directory and seed.
struct Context {
    file: FileConfig,
    manifest: Manifest,
    dataset: SpeedDataset,
    obs: Adjacency,
    out: PathBuf,
    seed: u64,
}

impl Context {
    fn new(common: &CommonArgs) -> Result<Self> {
        let file = FileConfig::load(common.config.as_deref())?;
        let manifest_path = common
            .manifest
            .clone()
            .or_else(|| file.manifest.clone())
            .ok_or_else(|| Error::config("missing --manifest (or manifest= in --config)"))?;
        let manifest = Manifest::load(&manifest_path)?;
        let dataset = manifest.load_dataset()?;
        let obs = manifest.load_adjacency()?;
        if obs.n() != dataset.n() {
            return Err(Error::config(format!(
                "adjacency has {} nodes but the speed series has {} roads",
                obs.n(),
                dataset.n()
            )));
        }
        let out = common
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let seed = common.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        Ok(Context {
            file,
            manifest,
            dataset,
            obs,
            out,
            seed,
        })
    }

    /// (lr0, dropout) defaults for this dataset family: 5-minute loop
    /// detector data trains with a smaller rate and heavier dropout.
    fn dataset_defaults(&self) -> (f64, f64) {
        if self.dataset.name.to_ascii_lowercase().starts_with("los") {
            (1e-3, 0.5)
        } else {
            (1e-2, 0.1)
        }
    }
}

#[derive(serde::Serialize)]
struct EmbedMeta {
    seed: u64,
    epochs: usize,
    latent_dim: usize,
    final_loss: f64,
    loss_curve: Vec<f64>,
}

fn run_embed(cmd: EmbedCmd) -> Result<()> {
    let ctx = Context::new(&cmd.common)?;
    let mut gvae_cfg = GvaeConfig::default();
    gvae_cfg.epochs = cmd.epochs.or(ctx.file.epochs).unwrap_or(gvae_cfg.epochs);

    let mut rng = stream_rng(ctx.seed, streams::GVAE);
    let (emb, losses) = train_gvae_with_history(&ctx.obs, &gvae_cfg, &mut rng)?;

    let csv = ctx.out.join("embeddings.csv");
    emb.to_csv(&csv)?;
    let meta = EmbedMeta {
        seed: ctx.seed,
        epochs: gvae_cfg.epochs,
        latent_dim: gvae_cfg.latent_dim,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        loss_curve: losses,
    };
    write_toml(&ctx.out.join("embeddings.meta.toml"), &meta)?;
    println!(
        "wrote {}x{} embeddings for '{}' to {}",
        emb.n(),
        emb.dim(),
        ctx.manifest.name,
        csv.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct GraphMeta {
    alpha: f64,
    beta: f64,
    beta_calibrated: bool,
    iterations: usize,
    objective: f64,
    density: f64,
}

fn run_learn_graph(cmd: LearnGraphCmd) -> Result<()> {
    let ctx = Context::new(&cmd.common)?;
    let emb_path = cmd
        .embeddings
        .or_else(|| ctx.file.embeddings.clone())
        .ok_or_else(|| Error::config("missing --embeddings (run `stgf embed` first)"))?;
    let emb = EmbeddingSet::from_csv(&emb_path)?;
    if emb.n() != ctx.obs.n() {
        return Err(Error::config(format!(
            "embeddings cover {} nodes but the adjacency has {}",
            emb.n(),
            ctx.obs.n()
        )));
    }

    let defaults = GraphLearnConfig::default();
    let alpha = cmd.alpha.or(ctx.file.alpha).unwrap_or(defaults.alpha);
    let beta_text = cmd.beta.or(ctx.file.beta_text()?);
    let beta = match &beta_text {
        Some(s) => BetaChoice::from_str(s)?,
        None => BetaChoice::Auto,
    };

    let z = pairwise_distances(&emb);
    let (beta_value, calibrated) = match beta {
        BetaChoice::Fixed(b) => (b, false),
        BetaChoice::Auto => {
            let target = weight_density(&ctx.obs);
            (calibrate_beta(&z, alpha, target)?, true)
        }
    };
    let cfg = GraphLearnConfig {
        alpha,
        beta: beta_value,
        ..defaults
    };
    let (learned, stats) = learn_graph_with_stats(&z, &cfg)?;

    let csv = ctx.out.join("learned_graph.csv");
    learned.to_csv(&csv)?;
    let meta = GraphMeta {
        alpha,
        beta: beta_value,
        beta_calibrated: calibrated,
        iterations: stats.iterations,
        objective: stats.objective,
        density: stats.density,
    };
    write_toml(&ctx.out.join("learned_graph.meta.toml"), &meta)?;
    println!(
        "learned {}-node graph (beta {:.6e}{}, density {:.3}, {} iterations) -> {}",
        learned.n(),
        beta_value,
        if calibrated { ", calibrated" } else { "" },
        stats.density,
        stats.iterations,
        csv.display()
    );
    Ok(())
}

/// Materializes the propagation graph for `train`/`ablate`: a learned-graph
/// CSV, the observed topology, or a fresh learn-graph stage (embedding +
/// convex program) driven by the same seed streams as `stgf embed`.
fn resolve_graph(
    graph_flag: Option<&str>,
    ctx: &Context,
    alpha: Option<f64>,
    beta: Option<String>,
) -> Result<Adjacency> {
    match graph_flag {
        Some("obs") => Ok(ctx.obs.clone()),
        Some(path) => {
            let a = Adjacency::from_csv(Path::new(path))?;
            if a.n() != ctx.dataset.n() {
                return Err(Error::config(format!(
                    "graph has {} nodes but the dataset has {} roads",
                    a.n(),
                    ctx.dataset.n()
                )));
            }
            Ok(a)
        }
        None => {
            let mut rng = stream_rng(ctx.seed, streams::GVAE);
            let emb = stgf_core::graphlearn::train_gvae(&ctx.obs, &GvaeConfig::default(), &mut rng)?;
            let z = pairwise_distances(&emb);
            let defaults = GraphLearnConfig::default();
            let alpha = alpha.unwrap_or(defaults.alpha);
            let beta_value = match beta.as_deref().map(BetaChoice::from_str).transpose()? {
                Some(BetaChoice::Fixed(b)) => b,
                Some(BetaChoice::Auto) | None => {
                    calibrate_beta(&z, alpha, weight_density(&ctx.obs))?
                }
            };
            let cfg = GraphLearnConfig {
                alpha,
                beta: beta_value,
                ..defaults
            };
            let (learned, _) = learn_graph_with_stats(&z, &cfg)?;
            Ok(learned)
        }
    }
}

/// Builds the model/train configuration pair from flags, config file, and
/// dataset-family defaults. History and training horizon both span one hour
/// of steps so a single trained model serves every reported horizon.
fn build_configs(
    ctx: &Context,
    hidden: Option<usize>,
    dropout: Option<f64>,
    reset_act: Option<String>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr0: Option<f64>,
) -> Result<(ModelConfig, TrainConfig)> {
    let (lr0_default, dropout_default) = ctx.dataset_defaults();
    let steps = ctx.dataset.steps_per_hour();
    let dropout_p = dropout.or(ctx.file.dropout).unwrap_or(dropout_default);
    let reset_text = reset_act.or_else(|| ctx.file.reset_act.clone());
    let model_cfg = ModelConfig {
        hidden: hidden.or(ctx.file.hidden).unwrap_or(64),
        dropout_p,
        reset_gate_activation: match reset_text {
            Some(s) => ResetGateActivation::from_str(&s)?,
            None => ResetGateActivation::Sigmoid,
        },
        history_steps: steps,
        horizon_steps: steps,
    };
    let train_cfg = TrainConfig {
        epochs: epochs.or(ctx.file.epochs).unwrap_or(100),
        batch_size: batch.or(ctx.file.batch).unwrap_or(32),
        lr0: lr0.or(ctx.file.lr0).unwrap_or(lr0_default),
        dropout_p,
        seed: ctx.seed,
        checkpoint_every: 25,
        ..TrainConfig::default()
    };
    model_cfg.validate()?;
    train_cfg.validate()?;
    Ok((model_cfg, train_cfg))
}

fn run_train(cmd: TrainCmd) -> Result<()> {
    let ctx = Context::new(&cmd.common)?;
    let (model_cfg, train_cfg) = build_configs(
        &ctx,
        cmd.hidden,
        cmd.dropout,
        cmd.reset_act,
        cmd.epochs,
        cmd.batch,
        cmd.lr0,
    )?;
    let graph_flag = cmd.graph.or_else(|| ctx.file.graph.clone());
    let graph = resolve_graph(graph_flag.as_deref(), &ctx, cmd.alpha, cmd.beta)?;

    let windows = make_windows(
        &ctx.dataset,
        model_cfg.history_steps,
        model_cfg.horizon_steps,
        Split::Train,
    )?;
    let opts = TrainOptions {
        freeze_phi: false,
        log_csv: Some(ctx.out.join("training_log.csv")),
        checkpoint: Some(ctx.out.join("checkpoint.json")),
    };
    let outcome = train(
        &windows,
        &ctx.obs,
        &GraphSource::Precomputed(graph),
        &model_cfg,
        &train_cfg,
        &opts,
    )?;
    let last = outcome.history.last();
    println!(
        "trained {} epochs on {} windows; final train loss {:.6}, val loss {:.6} -> {}",
        train_cfg.epochs,
        windows.len(),
        last.map_or(f64::NAN, |s| s.train_loss),
        last.map_or(f64::NAN, |s| s.val_loss),
        ctx.out.join("checkpoint.json").display()
    );
    Ok(())
}

fn parse_horizons(text: &str) -> Result<Vec<usize>> {
    let mut horizons = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let h: usize = part
            .parse()
            .map_err(|_| Error::config(format!("invalid horizon {part:?} (minutes expected)")))?;
        horizons.push(h);
    }
    if horizons.is_empty() {
        return Err(Error::config(
            "at least one forecast horizon is required".to_string(),
        ));
    }
    Ok(horizons)
}

fn run_evaluate(cmd: EvaluateCmd) -> Result<()> {
    let ctx = Context::new(&cmd.common)?;
    let ckpt_path = cmd
        .checkpoint
        .ok_or_else(|| Error::config("missing --checkpoint (run `stgf train` first)"))?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    if ckpt.params.n() != ctx.dataset.n() {
        return Err(Error::config(format!(
            "checkpoint was trained on {} nodes but the dataset has {} roads",
            ckpt.params.n(),
            ctx.dataset.n()
        )));
    }
    let horizons_text = cmd
        .horizons
        .or_else(|| ctx.file.horizons.clone())
        .unwrap_or_else(|| "15,30,45,60".to_string());
    let horizons = parse_horizons(&horizons_text)?;

    let map_adjacency = Adjacency::new(ckpt.map_adjacency.clone())?;
    let report = evaluate(&ckpt.params, &ckpt.cfg, &map_adjacency, &ctx.dataset, &horizons)?;
    write_metrics_csv(&report, &ctx.out.join("metrics.csv"))?;
    write_plotdata_csv(&report, &ctx.out.join("plotdata.csv"))?;
    print_report("model", &report);

    let baseline = cmd.baseline.or_else(|| ctx.file.baseline.clone());
    if let Some(name) = baseline {
        if !name.eq_ignore_ascii_case("ha") {
            return Err(Error::config(format!(
                "unknown baseline {name:?}; available: ha"
            )));
        }
        let ha = historical_average(&ctx.dataset, ckpt.cfg.history_steps, &horizons)?;
        write_metrics_csv(&ha, &ctx.out.join("baseline_ha.csv"))?;
        print_report("historical average", &ha);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Bc,
    Bd,
    Full,
}

impl Variant {
    fn label(self) -> &'static str {
        match self {
            Variant::Bc => "bc",
            Variant::Bd => "bd",
            Variant::Full => "full",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bc" => Ok(Variant::Bc),
            "bd" => Ok(Variant::Bd),
            "full" => Ok(Variant::Full),
            other => Err(Error::config(format!(
                "unknown ablation variant {other:?}; available: bc, bd, full"
            ))),
        }
    }
}

fn run_ablate(cmd: AblateCmd) -> Result<()> {
    let ctx = Context::new(&cmd.common)?;
    let variants_text = cmd
        .variants
        .unwrap_or_else(|| "bc,bd,full".to_string());
    let mut variants = Vec::new();
    for part in variants_text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let v = Variant::from_str(part)?;
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    if variants.is_empty() {
        return Err(Error::config("at least one ablation variant is required".to_string()));
    }

    let (model_cfg, train_cfg) = build_configs(
        &ctx,
        cmd.hidden,
        cmd.dropout,
        None,
        cmd.epochs,
        cmd.batch,
        cmd.lr0,
    )?;
    let graph_flag = cmd.graph.or_else(|| ctx.file.graph.clone());
    let graph = resolve_graph(graph_flag.as_deref(), &ctx, cmd.alpha, cmd.beta)?;
    let source = GraphSource::Precomputed(graph);
    let windows = make_windows(
        &ctx.dataset,
        model_cfg.history_steps,
        model_cfg.horizon_steps,
        Split::Train,
    )?;
    let horizon_min = 60;

    let mut columns = Vec::new();
    for v in &variants {
        // B_c freezes the graph entirely; B_d trains φ but never samples;
        // the full model trains φ under dropout.
        let mut mc = model_cfg.clone();
        let mut tc = train_cfg.clone();
        let mut opts = TrainOptions::default();
        match v {
            Variant::Bc => {
                opts.freeze_phi = true;
                mc.dropout_p = 0.0;
                tc.dropout_p = 0.0;
            }
            Variant::Bd => {
                mc.dropout_p = 0.0;
                tc.dropout_p = 0.0;
            }
            Variant::Full => {}
        }
        let outcome = train(&windows, &ctx.obs, &source, &mc, &tc, &opts)?;
        let report = evaluate(
            &outcome.params,
            &mc,
            &outcome.map_adjacency,
            &ctx.dataset,
            &[horizon_min],
        )?;
        let m = report.horizons[0].metrics;
        println!(
            "{}: rmse {:.4}, mae {:.4}, acc {:.4}, r2 {:.4}, var {:.4}",
            v.label(),
            m.rmse,
            m.mae,
            m.acc,
            m.r2,
            m.var
        );
        columns.push((v.label(), m));
    }

    let path = ctx.out.join("ablation.csv");
    let mut body = String::from("metric");
    for (label, _) in &columns {
        let _ = write!(body, ",{label}");
    }
    body.push('\n');
    let rows: [(&str, fn(&stgf_core::eval::Metrics) -> f64); 5] = [
        ("rmse", |m| m.rmse),
        ("mae", |m| m.mae),
        ("acc", |m| m.acc),
        ("r2", |m| m.r2),
        ("var", |m| m.var),
    ];
    for (name, get) in rows {
        let _ = write!(body, "{name}");
        for (_, m) in &columns {
            let _ = write!(body, ",{:.4}", get(m));
        }
        body.push('\n');
    }
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    println!("wrote {} ({} minute horizon)", path.display(), horizon_min);
    Ok(())
}

fn print_report(label: &str, report: &ForecastReport) {
    println!("{label}:");
    println!("  horizon_min    rmse     mae     acc      r2     var");
    for h in &report.horizons {
        let m = &h.metrics;
        println!(
            "  {:>11} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            h.horizon_min, m.rmse, m.mae, m.acc, m.r2, m.var
        );
    }
}

fn write_toml<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = toml::to_string_pretty(value)
        .map_err(|e| Error::config(format!("cannot encode {}: {e}", path.display())))?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
