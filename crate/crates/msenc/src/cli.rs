//! `msenc` subcommands.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use msenc_core::analysis::{cluster_pooling_maps, count_params, ArchConfig, GmmOptions, ParamReport};
use msenc_core::data::{split_samples, SplitLabel, DEFAULT_SPLIT_RATIOS};
use msenc_core::metrics;
use msenc_core::pca::{fit_pca, PcaMethod};
use msenc_core::synth::{synthesize, SynthSpec};
use msenc_core::train::{predict_indices, train, MetricsRecord};
use msenc_core::{rng_from_seed, EncodingHead, LayerShape};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::checkpoint::{load_embedding, load_head, save_embedding, save_head};
use crate::config::{LossMaskSetting, TrainSettings};
use crate::container::{self, ArrayEntry, Dtype, CONTAINER_VERSION};
use crate::dataset::{load_dataset, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::report::write_report;

pub const CONFIG_ECHO: &str = "config.json";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const THREADS_ENV: &str = "MSENC_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "msenc",
    version,
    about = "Multi-subject linear encoding head: data, training, evaluation"
)]
pub struct Cli {
    /// Worker threads; 1 gives the deterministic single-threaded mode.
    /// Falls back to MSENC_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Write a synthetic dataset generated by a planted head.
    Synth(SynthArgs),
    /// Fit the PCA activity embedding on the train split.
    FitPca(FitPcaArgs),
    /// Train a head.
    Train(TrainArgs),
    /// Score a checkpoint and write an R² report.
    Eval(EvalArgs),
    /// Write predictions for a split.
    Predict(PredictArgs),
    /// Print parameter counts for an architecture.
    Params(ParamsArgs),
    /// Cluster learned spatial pooling maps and export exemplars.
    ClusterMaps(ClusterArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub num_subjects: usize,
    #[arg(long, default_value_t = 4096)]
    pub num_samples: usize,
    /// Comma-separated `HxWxC` list.
    #[arg(long, default_value = "4x4x16,4x4x16")]
    pub layers: String,
    #[arg(long, default_value_t = 32)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub pca_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub activity_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0.5)]
    pub subject_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mask_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Auto,
    Covariance,
    Gram,
}

#[derive(Debug, Args, Serialize)]
pub struct FitPcaArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to `<data>/pca`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub components: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding checkpoint; defaults to `<data>/pca`.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    /// Head checkpoint to start from instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// phase1, phase2, or phase1-desk.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file of settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub loss_mask: Option<LossMaskArg>,
    /// Apply weight decay to batch-norm gain and bias too.
    #[arg(long)]
    pub decay_norm: bool,
    /// Train only the subject maps.
    #[arg(long)]
    pub freeze_shared: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossMaskArg {
    None,
    SubjectValid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn indices(self, data: &Dataset, seed: u64) -> Result<Vec<usize>> {
        let label = match self {
            SplitArg::All => return Ok((0..data.samples.len()).collect()),
            SplitArg::Train => SplitLabel::Train,
            SplitArg::Val => SplitLabel::Val,
            SplitArg::Test => SplitLabel::Test,
        };
        Ok(split_of(data, seed)?.indices(label))
    }

    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
            SplitArg::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectArg {
    /// Each sample's own subject path.
    Auto,
    /// Shared path only.
    Group,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_enum, default_value_t = SubjectArg::Auto)]
    pub subject: SubjectArg,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_enum, default_value_t = SubjectArg::Auto)]
    pub subject: SubjectArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ParamsArgs {
    /// Only base-arch is defined.
    #[arg(long, default_value = "base-arch")]
    pub preset: String,
    #[arg(long, default_value_t = 39_548)]
    pub activity_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub num_subjects: usize,
    /// Comma-separated `HxWxC` list replacing the preset layers.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub pca_dim: Option<usize>,
    /// Also write `params_report.json` and the config echo here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cluster maps as stored instead of scaling each to unit norm.
    #[arg(long)]
    pub raw: bool,
    /// Also export this many principal-axis maps of the embedding.
    #[arg(long, default_value_t = 0)]
    pub pc_maps: usize,
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code. Failures print one `error kind=... code=...` line on
/// stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let flat = e
                .to_string()
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("{}", Error::Usage(flat).report_line());
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.report_line());
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{THREADS_ENV}={s:?} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::FitPca(a) => cmd_fit_pca(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Params(a) => cmd_params(&a),
        Command::ClusterMaps(a) => cmd_cluster(&a),
    })
}

fn echo(dir: &Path, command: &str, args: &impl Serialize) -> Result<()> {
    let mut value = serde_json::to_value(args).map_err(Error::json(dir.join(CONFIG_ECHO)))?;
    if let Value::Object(m) = &mut value {
        m.insert("command".into(), json!(command));
    }
    container::write_json(&dir.join(CONFIG_ECHO), &value)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn parse_layers(spec: &str) -> Result<Vec<LayerShape>> {
    spec.split(',')
        .map(|part| {
            let dims: Vec<usize> = part
                .trim()
                .split('x')
                .map(|d| d.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Usage(format!("layer {part:?} is not HxWxC")))?;
            match dims[..] {
                [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(LayerShape::new(h, w, c)),
                _ => Err(Error::Usage(format!("layer {part:?} is not HxWxC with positive sizes"))),
            }
        })
        .collect()
}

fn split_of(data: &Dataset, seed: u64) -> Result<msenc_core::data::SplitAssignment> {
    let s = &data.samples;
    Ok(split_samples(
        &s.subjects,
        &data.keys(),
        s.num_subjects,
        DEFAULT_SPLIT_RATIOS,
        seed,
    )?)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_subjects: a.num_subjects,
        layer_shapes: parse_layers(&a.layers)?,
        latent_dim: a.latent_dim,
        pca_dim: a.pca_dim,
        activity_dim: a.activity_dim,
        num_samples: a.num_samples,
        noise_std: a.noise_std,
        subject_scale: a.subject_scale,
        mask_fraction: a.mask_fraction,
        seed: a.seed,
    };
    let syn = synthesize(&spec).map_err(|e| match e {
        msenc_core::Error::InvalidConfig(m) => Error::Usage(m),
        other => Error::Core(other),
    })?;
    create_dir(&a.out)?;
    write_dataset(&a.out, &syn.data, Some(&syn.noise_ceiling), &syn.roi_masks, None)?;
    let planted = a.out.join("planted");
    create_dir(&planted)?;
    save_head(
        &planted,
        &syn.planted,
        BTreeMap::from([("source".into(), json!("planted"))]),
    )?;
    echo(&a.out, "synth", a)
}

fn cmd_fit_pca(a: &FitPcaArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let split = split_of(&data, a.split_seed)?;
    let train_idx = split.indices(SplitLabel::Train);
    let v = data.samples.activity_dim;
    let method = match a.method {
        MethodArg::Auto => PcaMethod::Auto,
        MethodArg::Covariance => PcaMethod::Covariance,
        MethodArg::Gram => PcaMethod::Gram,
    };
    let emb = fit_pca(
        &data.samples.targets(&train_idx),
        train_idx.len(),
        v,
        a.components,
        method,
    )
    .map_err(|e| match e {
        msenc_core::Error::InvalidConfig(m) => Error::Usage(m),
        other => Error::Core(other),
    })?;
    if emb.rank < emb.components {
        eprintln!(
            "warning kind=RankDeficient rank={} components={} note=\"trailing axes are zero\"",
            emb.rank, emb.components
        );
    }
    let out = a.out.clone().unwrap_or_else(|| a.data.join("pca"));
    create_dir(&out)?;
    let notes = BTreeMap::from([
        ("split_seed".into(), json!(a.split_seed)),
        ("train_samples".into(), json!(train_idx.len())),
    ]);
    save_embedding(&out, &emb, notes)?;
    echo(&out, "fit-pca", a)
}

fn train_overrides(a: &TrainArgs) -> Map<String, Value> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.into(), v);
        }
    };
    put("preset", a.preset.as_ref().map(|p| json!(p)));
    put("data", a.data.as_ref().map(|p| json!(p)));
    put("pca", a.pca.as_ref().map(|p| json!(p)));
    put("init", a.init.as_ref().map(|p| json!(p)));
    put("batch_size", a.batch_size.map(|x| json!(x)));
    put("peak_lr", a.lr.map(|x| json!(x)));
    put("min_lr", a.min_lr.map(|x| json!(x)));
    put("weight_decay", a.weight_decay.map(|x| json!(x)));
    put("feature_dropout", a.dropout.map(|x| json!(x)));
    put("total_steps", a.steps.map(|x| json!(x)));
    put("warmup_steps", a.warmup.map(|x| json!(x)));
    put("eval_interval", a.eval_interval.map(|x| json!(x)));
    put("seed", a.seed.map(|x| json!(x)));
    put("init_seed", a.init_seed.map(|x| json!(x)));
    put("split_seed", a.split_seed.map(|x| json!(x)));
    put("latent_dim", a.latent_dim.map(|x| json!(x)));
    put(
        "loss_mask",
        a.loss_mask.map(|x| match x {
            LossMaskArg::None => json!("none"),
            LossMaskArg::SubjectValid => json!("subject_valid"),
        }),
    );
    put("decay_norm", a.decay_norm.then_some(json!(true)));
    put("freeze_shared", a.freeze_shared.then_some(json!(true)));
    m
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Serialize)]
struct MetricsLine {
    step: usize,
    lr: f64,
    train_mse: f64,
    val_mse: Option<f64>,
    val_median_r2: Option<f64>,
}

fn record_line(r: &MetricsRecord) -> String {
    let line = MetricsLine {
        step: r.step,
        lr: r.lr,
        train_mse: r.train_mse,
        val_mse: r.val_mse,
        val_median_r2: r.val_median_r2,
    };
    serde_json::to_string(&line).expect("plain numbers serialize")
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let settings = TrainSettings::resolve(a.config.as_deref(), train_overrides(a))?;
    let cfg = settings.train_config()?;
    let data_dir = settings
        .data
        .clone()
        .ok_or_else(|| Error::Usage("train needs --data (or \"data\" in --config)".into()))?;
    let data = load_dataset(&data_dir)?;
    let pca_dir = settings.pca.clone().unwrap_or_else(|| data_dir.join("pca"));
    let embedding = load_embedding(&pca_dir)?;
    let samples = &data.samples;
    if embedding.dim != samples.activity_dim {
        return Err(Error::Core(msenc_core::Error::ShapeMismatch {
            what: "embedding activity dimension",
            expected: samples.activity_dim,
            actual: embedding.dim,
        }));
    }
    let mut head = match &settings.init {
        Some(dir) => {
            let mut h = load_head(dir)?;
            h.embedding = embedding;
            h
        }
        None => EncodingHead::init(
            &samples.layer_shapes,
            settings.latent_dim,
            samples.num_subjects,
            embedding,
            &mut rng_from_seed(settings.init_seed),
        )?,
    };
    while head.num_subjects() < samples.num_subjects {
        head.encoder.add_subject();
    }
    if settings.loss_mask == LossMaskSetting::SubjectValid {
        eprintln!("note kind=LossMask value=subject_valid");
    }
    let split = split_of(&data, settings.split_seed)?;

    create_dir(&a.out)?;
    container::write_json(&a.out.join(CONFIG_ECHO), &settings)?;
    let log_path = a.out.join(METRICS_LOG);
    let mut log = String::new();
    let mut write_err = None;
    let outcome = train(&cfg, head, samples, &split, |r| {
        log.push_str(&record_line(r));
        log.push('\n');
        if write_err.is_none() {
            write_err = container::write_atomic(&log_path, log.as_bytes()).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let notes = |which: &str| {
        BTreeMap::from([
            ("checkpoint".into(), json!(which)),
            ("preset".into(), json!(settings.preset)),
            ("best_step".into(), json!(outcome.best_step)),
            ("loss_mask".into(), json!(settings.loss_mask)),
            ("decay_norm".into(), json!(settings.decay_norm)),
            ("split_seed".into(), json!(settings.split_seed)),
        ])
    };
    for (name, h) in [("best", &outcome.best), ("last", &outcome.last)] {
        let dir = a.out.join(name);
        create_dir(&dir)?;
        save_head(&dir, h, notes(name))?;
    }
    container::write_json(
        &a.out.join("summary.json"),
        &json!({
            "best_step": outcome.best_step,
            "best_val_median_r2": outcome.best_val_r2,
            "steps": cfg.total_steps,
        }),
    )
}

/// Evaluation-mode predictions over `indices`, chunks spread over the pool.
fn predict_parallel(head: &EncodingHead, data: &Dataset, indices: &[usize], group: bool) -> Result<Vec<f64>> {
    let parts = indices
        .par_chunks(256)
        .map(|c| predict_indices(head, &data.samples, c, group, 256))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(parts.concat())
}

fn load_checkpoint_for(data: &Dataset, dir: &Path) -> Result<EncodingHead> {
    let head = load_head(dir)?;
    let s = &data.samples;
    if head.layer_shapes() != s.layer_shapes || head.activity_dim() != s.activity_dim {
        return Err(Error::Core(msenc_core::Error::InvalidConfig(
            "checkpoint and dataset dimensions differ".into(),
        )));
    }
    if head.num_subjects() < s.num_subjects {
        return Err(Error::Core(msenc_core::Error::SubjectOutOfRange {
            subject: s.num_subjects - 1,
            num_subjects: head.num_subjects(),
        }));
    }
    Ok(head)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let head = load_checkpoint_for(&data, &a.checkpoint)?;
    let indices = a.split.indices(&data, a.split_seed)?;
    let group = a.subject == SubjectArg::Group;
    let pred = predict_parallel(&head, &data, &indices, group)?;
    let s = &data.samples;
    let subjects: Vec<usize> = indices.iter().map(|&i| s.subjects[i]).collect();
    let report = metrics::build_report(
        &pred,
        &s.targets(&indices),
        &subjects,
        s.num_subjects,
        s.activity_dim,
        data.noise_ceiling.as_deref(),
        &data.roi_masks,
    )?;
    create_dir(&a.out)?;
    let route = if group { "group" } else { "subject" };
    let json = write_report(&a.out, &report, a.split.name(), route)?;
    echo(&a.out, "eval", a)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "split={} route={} samples={} median_r2={}",
        json.split,
        json.route,
        json.num_samples,
        json.group_median.map_or("undefined".into(), |m| format!("{m:.6}"))
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let head = load_checkpoint_for(&data, &a.checkpoint)?;
    let indices = a.split.indices(&data, a.split_seed)?;
    let group = a.subject == SubjectArg::Group;
    let pred = predict_parallel(&head, &data, &indices, group)?;
    create_dir(&a.out)?;
    let entry = ArrayEntry::new(
        "predictions",
        "predictions.f32",
        vec![indices.len(), data.samples.activity_dim],
        Dtype::F32,
    );
    container::write_atomic(&a.out.join(&entry.path), &container::encode_f32(&pred))?;
    container::write_json(
        &a.out.join("predictions.json"),
        &json!({
            "version": CONTAINER_VERSION,
            "split": a.split.name(),
            "route": if group { "group" } else { "subject" },
            "sample_indices": indices,
            "arrays": [entry],
        }),
    )?;
    echo(&a.out, "predict", a)
}

pub fn params_table(r: &ParamReport) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    for (l, n) in r.projection_per_layer.iter().enumerate() {
        rows.push((format!("projection layer {l}"), n.to_string()));
    }
    rows.push(("batch norm".into(), r.batch_norm.to_string()));
    rows.push(("shared encoder".into(), r.shared.to_string()));
    rows.push(("subject encoder (each)".into(), r.subject_each.to_string()));
    rows.push(("subject encoders".into(), r.subject_total.to_string()));
    rows.push(("trainable".into(), r.trainable_total.to_string()));
    rows.push(("frozen PCA embedding".into(), r.frozen_total.to_string()));
    rows.push(("total".into(), r.grand_total.to_string()));
    rows.push(("naive dense".into(), r.naive_dense_total.to_string()));
    rows.push(("dense projection".into(), r.dense_projection_total.to_string()));
    rows.push((
        "factorization savings".into(),
        format!("{:.1}x", r.factorization_savings_ratio),
    ));
    rows.push((
        "naive dense / trainable".into(),
        format!("{:.1}x", r.naive_savings_ratio),
    ));
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v:>14}\n")).collect()
}

pub fn params_json(r: &ParamReport) -> Value {
    json!({
        "projection_per_layer": r.projection_per_layer,
        "batch_norm": r.batch_norm,
        "shared": r.shared,
        "subject_each": r.subject_each,
        "subject_total": r.subject_total,
        "pca": r.pca,
        "trainable_total": r.trainable_total,
        "frozen_total": r.frozen_total,
        "grand_total": r.grand_total,
        "naive_dense_total": r.naive_dense_total,
        "dense_projection_total": r.dense_projection_total,
        "factorization_savings_ratio": r.factorization_savings_ratio,
        "naive_savings_ratio": r.naive_savings_ratio,
    })
}

fn cmd_params(a: &ParamsArgs) -> Result<()> {
    if a.preset != "base-arch" {
        return Err(Error::Usage(format!(
            "unknown architecture preset {:?} (expected base-arch)",
            a.preset
        )));
    }
    let mut arch = ArchConfig::base();
    if let Some(l) = &a.layers {
        arch.layer_shapes = parse_layers(l)?;
    }
    if let Some(d) = a.latent_dim {
        arch.latent_dim = d;
    }
    if let Some(k) = a.pca_dim {
        arch.pca_dim = k;
    }
    let report = count_params(&arch, a.activity_dim, a.num_subjects);
    let json = params_json(&report);
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", params_table(&report));
    let _ = writeln!(stdout, "{json}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        container::write_json(&out.join("params_report.json"), &json)?;
        echo(out, "params", a)?;
    }
    Ok(())
}

fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let head = load_head(&a.checkpoint)?;
    create_dir(&a.out)?;
    let d = head.latent_dim();
    let mut layers = Vec::new();
    let mut arrays = Vec::new();
    for (l, p) in head.projections.iter().enumerate() {
        let positions = p.shape.positions();
        let mut maps = p.pooling_maps();
        if !a.raw {
            for row in maps.chunks_exact_mut(positions) {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
            }
        }
        let opts = GmmOptions {
            k: a.k,
            seed: a.seed,
            ..GmmOptions::default()
        };
        let fit = cluster_pooling_maps(&maps, d, positions, &opts)?;
        let stored = p.pooling_maps();
        let exemplars: Vec<f64> = fit
            .exemplars
            .iter()
            .flat_map(|&r| stored[r * positions..(r + 1) * positions].to_vec())
            .collect();
        let entry = ArrayEntry::new(
            &format!("exemplars.{l}"),
            &format!("exemplars_{l}.f32"),
            vec![a.k, p.shape.height, p.shape.width],
            Dtype::F32,
        );
        container::write_atomic(&a.out.join(&entry.path), &container::encode_f32(&exemplars))?;
        arrays.push(entry);
        layers.push(json!({
            "layer": l,
            "exemplar_latent_units": fit.exemplars,
            "weights": fit.model.weights,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "reinitializations": fit.reinitializations,
            "log_likelihood": fit.model.log_likelihood_trace.last(),
        }));
    }
    if a.pc_maps > 0 {
        let maps = head.embedding.export_pc_maps(a.pc_maps)?;
        let entry = ArrayEntry::new(
            "pc_maps",
            "pc_maps.f32",
            vec![a.pc_maps, head.activity_dim()],
            Dtype::F32,
        );
        container::write_atomic(&a.out.join(&entry.path), &container::encode_f32(&maps))?;
        arrays.push(entry);
    }
    container::write_json(
        &a.out.join("clusters.json"),
        &json!({
            "version": CONTAINER_VERSION,
            "k": a.k,
            "normalized": !a.raw,
            "layers": layers,
            "arrays": arrays,
        }),
    )?;
    echo(&a.out, "cluster-maps", a)
}
