//! The `molpeco` command line.
//!
//! Every command reads one JSON run configuration (`--config`), lets flags
//! override it, and tags what it writes with the configuration hash: JSON
//! outputs carry a `config_hash` field, CSV and split files get a
//! `<file>.meta.json` sidecar.

mod config;
mod retrieve;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::autodiff::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta};
use crate::chemio::{load_clean, stratified_split, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{featurize, featurize_all, MolPecoModel, Variant};
use crate::repr::cache::{read_cache, write_cache, CacheHeader, FeatureRecord};
use crate::repr::Normalization;
use crate::train::{evaluate, history_csv, train_loop, Metrics, TrainData};

pub use config::{Paths, RunConfig};
pub use retrieve::{cosine, embeddings_csv, read_embeddings, retrieve, Embedding};

pub const FEATURES_FILE: &str = "features.mpec";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.mpck";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

#[derive(Debug, Parser)]
#[command(name = "molpeco", version, about = "Odor descriptor prediction from 3D molecular structure")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Molecule JSONL file.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute per-molecule matrices and spectra into a cache file.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, value_parser = parse_normalization)]
        normalization: Option<Normalization>,
        #[arg(long)]
        p: Option<usize>,
    },
    /// Stratified train/validation/test split.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and keep the checkpoint with the lowest validation loss.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on one split part.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        part: String,
    },
    /// Train one model per transformer depth (and variant) and compare them on validation.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        depths: Vec<usize>,
        /// Defaults to the configured variant.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Export pooled molecule embeddings as CSV.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Restrict to one split part; all molecules when omitted.
        #[arg(long)]
        part: Option<String>,
    },
    /// Nearest neighbours of one molecule by cosine similarity.
    Retrieve {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_normalization(s: &str) -> std::result::Result<Normalization, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected frobenius, minmax or none, got {s:?}"))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Featurize { common, variant, normalization, p } => cmd_featurize(&common, variant, normalization, p),
        Command::Split { common } => cmd_split(&common),
        Command::Train { common, cache, split, variant, epochs, lr } => {
            cmd_train(&common, cache, split, variant, epochs, lr)
        }
        Command::Eval { common, checkpoint, split, part } => cmd_eval(&common, checkpoint, split, &part),
        Command::Sweep { common, depths, variants, split, epochs } => {
            cmd_sweep(&common, &depths, &variants, split, epochs)
        }
        Command::Embed { common, checkpoint, split, part } => cmd_embed(&common, checkpoint, split, part.as_deref()),
        Command::Retrieve { embeddings, query, k, out } => cmd_retrieve(&embeddings, &query, k, out),
    }
}

/// Configuration from `--config` (or defaults) with `--seed` and `--data` applied.
fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(data) = &common.data {
        cfg.paths.dataset = Some(data.clone());
    }
    Ok(cfg)
}

/// Loads and cleans the dataset and fixes the descriptor count from it.
fn load_data(cfg: &mut RunConfig) -> Result<Dataset> {
    let path = cfg.paths.dataset.clone().ok_or_else(|| Error::Config("no dataset given; pass --data".into()))?;
    let ds = load_clean(&path, &cfg.cleaning)?;
    cfg.model.o = ds.num_descriptors();
    cfg.validate()?;
    Ok(ds)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_with_sidecar(path: &Path, contents: &str, hash: &str) -> Result<()> {
    fs::write(path, contents)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".meta.json");
    fs::write(sidecar, serde_json::to_string_pretty(&json!({ "config_hash": hash }))? + "\n")?;
    Ok(())
}

fn load_split(path: Option<&Path>, ds: &Dataset, cfg: &RunConfig) -> Result<Split> {
    let split = match path {
        Some(p) => Split::load(p)?,
        None => stratified_split(ds, cfg.split_fractions, cfg.train.seed)?,
    };
    split.validate(ds.len())?;
    Ok(split)
}

fn cmd_featurize(
    common: &Common,
    variant: Option<Variant>,
    normalization: Option<Normalization>,
    p: Option<usize>,
) -> Result<()> {
    let mut cfg = base_config(common)?;
    if let Some(v) = variant {
        cfg.model.variant = v;
    }
    if let Some(n) = normalization {
        cfg.model.cm_normalization = n;
    }
    if let Some(p) = p {
        cfg.model.p = p;
    }
    let ds = load_data(&mut cfg)?;
    let records = featurize_all(&ds, &cfg.model)?;
    let header = CacheHeader {
        variant: cfg.model.variant.name().to_string(),
        normalization: cfg.model.cm_normalization,
        laplacian: cfg.model.variant.laplacian(),
        p: cfg.model.p,
        feature_hash: cfg.feature_hash(&ds),
        count: records.len(),
        config_hash: cfg.hash(),
    };
    let path = out_dir(common)?.join(FEATURES_FILE);
    write_cache(&path, &header, &records)?;
    println!("featurized {} molecules ({}) into {}", records.len(), header.variant, path.display());
    Ok(())
}

fn cmd_split(common: &Common) -> Result<()> {
    let mut cfg = base_config(common)?;
    let ds = load_data(&mut cfg)?;
    let split = stratified_split(&ds, cfg.split_fractions, cfg.train.seed)?;
    let path = out_dir(common)?.join(SPLIT_FILE);
    write_with_sidecar(&path, &serde_json::to_string(&split)?, &cfg.hash())?;
    println!(
        "split {} molecules: train {}, val {}, test {}",
        ds.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

/// Cached features when a cache is configured, otherwise computed now.
fn features_for(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<FeatureRecord>> {
    let Some(path) = &cfg.paths.cache else {
        return featurize_all(ds, &cfg.model);
    };
    let (header, records) = read_cache(path)?;
    if header.feature_hash != cfg.feature_hash(ds) {
        return Err(Error::Config(format!(
            "cache {} was built from other data or featurization settings (variant {}, normalization {:?})",
            path.display(),
            header.variant,
            header.normalization
        )));
    }
    if records.len() != ds.len() || records.iter().zip(ds.molecules()).any(|(r, m)| r.id != m.id) {
        return Err(Error::Data(format!("cache {} does not line up with the dataset", path.display())));
    }
    Ok(records)
}

fn checkpoint_config(cfg: &RunConfig, ds: &Dataset) -> serde_json::Value {
    json!({ "run": cfg.without_paths(), "descriptors": ds.vocabulary().descriptors() })
}

fn cmd_train(
    common: &Common,
    cache: Option<PathBuf>,
    split: Option<PathBuf>,
    variant: Option<Variant>,
    epochs: Option<usize>,
    lr: Option<f64>,
) -> Result<()> {
    let mut cfg = base_config(common)?;
    if let Some(v) = variant {
        cfg.model.variant = v;
    }
    if let Some(e) = epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = lr {
        cfg.train.learning_rate = lr;
    }
    if cache.is_some() {
        cfg.paths.cache = cache;
    }
    if split.is_some() {
        cfg.paths.split = split;
    }
    let ds = load_data(&mut cfg)?;
    let hash = cfg.hash();
    let features = features_for(&cfg, &ds)?;
    let split = load_split(cfg.paths.split.as_deref(), &ds, &cfg)?;
    let data = TrainData { features: &features, targets: ds.targets(), descriptors: ds.vocabulary().descriptors() };
    let outcome = train_loop(&data, &split, &cfg.model, &cfg.train)?;

    let dir = out_dir(common)?;
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            epoch: outcome.best_epoch,
            val_loss: outcome.best_val_loss,
            config_hash: hash.clone(),
            config: checkpoint_config(&cfg, &ds),
        },
        params: outcome.best.params().clone(),
    };
    write_checkpoint(dir.join(CHECKPOINT_FILE), &checkpoint)?;
    write_with_sidecar(&dir.join(HISTORY_FILE), &history_csv(&outcome.history), &hash)?;
    fs::write(
        dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(&json!({ "config_hash": hash, "config": cfg.without_paths() }))? + "\n",
    )?;

    let report = evaluate(&outcome.best, &data, &split.val, cfg.threshold)?;
    match report.macro_auroc() {
        Some(a) => println!("best epoch {}: validation macro AUROC {a:.4}", outcome.best_epoch),
        None => println!("best epoch {}: validation macro AUROC undefined", outcome.best_epoch),
    }
    match outcome.diverged {
        Some(msg) => Err(Error::Numeric(format!("training diverged ({msg}); kept the last good checkpoint"))),
        None => Ok(()),
    }
}

struct Loaded {
    cfg: RunConfig,
    hash: String,
    ds: Dataset,
    model: MolPecoModel,
}

/// A checkpoint with the run configuration and descriptor names stored in it.
#[derive(Debug)]
pub struct Trained {
    pub config: RunConfig,
    pub descriptors: Vec<String>,
    pub model: MolPecoModel,
}

/// Reads a checkpoint written by `train` and rebuilds its model.
pub fn load_trained(path: &Path) -> Result<Trained> {
    let ck = read_checkpoint(path)?;
    let bad = |what: &str| Error::Format(format!("checkpoint {}: {what}", path.display()));
    let config: RunConfig = serde_json::from_value(ck.meta.config["run"].clone())
        .map_err(|e| bad(&format!("unreadable configuration: {e}")))?;
    let descriptors: Vec<String> =
        serde_json::from_value(ck.meta.config["descriptors"].clone()).map_err(|_| bad("missing descriptor list"))?;
    if config.hash() != ck.meta.config_hash {
        return Err(bad("configuration hash does not match its contents"));
    }
    let model = MolPecoModel::from_params(config.model.clone(), &ck.params)?;
    if model.config().o != descriptors.len() {
        return Err(bad("descriptor list does not match the classifier width"));
    }
    Ok(Trained { config, descriptors, model })
}

/// Checkpoint plus the dataset cleaned the way the checkpoint was trained.
fn load_checkpoint(common: &Common, checkpoint: Option<PathBuf>) -> Result<Loaded> {
    let base = base_config(common)?;
    let path = checkpoint
        .or(base.paths.checkpoint.clone())
        .ok_or_else(|| Error::Config("no checkpoint given; pass --checkpoint".into()))?;
    let Trained { config: mut cfg, descriptors, model } = load_trained(&path)?;
    if let Some(data) = &common.data {
        cfg.paths.dataset = Some(data.clone());
    }
    let hash = cfg.hash();
    let ds = load_data(&mut cfg)?;
    if ds.vocabulary().descriptors() != descriptors.as_slice() {
        return Err(Error::Data("dataset descriptors differ from those the checkpoint was trained on".into()));
    }
    Ok(Loaded { cfg, hash, ds, model })
}

fn part_indices(loaded: &Loaded, split: Option<&Path>, part: &str) -> Result<Vec<usize>> {
    let split = load_split(split, &loaded.ds, &loaded.cfg)?;
    Ok(split.part(part)?.to_vec())
}

fn featurize_indices(loaded: &Loaded, indices: &[usize]) -> Result<Vec<FeatureRecord>> {
    indices.iter().map(|&i| featurize(&loaded.ds.molecules()[i], loaded.model.config())).collect()
}

fn cmd_eval(common: &Common, checkpoint: Option<PathBuf>, split: Option<PathBuf>, part: &str) -> Result<()> {
    let loaded = load_checkpoint(common, checkpoint)?;
    let indices = part_indices(&loaded, split.as_deref(), part)?;
    if indices.is_empty() {
        return Err(Error::Data(format!("split part {part:?} is empty")));
    }
    let features = featurize_indices(&loaded, &indices)?;
    let targets: Vec<Vec<bool>> = indices.iter().map(|&i| loaded.ds.targets()[i].clone()).collect();
    let data = TrainData { features: &features, targets: &targets, descriptors: loaded.ds.vocabulary().descriptors() };
    let local: Vec<usize> = (0..indices.len()).collect();
    let report = evaluate(&loaded.model, &data, &local, loaded.cfg.threshold)?;
    let dir = out_dir(common)?;
    fs::write(dir.join(REPORT_JSON), serde_json::to_string_pretty(&report.to_json(&loaded.hash)?)? + "\n")?;
    write_with_sidecar(&dir.join(REPORT_CSV), &report.to_csv()?, &loaded.hash)?;
    match report.macro_avg {
        Some(m) => {
            println!("{part}: macro AUROC {:.4}, AUPRC {:.4} over {} molecules", m.auroc, m.auprc, report.molecules)
        }
        None => println!("{part}: no descriptor has both classes; macro metrics undefined"),
    }
    Ok(())
}

/// One trained configuration in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: Variant,
    pub transformer_layers: usize,
    /// Validation macro metrics.
    pub metrics: Option<Metrics>,
}

/// Trains one model per (variant, depth) with the same seed and evaluates each on validation.
pub fn sweep(
    ds: &Dataset,
    split: &Split,
    cfg: &RunConfig,
    variants: &[Variant],
    depths: &[usize],
) -> Result<Vec<SweepRow>> {
    if depths.is_empty() || variants.is_empty() {
        return Err(Error::Config("a sweep needs at least one depth and one variant".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let mut model = cfg.model.clone();
        model.variant = variant;
        let features = featurize_all(ds, &model)?;
        let data = TrainData { features: &features, targets: ds.targets(), descriptors: ds.vocabulary().descriptors() };
        for &depth in depths {
            model.transformer_layers = depth;
            model.validate()?;
            let outcome = train_loop(&data, split, &model, &cfg.train)?;
            if let Some(msg) = outcome.diverged {
                return Err(Error::Numeric(format!("{variant} with {depth} transformer layers diverged: {msg}")));
            }
            let report = evaluate(&outcome.best, &data, &split.val, cfg.threshold)?;
            rows.push(SweepRow { variant, transformer_layers: depth, metrics: report.macro_avg });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "transformer_layers"].into_iter().chain(Metrics::NAMES))?;
    for r in rows {
        let cells: [String; 6] = match r.metrics {
            Some(m) => m.values().map(|v| v.to_string()),
            None => Default::default(),
        };
        w.write_record([r.variant.name().to_string(), r.transformer_layers.to_string()].into_iter().chain(cells))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn cmd_sweep(
    common: &Common,
    depths: &[usize],
    variants: &[Variant],
    split: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = base_config(common)?;
    if let Some(e) = epochs {
        cfg.train.max_epochs = e;
    }
    if split.is_some() {
        cfg.paths.split = split;
    }
    let ds = load_data(&mut cfg)?;
    let split = load_split(cfg.paths.split.as_deref(), &ds, &cfg)?;
    let variants = if variants.is_empty() { vec![cfg.model.variant] } else { variants.to_vec() };
    let rows = sweep(&ds, &split, &cfg, &variants, depths)?;
    let text = sweep_csv(&rows)?;
    write_with_sidecar(&out_dir(common)?.join(SWEEP_FILE), &text, &cfg.hash())?;
    print!("{text}");
    Ok(())
}

fn cmd_embed(common: &Common, checkpoint: Option<PathBuf>, split: Option<PathBuf>, part: Option<&str>) -> Result<()> {
    let loaded = load_checkpoint(common, checkpoint)?;
    let indices = match part {
        Some(part) => part_indices(&loaded, split.as_deref(), part)?,
        None => (0..loaded.ds.len()).collect(),
    };
    let mut rows = Vec::with_capacity(indices.len());
    for &i in &indices {
        let mol = &loaded.ds.molecules()[i];
        let (_, vector) = loaded.model.predict(&featurize(mol, loaded.model.config())?)?;
        rows.push(Embedding { id: mol.id.clone(), vector });
    }
    let path = out_dir(common)?.join(EMBEDDINGS_FILE);
    write_with_sidecar(&path, &embeddings_csv(&rows)?, &loaded.hash)?;
    println!("wrote {} embeddings of width {} to {}", rows.len(), loaded.model.config().d, path.display());
    Ok(())
}

fn cmd_retrieve(embeddings: &Path, query: &str, k: usize, out: Option<PathBuf>) -> Result<()> {
    let rows = read_embeddings(embeddings)?;
    let hits = retrieve(&rows, query, k)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "id", "similarity"])?;
    for (rank, (id, sim)) in hits.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), id.clone(), sim.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("retrieval.csv"), &text)?;
    }
    print!("{text}");
    Ok(())
}
