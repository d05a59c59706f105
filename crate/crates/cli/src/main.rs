//! `cftm`: simulate, fit, evaluate and replicate longitudinal topic models.
//!
//! Settings come from a JSON config (`--config`) with any field overridable
//! by `--section.key=value` (or `--key=value` for fields of `train`, `sim` or
//! the top level). Values are parsed as JSON, falling back to a string.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cftm::eval::{top_words, DEFAULT_TOP_N};
use cftm::experiment::fit_corpus;
use cftm::{
    full_report, infer_proportions, load_corpus, run_pipeline, save_corpus, simulate, Error, ExperimentConfig,
    FittedModel, GroundTruth, LoadOptions, Result, SimConfig, TrainConfig,
};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Parser, Debug)]
#[command(name = "cftm", version, about = "Longitudinal topic models with counterfactual group separation")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Draw a corpus and its ground truth.
    Simulate,
    /// Fit a model to a corpus.
    Fit,
    /// Score a fitted model, against ground truth when given.
    Eval,
    /// Write the inferred topic proportions.
    Infer,
    /// Simulate, fit and evaluate `repeats` times and summarize.
    Pipeline,
}

#[derive(clap::Args, Debug, Default)]
struct Common {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[arg(long, global = true)]
    dist: Option<String>,
    #[arg(long = "dist-weight", global = true)]
    dist_weight: Option<f64>,
    #[arg(long = "dynamic-topics", global = true)]
    dynamic_topics: Option<f64>,
    #[arg(long = "allow-missing", global = true)]
    allow_missing: bool,
    /// Corpus directory (overrides `paths.corpus`).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Model file (overrides `paths.model`).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Ground-truth file (overrides `paths.truth`).
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
}

const KNOWN_FLAGS: [&str; 13] = [
    "config",
    "seed",
    "out",
    "repeats",
    "dist",
    "dist-weight",
    "dynamic-topics",
    "allow-missing",
    "corpus",
    "model",
    "truth",
    "help",
    "version",
];

/// Separates `--key=value` overrides from the arguments clap understands.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            if !KNOWN_FLAGS.contains(&k) {
                overrides.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn section_default(name: &str) -> Option<Value> {
    match name {
        "sim" => serde_json::to_value(SimConfig::default()).ok(),
        "train" => serde_json::to_value(TrainConfig::default()).ok(),
        "gen" => serde_json::to_value(cftm::GenerativeConfig::default()).ok(),
        "paths" => Some(Value::Object(Map::new())),
        _ => None,
    }
}

fn set_path(root: &mut Value, path: &[&str], value: Value) -> Result<()> {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::ConfigError(format!("cannot set '{}': parent is not an object", path.join("."))))?;
        if i + 1 == path.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        let child = obj.entry(key.to_string()).or_insert(Value::Null);
        if child.is_null() {
            *child = if i == 0 {
                section_default(key).unwrap_or(Value::Object(Map::new()))
            } else {
                Value::Object(Map::new())
            };
        }
        node = child;
    }
    Ok(())
}

/// Applies one override; a bare key is looked up at the top level, then in
/// `train`, then in `sim`.
fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let key = key.replace('-', "_");
    let value = parse_value(raw);
    if key.contains('.') {
        let parts: Vec<&str> = key.split('.').collect();
        return set_path(root, &parts, value);
    }
    let known = |section: &str| section_default(section).is_some_and(|d| d.get(&key).is_some());
    let top = serde_json::to_value(ExperimentConfig::default()).map_err(|e| Error::ConfigError(e.to_string()))?;
    if top.get(&key).is_some() {
        set_path(root, &[&key], value)
    } else if known("train") {
        set_path(root, &["train", &key], value)
    } else if known("sim") {
        set_path(root, &["sim", &key], value)
    } else {
        Err(Error::ConfigError(format!("unknown setting '{key}'")))
    }
}

fn build_config(common: &Common, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut root = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(Error::ConfigError("config must be a JSON object".into()));
    }
    for (k, v) in overrides {
        apply_override(&mut root, k, v)?;
    }
    let mut set = |path: &[&str], v: Value| set_path(&mut root, path, v);
    if let Some(d) = &common.dist {
        set(&["train", "dist_kind"], Value::String(d.clone()))?;
    }
    if let Some(w) = common.dist_weight {
        set(&["train", "dist_weight"], w.into())?;
    }
    if let Some(v) = common.dynamic_topics {
        set(&["dynamic_topics"], v.into())?;
    }
    if let Some(r) = common.repeats {
        set(&["repeats"], r.into())?;
    }
    if common.allow_missing {
        set(&["allow_missing"], true.into())?;
    }
    for (name, p) in [("corpus", &common.corpus), ("model", &common.model), ("truth", &common.truth), ("out", &common.out)] {
        if let Some(p) = p {
            set(&["paths", name], Value::String(p.display().to_string()))?;
        }
    }
    let cfg: ExperimentConfig = serde_json::from_value(root).map_err(|e| Error::ConfigError(e.to_string()))?;
    cfg.train.validate()?;
    if let Some(s) = &cfg.sim {
        s.validate()?;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::ConfigError(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::ConfigError(format!("no {what} path (set paths.{what} or --{what})")))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn training_log_csv(model: &FittedModel) -> String {
    let mut s = String::from("epoch,loss,kl,nll,distance,batch_loss\n");
    for r in &model.log {
        let batch = r.batch_loss.map(|b| b.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{},{}\n", r.epoch, r.loss, r.kl, r.nll, r.distance, batch));
    }
    s
}

fn load(cfg: &ExperimentConfig) -> Result<cftm::Corpus> {
    let opts = LoadOptions {
        allow_missing: cfg.allow_missing,
        ..Default::default()
    };
    load_corpus(required(&cfg.paths.corpus, "corpus")?, opts)
}

fn metrics_json(report: &cftm::MetricsReport, cfg: &ExperimentConfig) -> Result<Value> {
    let mut v = serde_json::to_value(report).map_err(|e| Error::ConfigError(e.to_string()))?;
    let echo = serde_json::to_value(cfg).map_err(|e| Error::ConfigError(e.to_string()))?;
    if let Value::Object(m) = &mut v {
        m.insert("config".into(), echo);
    }
    Ok(v)
}

fn run(mode: Mode, common: &Common, overrides: &[(String, String)]) -> Result<()> {
    let cfg = build_config(common, overrides)?;
    match mode {
        Mode::Simulate => {
            let seed = common.seed.unwrap_or(cfg.sim.as_ref().map_or(0, |s| s.seed));
            let (corpus, truth) = simulate(&cfg.sim_config(seed)?)?;
            let out = out_dir(&cfg)?;
            save_corpus(&corpus, &out)?;
            write_json(&out.join("truth.json"), &truth)
        }
        Mode::Fit => {
            let corpus = load(&cfg)?;
            let seed = common.seed.unwrap_or(cfg.train.seed);
            let model = fit_corpus(&cfg, &corpus, seed)?;
            let out = out_dir(&cfg)?;
            model.save(out.join("model.json"))?;
            fs::write(out.join("training_log.csv"), training_log_csv(&model)).map_err(|e| Error::Io {
                path: out.join("training_log.csv"),
                source: e,
            })
        }
        Mode::Eval => {
            let corpus = load(&cfg)?;
            let model = FittedModel::load(required(&cfg.paths.model, "model")?)?;
            let truth: Option<GroundTruth> = cfg.paths.truth.as_deref().map(read_json).transpose()?;
            let report = full_report(&model, &corpus, truth.as_ref())?;
            let out = out_dir(&cfg)?;
            let echo = ExperimentConfig {
                train: model.config.clone(),
                ..cfg.clone()
            };
            write_json(&out.join("metrics.json"), &metrics_json(&report, &echo)?)?;
            let topics = match &report.permutations {
                Some(p) => cftm::eval::apply_alignment(&model.topic_words(), p),
                None => model.topic_words(),
            };
            write_json(&out.join("topics_top_words.json"), &top_words(&topics, corpus.vocab(), DEFAULT_TOP_N))
        }
        Mode::Infer => {
            let corpus = load(&cfg)?;
            let model = FittedModel::load(required(&cfg.paths.model, "model")?)?;
            let theta = infer_proportions(&model, &corpus)?;
            write_json(&out_dir(&cfg)?.join("theta.json"), &theta)
        }
        Mode::Pipeline => {
            let seed = common.seed.unwrap_or(0);
            let (reps, summary) = run_pipeline(&cfg, seed)?;
            let out = out_dir(&cfg)?;
            for r in &reps {
                let dir = out.join(format!("seed_{}", r.seed));
                fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                write_json(&dir.join("metrics.json"), &metrics_json(&r.metrics, &cfg)?)?;
                r.fitted.save(dir.join("model.json"))?;
            }
            write_json(&out.join("summary.json"), &summary)
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli.mode, &cli.common, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
