//! Simulate → fit → evaluate replicates and their aggregation across seeds.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{full_report, MetricsReport};
use crate::model::GenerativeConfig;
use crate::simulate::{simulate, GroundTruth, SimConfig};
use crate::vi::{fit, fit_dynamic_topics, FittedModel, TrainConfig};

/// Input and output locations used by the command-line runner.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sim: Option<SimConfig>,
    pub train: TrainConfig,
    /// Overrides `train.generative` when present.
    pub gen: Option<GenerativeConfig>,
    /// Topic count of the fitted model; defaults to the simulation's.
    pub n_topics: Option<usize>,
    /// Topic random-walk variance; `None` keeps topics fixed across stages.
    pub dynamic_topics: Option<f64>,
    pub repeats: usize,
    pub allow_missing: bool,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: None,
            train: TrainConfig::default(),
            gen: None,
            n_topics: None,
            dynamic_topics: None,
            repeats: 1,
            allow_missing: false,
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(g) = self.gen {
            t.generative = g;
        }
        t.seed = seed;
        t
    }

    pub fn topics(&self) -> Result<usize> {
        self.n_topics
            .or(self.sim.as_ref().map(|s| s.n_topics))
            .ok_or_else(|| Error::ConfigError("number of topics not given (set n_topics or a sim block)".into()))
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        let mut s = self
            .sim
            .clone()
            .ok_or_else(|| Error::ConfigError("a sim block is required".into()))?;
        s.seed = seed;
        s.validate()?;
        Ok(s)
    }
}

/// Fits a model on `corpus` with the experiment's training settings.
pub fn fit_corpus(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<FittedModel> {
    let train = cfg.train_config(seed);
    let k = cfg.topics()?;
    match cfg.dynamic_topics {
        Some(v) => fit_dynamic_topics(corpus, k, &train, v),
        None => fit(corpus, k, &train),
    }
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub seed: u64,
    pub corpus: Corpus,
    pub truth: GroundTruth,
    pub fitted: FittedModel,
    pub metrics: MetricsReport,
}

/// One simulated data set, one fit, one evaluation, all driven by `seed`.
pub fn run_replicate(cfg: &ExperimentConfig, seed: u64) -> Result<Replicate> {
    let (corpus, truth) = simulate(&cfg.sim_config(seed)?)?;
    let fitted = fit_corpus(cfg, &corpus, seed)?;
    let metrics = full_report(&fitted, &corpus, Some(&truth))?;
    Ok(Replicate {
        seed,
        corpus,
        truth,
        fitted,
        metrics,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub kl_topics: Option<f64>,
    pub coherence: f64,
    pub perplexity: f64,
    pub dominant_acc: Option<f64>,
    pub group_acc: f64,
}

impl From<&MetricsReport> for MetricValues {
    fn from(r: &MetricsReport) -> Self {
        MetricValues {
            kl_topics: r.kl_topics,
            coherence: r.coherence,
            perplexity: r.perplexity,
            dominant_acc: r.dominant_acc,
            group_acc: r.group_acc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_seed: Vec<SeedMetrics>,
    pub mean: MetricValues,
    /// Standard error of the mean, `sd / √n` with the sample standard
    /// deviation; zero for a single seed.
    pub std_error: MetricValues,
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(per_seed: Vec<SeedMetrics>) -> Result<Summary> {
    if per_seed.is_empty() {
        return Err(Error::ConfigError("no replicates to summarize".into()));
    }
    let stat = |f: &dyn Fn(&MetricsReport) -> f64| {
        let v: Vec<f64> = per_seed.iter().map(|s| f(&s.metrics)).collect();
        mean_se(&v)
    };
    let opt_stat = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let v: Option<Vec<f64>> = per_seed.iter().map(|s| f(&s.metrics)).collect();
        v.map(|v| mean_se(&v))
    };
    let coherence = stat(&|m| m.coherence);
    let perplexity = stat(&|m| m.perplexity);
    let group = stat(&|m| m.group_acc);
    let kl = opt_stat(&|m| m.kl_topics);
    let dom = opt_stat(&|m| m.dominant_acc);
    Ok(Summary {
        mean: MetricValues {
            kl_topics: kl.map(|s| s.0),
            coherence: coherence.0,
            perplexity: perplexity.0,
            dominant_acc: dom.map(|s| s.0),
            group_acc: group.0,
        },
        std_error: MetricValues {
            kl_topics: kl.map(|s| s.1),
            coherence: coherence.1,
            perplexity: perplexity.1,
            dominant_acc: dom.map(|s| s.1),
            group_acc: group.1,
        },
        per_seed,
    })
}

/// Runs `cfg.repeats` replicates with seeds `base_seed + i`.
pub fn run_pipeline(cfg: &ExperimentConfig, base_seed: u64) -> Result<(Vec<Replicate>, Summary)> {
    if cfg.repeats == 0 {
        return Err(Error::ConfigError("repeats must be at least 1".into()));
    }
    let reps = (0..cfg.repeats as u64)
        .map(|i| run_replicate(cfg, base_seed + i))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(
        reps.iter()
            .map(|r| SeedMetrics {
                seed: r.seed,
                metrics: r.metrics.clone(),
            })
            .collect(),
    )?;
    Ok((reps, summary))
}
