//! Minibatch training loop, fitted-model persistence and proportion
//! inference.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Corpus, Standardization};
use crate::error::{Error, Result};
use crate::linalg::{softmax_columns, softmax_in_place, Matrix};
use crate::model::{encode_group, Dims, GenerativeConfig, GenerativeParams};
use crate::rng;
use crate::vi::encoder::{EncoderInput, EncoderParams};
use crate::vi::loss::{beta_gradient, check_inputs, draw_noise, evaluate, Accum, LossContext, LossTerms};
use crate::vi::optim::{clip_global_norm, Optimizer, OptimizerState};
use crate::vi::terms::DistanceKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Reparameterized samples per (document, stage).
    pub m: usize,
    #[serde(alias = "lambda")]
    pub learning_rate: f64,
    pub t_max: usize,
    /// Relative full-data loss change that stops training. Zero, negative
    /// or infinite values disable the rule.
    #[serde(serialize_with = "ser_stop", deserialize_with = "de_stop")]
    pub eps_stop: f64,
    pub batch_size: usize,
    pub dist_kind: DistanceKind,
    pub dist_weight: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Global gradient-norm cap per minibatch.
    pub clip_norm: Option<f64>,
    pub encoder_hidden: usize,
    pub init_std: f64,
    pub generative: GenerativeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 5,
            learning_rate: 1e-2,
            t_max: 100,
            eps_stop: 1e-5,
            batch_size: 64,
            dist_kind: DistanceKind::MiJsd,
            dist_weight: 1.0,
            seed: 0,
            optimizer: Optimizer::default(),
            clip_norm: None,
            encoder_hidden: 64,
            init_std: 0.01,
            generative: GenerativeConfig::default(),
        }
    }
}

fn ser_stop<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(if v.is_finite() { *v } else { 0.0 })
}

fn de_stop<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(0.0))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::ConfigError("M must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigError("learning rate must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(Error::ConfigError("t_max must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigError("batch size must be at least 1".into()));
        }
        if !self.dist_weight.is_finite() {
            return Err(Error::ConfigError("distance weight must be finite".into()));
        }
        if !(self.init_std > 0.0) || self.encoder_hidden == 0 {
            return Err(Error::ConfigError("initialization scale and encoder width must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::ConfigError("clip norm must be positive".into()));
        }
        if !(self.generative.a2 > 0.0) || !(self.generative.delta2 >= 0.0) {
            return Err(Error::ConfigError("prior variances must be positive".into()));
        }
        Ok(())
    }

    fn stop_enabled(&self) -> bool {
        self.eps_stop > 0.0 && self.eps_stop.is_finite()
    }
}

/// One row of the training log. Epoch 0 is the initial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub kl: f64,
    pub nll: f64,
    pub distance: f64,
    /// Mean minibatch loss over the epoch; absent for epoch 0.
    pub batch_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub n_groups: usize,
    pub standardization: Option<Standardization>,
    pub generative: GenerativeParams,
    pub encoder: EncoderParams,
    /// Per-stage unnormalized topics when topics evolve over time.
    pub stage_beta: Option<Vec<Matrix>>,
    /// Topic random-walk variance of the evolving-topic fit.
    pub topic_drift_variance: Option<f64>,
    pub log: Vec<EpochLog>,
}

impl FittedModel {
    pub fn n_topics(&self) -> usize {
        self.generative.beta.cols()
    }

    pub fn n_stages(&self) -> usize {
        self.encoder.n_stages()
    }

    /// Topic-word simplices for stage `t` (zero-based).
    pub fn topic_word(&self, t: usize) -> Matrix {
        match &self.stage_beta {
            Some(b) => softmax_columns(&b[t]),
            None => self.generative.topic_word(),
        }
    }

    pub fn topic_words(&self) -> Vec<Matrix> {
        (0..self.n_stages()).map(|t| self.topic_word(t)).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|l| l.loss)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let s = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Random initial parameters for a `k`-topic model on `corpus`.
pub fn init_params(corpus: &Corpus, k: usize, cfg: &TrainConfig) -> Result<(GenerativeParams, EncoderParams)> {
    if k == 0 {
        return Err(Error::ConfigError("need at least one topic".into()));
    }
    cfg.validate()?;
    let dims = Dims::of(corpus, k);
    let gen = GenerativeParams::random(&dims, &cfg.generative, cfg.init_std, &mut rng::stream(cfg.seed, &[0]))?;
    let enc = EncoderParams::random(&dims, cfg.encoder_hidden, cfg.init_std, &mut rng::stream(cfg.seed, &[5]))?;
    Ok((gen, enc))
}

/// Objective the epoch loop drives: a flat list of parameter slices with a
/// minibatch gradient and a full-data loss.
pub(crate) trait Objective {
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
    fn batch(&self, batch: &[usize], epoch: usize) -> (f64, Vec<Vec<f64>>);
    fn full_loss(&self) -> LossTerms;
}

pub(crate) fn accum_grads(acc: &Accum, topics: &Matrix) -> Vec<Vec<f64>> {
    let mut g = Matrix::zeros(topics.rows(), topics.cols());
    for gt in &acc.grad_topics {
        crate::linalg::axpy(1.0, gt.as_slice(), g.as_mut_slice());
    }
    let mut out = vec![beta_gradient(topics, &g).as_slice().to_vec()];
    for st in &acc.grad_transitions.stages {
        out.extend(st.slices().into_iter().map(|s| s.to_vec()));
    }
    out.extend(acc.grad_encoder.slices().into_iter().map(|s| s.to_vec()));
    out
}

pub(crate) fn model_params_mut<'a>(gen: &'a mut GenerativeParams, enc: &'a mut EncoderParams) -> Vec<&'a mut [f64]> {
    let mut v: Vec<&mut [f64]> = vec![gen.beta.as_mut_slice()];
    for st in gen.transitions.stages.iter_mut() {
        v.extend(st.slices_mut());
    }
    v.extend(enc.slices_mut());
    v
}

pub(crate) fn subject_noise(corpus: &Corpus, cfg: &TrainConfig, k: usize, tag: u64, epoch: usize, subjects: &[usize]) -> Vec<Vec<f64>> {
    subjects
        .iter()
        .map(|&i| draw_noise(cfg.seed, &[tag, epoch as u64, i as u64], corpus.n_stages(), cfg.m, k))
        .collect()
}

pub(crate) const TAG_TRAIN: u64 = 2;
pub(crate) const TAG_EVAL: u64 = 3;

struct Consistent<'a> {
    corpus: &'a Corpus,
    cfg: &'a TrainConfig,
    gen: GenerativeParams,
    enc: EncoderParams,
    all: Vec<usize>,
}

impl Consistent<'_> {
    fn context<'b>(&'b self, topics: &'b Matrix) -> LossContext<'b> {
        LossContext {
            corpus: self.corpus,
            topics: vec![topics; self.corpus.n_stages()],
            transitions: &self.gen.transitions,
            eta0: &self.gen.eta0,
            sigma0: self.gen.sigma0(),
            encoder: &self.enc,
            m: self.cfg.m,
            dist_kind: self.cfg.dist_kind,
            dist_weight: self.cfg.dist_weight,
        }
    }
}

impl Objective for Consistent<'_> {
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        model_params_mut(&mut self.gen, &mut self.enc)
    }

    fn batch(&self, batch: &[usize], epoch: usize) -> (f64, Vec<Vec<f64>>) {
        let topics = self.gen.topic_word();
        let eps = subject_noise(self.corpus, self.cfg, topics.cols(), TAG_TRAIN, epoch, batch);
        let acc = evaluate(&self.context(&topics), batch, &eps, true);
        (acc.total(self.cfg.dist_weight), accum_grads(&acc, &topics))
    }

    fn full_loss(&self) -> LossTerms {
        let topics = self.gen.topic_word();
        let eps = subject_noise(self.corpus, self.cfg, topics.cols(), TAG_EVAL, 0, &self.all);
        let acc = evaluate(&self.context(&topics), &self.all, &eps, false);
        LossTerms {
            total: acc.total(self.cfg.dist_weight),
            kl: acc.kl,
            nll: acc.nll,
            distance: acc.distance,
        }
    }
}

fn log_row(epoch: usize, t: LossTerms, batch_loss: Option<f64>) -> EpochLog {
    EpochLog {
        epoch,
        loss: t.total,
        kl: t.kl,
        nll: t.nll,
        distance: t.distance,
        batch_loss,
    }
}

/// Epoch loop shared by the consistent and evolving-topic trainers.
pub(crate) fn run_epochs(obj: &mut dyn Objective, n_subjects: usize, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    let mut log = vec![log_row(0, obj.full_loss(), None)];
    if !log[0].loss.is_finite() {
        return Err(Error::DivergedError {
            epoch: 0,
            loss: log[0].loss,
        });
    }
    let mut state: Option<OptimizerState> = None;
    let mut order: Vec<usize> = (0..n_subjects).collect();
    for epoch in 1..=cfg.t_max {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[1, epoch as u64]));
        let mut batch_sum = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = obj.batch(batch, epoch);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::DivergedError { epoch, loss });
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(grads.iter_mut().map(|g| g.as_mut_slice()).collect(), c);
            }
            let st = state.get_or_insert_with(|| {
                let shapes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
                OptimizerState::new(cfg.optimizer, &shapes)
            });
            st.update(cfg.learning_rate, obj.params_mut(), grads.iter().map(|g| g.as_slice()).collect());
            batch_sum += loss;
            n_batches += 1;
        }
        let terms = obj.full_loss();
        if !terms.total.is_finite() {
            return Err(Error::DivergedError {
                epoch,
                loss: terms.total,
            });
        }
        let prev = log.last().expect("log starts with epoch 0").loss;
        log.push(log_row(epoch, terms, Some(batch_sum / n_batches as f64)));
        if cfg.stop_enabled() && (terms.total - prev).abs() <= cfg.eps_stop * prev.abs() {
            break;
        }
    }
    Ok(log)
}

/// Fits the consistent-topic model starting from the given parameters.
pub fn train(corpus: &Corpus, gen: GenerativeParams, enc: EncoderParams, cfg: &TrainConfig) -> Result<FittedModel> {
    cfg.validate()?;
    check_inputs(corpus, &gen, &enc, gen.beta.cols())?;
    let mut obj = Consistent {
        corpus,
        cfg,
        gen,
        enc,
        all: (0..corpus.n_subjects()).collect(),
    };
    let log = run_epochs(&mut obj, corpus.n_subjects(), cfg)?;
    Ok(FittedModel {
        config: cfg.clone(),
        vocab: corpus.vocab().to_vec(),
        n_groups: corpus.n_groups(),
        standardization: corpus.standardization().cloned(),
        generative: obj.gen,
        encoder: obj.enc,
        stage_beta: None,
        topic_drift_variance: None,
        log,
    })
}

/// [`init_params`] followed by [`train`].
pub fn fit(corpus: &Corpus, k: usize, cfg: &TrainConfig) -> Result<FittedModel> {
    let (gen, enc) = init_params(corpus, k, cfg)?;
    train(corpus, gen, enc, cfg)
}

/// Posterior-mean proportions `softmax(μ^q)` indexed `[stage][subject]`;
/// missing cells are `None`.
pub type Proportions = Vec<Vec<Option<Vec<f64>>>>;

pub fn infer_proportions(fitted: &FittedModel, corpus: &Corpus) -> Result<Proportions> {
    if corpus.vocab() != fitted.vocab.as_slice() {
        let index = corpus
            .vocab()
            .iter()
            .zip(&fitted.vocab)
            .position(|(a, b)| a != b)
            .unwrap_or(fitted.vocab.len().min(corpus.vocab_size()));
        return Err(Error::VocabMismatch {
            index,
            vocab_size: fitted.vocab.len(),
        });
    }
    let enc = &fitted.encoder;
    if corpus.n_features() != enc.features || corpus.n_groups() != enc.groups || corpus.n_stages() != enc.n_stages() {
        return Err(Error::ShapeError("corpus does not match the fitted model".into()));
    }
    let (n, t_count) = (corpus.n_subjects(), corpus.n_stages());
    let mut out: Proportions = vec![vec![None; n]; t_count];
    for i in 0..n {
        let y = encode_group(corpus.group(i), corpus.n_groups());
        let mut prev = fitted.generative.eta0.clone();
        for (t, row) in out.iter_mut().enumerate() {
            let Some(doc) = corpus.doc(i, t) else { continue };
            let bow = doc.frequencies();
            let x = corpus.covariates(i, t);
            let (mut m, _) = enc.forward_groups(t, EncoderInput { bow: &bow, x }, &[&y], &[&prev]);
            let q = m.remove(0);
            let mut theta = q.mu.clone();
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericError("non-finite posterior mean".into()));
            }
            softmax_in_place(&mut theta);
            row[i] = Some(theta);
            prev = q.mu;
        }
    }
    Ok(out)
}
