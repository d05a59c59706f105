//! Generative side of the model: time-consistent topics, the per-stage
//! transition of unnormalized topic proportions, and the collapsed word
//! likelihood (topic assignments integrated out).

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::linalg::{self, softmax_columns, Dense, Matrix};
use crate::rng;

/// Floor applied to every probability before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Sizes shared by every parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub topics: usize,
    pub features: usize,
    pub groups: usize,
    pub stages: usize,
}

impl Dims {
    pub fn of(corpus: &Corpus, topics: usize) -> Self {
        Dims {
            vocab: corpus.vocab_size(),
            topics,
            features: corpus.n_features(),
            groups: corpus.n_groups(),
            stages: corpus.n_stages(),
        }
    }

    pub fn group_dim(&self) -> usize {
        group_encoding_dim(self.groups)
    }
}

/// Width of the group encoding: a single ±1 scalar for two groups, otherwise
/// one-hot with the last group as the all-zero reference.
pub fn group_encoding_dim(n_groups: usize) -> usize {
    if n_groups <= 2 {
        1
    } else {
        n_groups - 1
    }
}

pub fn encode_group(group: usize, n_groups: usize) -> Vec<f64> {
    if n_groups <= 2 {
        vec![if group == 0 { -1.0 } else { 1.0 }]
    } else {
        let mut e = vec![0.0; n_groups - 1];
        if group < n_groups - 1 {
            e[group] = 1.0;
        }
        e
    }
}

/// Mean function of the proportion transition: affine in
/// `[η_{t-1}, X_t, group encoding]`, optionally through one tanh layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub hidden: Option<Dense>,
    pub out: Dense,
}

impl Transition {
    pub fn zeros(dims: &Dims, hidden: Option<usize>) -> Self {
        let inputs = dims.topics + dims.features + dims.group_dim();
        match hidden {
            Some(h) => Transition {
                hidden: Some(Dense::zeros(inputs, h)),
                out: Dense::zeros(h, dims.topics),
            },
            None => Transition {
                hidden: None,
                out: Dense::zeros(inputs, dims.topics),
            },
        }
    }

    pub fn random(dims: &Dims, hidden: Option<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(dims, hidden);
        let normal = Normal::new(0.0, std).expect("finite std");
        if let Some(h) = t.hidden.as_mut() {
            h.weight.as_mut_slice().iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        t.out.weight.as_mut_slice().iter_mut().for_each(|w| *w = normal.sample(rng));
        t
    }

    fn first(&self) -> &Dense {
        self.hidden.as_ref().unwrap_or(&self.out)
    }

    pub fn inputs(&self) -> usize {
        self.first().inputs()
    }

    pub fn outputs(&self) -> usize {
        self.out.outputs()
    }

    /// Evaluates the mean into `out` and returns the hidden activations (empty
    /// when there is no hidden layer) for the backward pass.
    pub fn forward_cached(&self, eta_prev: &[f64], x: &[f64], y: &[f64], out: &mut [f64]) -> Vec<f64> {
        let first = self.first();
        let k = eta_prev.len();
        let p = x.len();
        match &self.hidden {
            None => {
                out.copy_from_slice(&first.bias);
                first.accumulate(0, eta_prev, out);
                first.accumulate(k, x, out);
                first.accumulate(k + p, y, out);
                Vec::new()
            }
            Some(layer) => {
                let mut h = layer.bias.clone();
                layer.accumulate(0, eta_prev, &mut h);
                layer.accumulate(k, x, &mut h);
                layer.accumulate(k + p, y, &mut h);
                h.iter_mut().for_each(|a| *a = a.tanh());
                self.out.forward(&h, out);
                h
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and the input gradient
    /// with respect to `eta_prev` into `d_eta_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        grad: &mut Transition,
        eta_prev: &[f64],
        x: &[f64],
        y: &[f64],
        hidden: &[f64],
        d_out: &[f64],
        d_eta_prev: Option<&mut [f64]>,
    ) {
        let k = eta_prev.len();
        let p = x.len();
        let (layer, layer_grad, d_pre) = match (&self.hidden, grad.hidden.as_mut()) {
            (None, _) => (&self.out, &mut grad.out, d_out.to_vec()),
            (Some(layer), Some(gl)) => {
                Dense::grad_weight(&mut grad.out, 0, hidden, d_out);
                linalg::axpy(1.0, d_out, &mut grad.out.bias);
                let mut d_h = vec![0.0; hidden.len()];
                self.out.input_grad(0, d_out, &mut d_h);
                for (d, h) in d_h.iter_mut().zip(hidden) {
                    *d *= 1.0 - h * h;
                }
                (layer, gl, d_h)
            }
            (Some(_), None) => panic!("gradient buffer lacks hidden layer"),
        };
        Dense::grad_weight(layer_grad, 0, eta_prev, &d_pre);
        Dense::grad_weight(layer_grad, k, x, &d_pre);
        Dense::grad_weight(layer_grad, k + p, y, &d_pre);
        linalg::axpy(1.0, &d_pre, &mut layer_grad.bias);
        if let Some(d_eta) = d_eta_prev {
            layer.input_grad(0, &d_pre, d_eta);
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.hidden.iter().flat_map(|h| h.slices()).collect();
        v.extend(self.out.slices());
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.hidden.iter_mut().flat_map(|h| h.slices_mut()).collect();
        v.extend(self.out.slices_mut());
        v
    }
}

/// Per-stage transition functions, optionally one function shared by all
/// stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transitions {
    pub shared: bool,
    pub stages: Vec<Transition>,
}

impl Transitions {
    pub fn stage(&self, t: usize) -> &Transition {
        if self.shared {
            &self.stages[0]
        } else {
            &self.stages[t]
        }
    }

    pub fn stage_mut(&mut self, t: usize) -> &mut Transition {
        if self.shared {
            &mut self.stages[0]
        } else {
            &mut self.stages[t]
        }
    }
}

/// Generative parameters: unnormalized topics `beta` (V×K) with prior
/// `N(beta0_mean, delta2)`, the proportion transitions with variance `a2`,
/// and the initial unnormalized proportions `eta0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeParams {
    pub beta: Matrix,
    pub beta0_mean: Matrix,
    pub delta2: f64,
    pub a2: f64,
    pub eta0: Vec<f64>,
    pub transitions: Transitions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeConfig {
    pub delta2: f64,
    pub a2: f64,
    /// Width of the transition's tanh layer; `None` keeps it affine.
    pub transition_hidden: Option<usize>,
    pub share_transitions: bool,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        GenerativeConfig {
            delta2: 1.0,
            a2: 1.0,
            transition_hidden: None,
            share_transitions: false,
        }
    }
}

impl GenerativeParams {
    /// All-zero parameters: uniform topics, zero transition map.
    pub fn zeros(dims: &Dims, cfg: &GenerativeConfig) -> Result<Self> {
        Self::validate_cfg(cfg)?;
        let n = if cfg.share_transitions { 1 } else { dims.stages };
        Ok(GenerativeParams {
            beta: Matrix::zeros(dims.vocab, dims.topics),
            beta0_mean: Matrix::zeros(dims.vocab, dims.topics),
            delta2: cfg.delta2,
            a2: cfg.a2,
            eta0: vec![0.0; dims.topics],
            transitions: Transitions {
                shared: cfg.share_transitions,
                stages: (0..n).map(|_| Transition::zeros(dims, cfg.transition_hidden)).collect(),
            },
        })
    }

    /// Gaussian initialization with the given weight standard deviation and
    /// zero biases.
    pub fn random(dims: &Dims, cfg: &GenerativeConfig, std: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(dims, cfg)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::ConfigError(e.to_string()))?;
        p.beta.as_mut_slice().iter_mut().for_each(|b| *b = normal.sample(rng));
        for t in p.transitions.stages.iter_mut() {
            *t = Transition::random(dims, cfg.transition_hidden, std, rng);
        }
        Ok(p)
    }

    fn validate_cfg(cfg: &GenerativeConfig) -> Result<()> {
        if !(cfg.delta2 >= 0.0 && cfg.a2 >= 0.0) {
            return Err(Error::ConfigError("variances must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        if self.beta.rows() != dims.vocab || self.beta.cols() != dims.topics {
            return Err(Error::ShapeError(format!(
                "beta is {}x{}, expected {}x{}",
                self.beta.rows(),
                self.beta.cols(),
                dims.vocab,
                dims.topics
            )));
        }
        let expected = if self.transitions.shared { 1 } else { dims.stages };
        if self.transitions.stages.len() != expected {
            return Err(Error::ShapeError(format!(
                "{} transition functions for {} stages",
                self.transitions.stages.len(),
                dims.stages
            )));
        }
        if self.eta0.len() != dims.topics {
            return Err(Error::ShapeError("eta0 length differs from topic count".into()));
        }
        Ok(())
    }

    /// Prior standard deviation of the proportions, `√a²`.
    pub fn sigma0(&self) -> f64 {
        self.a2.sqrt()
    }

    /// Topic-word distributions, one simplex per column.
    pub fn topic_word(&self) -> Matrix {
        softmax_columns(&self.beta)
    }
}

/// `p(w | θ, β) = θ · softmax_cols(β)ᵀ`.
pub fn collapsed_word_distribution(theta: &[f64], beta: &Matrix) -> Result<Vec<f64>> {
    if theta.len() != beta.cols() {
        return Err(Error::ShapeError(format!(
            "theta has {} entries, beta has {} topics",
            theta.len(),
            beta.cols()
        )));
    }
    let topics = softmax_columns(beta);
    Ok(mix_topics(theta, &topics))
}

/// Mixture of already-normalized topic columns.
pub(crate) fn mix_topics(theta: &[f64], topics: &Matrix) -> Vec<f64> {
    (0..topics.rows()).map(|v| linalg::dot(topics.row(v), theta)).collect()
}

/// `Σ_v counts_v · log p_v` under the collapsed word distribution.
pub fn multinomial_log_likelihood(counts: &[u32], theta: &[f64], beta: &Matrix) -> Result<f64> {
    if counts.len() != beta.rows() {
        return Err(Error::ShapeError(format!(
            "{} counts for a vocabulary of {}",
            counts.len(),
            beta.rows()
        )));
    }
    let p = collapsed_word_distribution(theta, beta)?;
    Ok(counts
        .iter()
        .zip(&p)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &pv)| c as f64 * pv.max(PROB_FLOOR).ln())
        .sum())
}

/// Prior mean `μ⁰_t = f_t(η_{t-1}, X_t, Y)` for a zero-based stage `t`.
pub fn transition_mean(
    t: usize,
    eta_prev: &[f64],
    x_t: &[f64],
    y: &[f64],
    transitions: &Transitions,
) -> Result<Vec<f64>> {
    let f = transitions.stage(t);
    if eta_prev.len() + x_t.len() + y.len() != f.inputs() {
        return Err(Error::ShapeError(format!(
            "transition expects {} inputs, got {}",
            f.inputs(),
            eta_prev.len() + x_t.len() + y.len()
        )));
    }
    let mut out = vec![0.0; f.outputs()];
    f.forward_cached(eta_prev, x_t, y, &mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericError("non-finite transition mean".into()));
    }
    Ok(out)
}

/// Inclusive integer range of document lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl Default for CountRange {
    fn default() -> Self {
        CountRange { min: 50, max: 150 }
    }
}

impl CountRange {
    pub fn validate(&self) -> Result<()> {
        if self.min < 1 || self.min > self.max {
            return Err(Error::ConfigError(format!(
                "count range [{}, {}] must be nonempty with lower bound >= 1",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Output of [`forward_sample`]: the corpus plus the latent draws.
#[derive(Debug, Clone)]
pub struct ForwardSample {
    pub corpus: Corpus,
    /// Sampled unnormalized topics.
    pub beta: Matrix,
    /// Proportions indexed `[stage][subject]`.
    pub theta: Vec<Vec<Vec<f64>>>,
}

/// Samples a corpus from the generative process: `β ~ N(β₀, δ²)`, then the
/// proportion chain `η_t ~ N(f_t(η_{t-1}, X_t, Y), a²)`, then documents from
/// the collapsed multinomial.
///
/// `covariates` is laid out `(subject, stage, feature)` like
/// [`Corpus::covariate_values`].
#[allow(clippy::too_many_arguments)]
pub fn forward_sample(
    params: &GenerativeParams,
    vocab: Vec<String>,
    n_stages: usize,
    covariates: &[f64],
    groups: &[usize],
    n_groups: usize,
    count_range: CountRange,
    seed: u64,
) -> Result<ForwardSample> {
    count_range.validate()?;
    let n = groups.len();
    let k = params.beta.cols();
    let v = params.beta.rows();
    if vocab.len() != v {
        return Err(Error::ShapeError("vocabulary size differs from beta rows".into()));
    }
    if n == 0 || covariates.len() % (n * n_stages) != 0 {
        return Err(Error::ShapeError("covariates do not match subjects x stages".into()));
    }
    let p = covariates.len() / (n * n_stages);
    let dims = Dims {
        vocab: v,
        topics: k,
        features: p,
        groups: n_groups,
        stages: n_stages,
    };
    params.validate(&dims)?;

    let mut rng = rng::stream(seed, &[0xf0]);
    let delta = params.delta2.sqrt();
    let beta = Matrix::from_fn(v, k, |r, c| {
        let z: f64 = StandardNormal.sample(&mut rng);
        params.beta0_mean.get(r, c) + delta * z
    });
    let topics = softmax_columns(&beta);
    let sd = params.sigma0();
    let lengths = Uniform::new_inclusive(count_range.min, count_range.max).expect("validated range");

    let mut theta = vec![vec![Vec::new(); n]; n_stages];
    let mut docs = Vec::with_capacity(n * n_stages);
    let mut mean = vec![0.0; k];
    for i in 0..n {
        let y = encode_group(groups[i], n_groups);
        let mut eta = params.eta0.clone();
        for t in 0..n_stages {
            let x = &covariates[(i * n_stages + t) * p..(i * n_stages + t + 1) * p];
            params.transitions.stage(t).forward_cached(&eta, x, &y, &mut mean);
            for (e, m) in eta.iter_mut().zip(&mean) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *e = m + sd * z;
            }
            let th = linalg::softmax(&eta)?;
            let word_probs = mix_topics(&th, &topics);
            let len = lengths.sample(&mut rng);
            docs.push(Some(sample_multinomial(&word_probs, len, &mut rng)));
            theta[t][i] = th;
        }
    }
    let corpus = Corpus::new(vocab, n_stages, docs, p, covariates.to_vec(), groups.to_vec(), n_groups, false)?;
    Ok(ForwardSample { corpus, beta, theta })
}

/// Draws `count` words from a categorical distribution by inverse CDF.
pub(crate) fn sample_multinomial(probs: &[f64], count: u32, rng: &mut impl Rng) -> Document {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let mut counts = vec![0u32; probs.len()];
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
        counts[idx] += 1;
    }
    Document::from_dense(&counts)
}
