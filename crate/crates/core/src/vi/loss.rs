//! The longitudinal negative ELBO with exact reverse-mode gradients.
//!
//! Per subject the forward pass walks the observed stages in order, keeping
//! the factual and counterfactual encoder chains and the `M` sampled
//! proportion chains. The backward pass replays the tape in reverse, carrying
//! gradients through the recurrent encoder input and through the transition
//! input `η_{t-1}`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{axpy, softmax_backward, softmax_columns, softmax_in_place, Matrix};
use crate::model::{encode_group, Dims, GenerativeParams, Transitions, PROB_FLOOR};
use crate::rng;
use crate::vi::encoder::{EncoderInput, EncoderParams, StageCache};
use crate::vi::terms::{distance_with_grad, kl1, kl1_grad, DistanceKind, MomentsGrad, PosteriorMoments};
use crate::vi::TrainConfig;

/// Documents per work unit. Fixed so the reduction order never depends on
/// the thread count.
const CHUNK: usize = 8;

/// Standard-normal noise for one subject, laid out as `[stage][sample][k]`.
pub fn draw_noise(seed: u64, keys: &[u64], n_stages: usize, m: usize, k: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, keys);
    (0..n_stages * m * k).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Loss split into its three parts; `total = kl + nll − dist_weight·distance`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub kl: f64,
    pub nll: f64,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub terms: LossTerms,
    pub grad_beta: Matrix,
    pub grad_transitions: Transitions,
    pub grad_encoder: EncoderParams,
}

/// Everything one evaluation needs besides the batch.
pub(crate) struct LossContext<'a> {
    pub corpus: &'a Corpus,
    /// Normalized topic-word matrix used at each stage.
    pub topics: Vec<&'a Matrix>,
    pub transitions: &'a Transitions,
    pub eta0: &'a [f64],
    pub sigma0: f64,
    pub encoder: &'a EncoderParams,
    pub m: usize,
    pub dist_kind: DistanceKind,
    pub dist_weight: f64,
}

impl LossContext<'_> {
    fn distance_active(&self) -> bool {
        self.dist_kind != DistanceKind::None && self.dist_weight != 0.0
    }
}

pub(crate) struct Accum {
    pub kl: f64,
    pub nll: f64,
    pub distance: f64,
    pub grad_topics: Vec<Matrix>,
    pub grad_transitions: Transitions,
    pub grad_encoder: EncoderParams,
}

impl Accum {
    fn new(ctx: &LossContext<'_>, want_grad: bool) -> Self {
        let (grad_topics, grad_transitions, grad_encoder) = if want_grad {
            (
                ctx.topics.iter().map(|b| Matrix::zeros(b.rows(), b.cols())).collect(),
                zeros_like_transitions(ctx.transitions),
                zeros_like_encoder(ctx.encoder),
            )
        } else {
            (
                Vec::new(),
                Transitions {
                    shared: true,
                    stages: Vec::new(),
                },
                EncoderParams {
                    stages: Vec::new(),
                    ..ctx.encoder.clone_shape()
                },
            )
        };
        Accum {
            kl: 0.0,
            nll: 0.0,
            distance: 0.0,
            grad_topics,
            grad_transitions,
            grad_encoder,
        }
    }

    fn merge(&mut self, other: Accum) {
        self.kl += other.kl;
        self.nll += other.nll;
        self.distance += other.distance;
        for (a, b) in self.grad_topics.iter_mut().zip(&other.grad_topics) {
            axpy(1.0, b.as_slice(), a.as_mut_slice());
        }
        for (a, b) in self.grad_transitions.stages.iter_mut().zip(&other.grad_transitions.stages) {
            for (x, y) in a.slices_mut().into_iter().zip(b.slices()) {
                axpy(1.0, y, x);
            }
        }
        for (x, y) in self.grad_encoder.slices_mut().into_iter().zip(other.grad_encoder.slices()) {
            axpy(1.0, y, x);
        }
    }

    pub fn total(&self, dist_weight: f64) -> f64 {
        self.kl + self.nll - dist_weight * self.distance
    }
}

impl EncoderParams {
    fn clone_shape(&self) -> EncoderParams {
        EncoderParams {
            vocab: self.vocab,
            features: self.features,
            groups: self.groups,
            topics: self.topics,
            hidden: self.hidden,
            stages: Vec::new(),
        }
    }
}

pub(crate) fn zeros_like_transitions(t: &Transitions) -> Transitions {
    let mut z = t.clone();
    for s in z.stages.iter_mut() {
        s.slices_mut().into_iter().for_each(|x| x.fill(0.0));
    }
    z
}

pub(crate) fn zeros_like_encoder(e: &EncoderParams) -> EncoderParams {
    let mut z = e.clone();
    z.slices_mut().into_iter().for_each(|x| x.fill(0.0));
    z
}

struct StageTape {
    t: usize,
    bow: Vec<(usize, f64)>,
    prevs: Vec<Vec<f64>>,
    cache: StageCache,
    moments: Vec<PosteriorMoments>,
    eta_prev: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    mu0: Vec<Vec<f64>>,
    trans_hidden: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    d_distance: Option<(MomentsGrad, Vec<MomentsGrad>)>,
}

/// Forward and, when `want_grad`, backward pass for one subject. `norm` is
/// the per-subject weight (1/b for a batch of b subjects).
fn subject_pass(ctx: &LossContext<'_>, i: usize, eps: &[f64], norm: f64, want_grad: bool, acc: &mut Accum) {
    let corpus = ctx.corpus;
    let k = ctx.encoder.topics;
    let m = ctx.m;
    let n_groups = corpus.n_groups();
    let group = corpus.group(i);
    let dist = ctx.distance_active();
    let mut groups = vec![group];
    if dist {
        groups.extend((0..n_groups).filter(|&g| g != group));
    }
    let ys: Vec<Vec<f64>> = groups.iter().map(|&g| encode_group(g, n_groups)).collect();
    let y_refs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    let s = norm / m as f64;
    let sigma0 = ctx.sigma0;

    let mut prev_mu: Vec<Vec<f64>> = vec![ctx.eta0.to_vec(); groups.len()];
    let mut prev_eta: Vec<Vec<f64>> = vec![ctx.eta0.to_vec(); m];
    let mut tape: Vec<StageTape> = Vec::new();

    for t in 0..corpus.n_stages() {
        let Some(doc) = corpus.doc(i, t) else { continue };
        let x = corpus.covariates(i, t);
        let bow = doc.frequencies();
        let (moments, cache) = {
            let prev_refs: Vec<&[f64]> = prev_mu.iter().map(|p| p.as_slice()).collect();
            ctx.encoder.forward_groups(t, EncoderInput { bow: &bow, x }, &y_refs, &prev_refs)
        };
        let fact = &moments[0];
        let topics = ctx.topics[t];
        let trans = ctx.transitions.stage(t);
        let mut etas = Vec::with_capacity(m);
        let mut thetas = Vec::with_capacity(m);
        let mut mu0s = Vec::with_capacity(m);
        let mut hiddens = Vec::with_capacity(m);
        let mut probs = Vec::with_capacity(m);
        for j in 0..m {
            let e = &eps[(t * m + j) * k..(t * m + j + 1) * k];
            let eta: Vec<f64> = (0..k).map(|d| fact.mu[d] + e[d] * fact.sigma[d]).collect();
            let mut theta = eta.clone();
            softmax_in_place(&mut theta);
            let mut mu0 = vec![0.0; k];
            let hidden = trans.forward_cached(&prev_eta[j], x, &ys[0], &mut mu0);
            acc.kl += s * (0..k).map(|d| kl1(fact.mu[d], fact.sigma[d], mu0[d], sigma0)).sum::<f64>();
            let mut p_words = Vec::with_capacity(doc.entries().len());
            let mut ll = 0.0;
            for &(v, c) in doc.entries() {
                let p: f64 = topics.row(v).iter().zip(&theta).map(|(b, th)| b * th).sum();
                ll += c as f64 * p.max(PROB_FLOOR).ln();
                p_words.push(p);
            }
            acc.nll -= s * ll;
            etas.push(eta);
            thetas.push(theta);
            mu0s.push(mu0);
            hiddens.push(hidden);
            probs.push(p_words);
        }
        let mut d_distance = None;
        if dist {
            let (value, gf, gc) = distance_with_grad(ctx.dist_kind, fact, &moments[1..], want_grad);
            acc.distance += norm * value;
            if want_grad {
                d_distance = Some((gf, gc));
            }
        }
        let eta_prev = std::mem::replace(&mut prev_eta, etas.clone());
        let prevs = std::mem::replace(&mut prev_mu, moments.iter().map(|q| q.mu.clone()).collect());
        if want_grad {
            tape.push(StageTape {
                t,
                bow,
                prevs,
                cache,
                moments,
                eta_prev,
                theta: thetas,
                mu0: mu0s,
                trans_hidden: hiddens,
                probs,
                d_distance,
            });
        }
    }
    if !want_grad {
        return;
    }

    let mut carry_mu: Vec<Vec<f64>> = vec![vec![0.0; k]; groups.len()];
    let mut carry_eta: Vec<Vec<f64>> = vec![vec![0.0; k]; m];
    let n_tape = tape.len();
    for (pos, st) in tape.iter().enumerate().rev() {
        let t = st.t;
        let first = pos == 0;
        let doc = corpus.doc(i, t).expect("taped stage has a document");
        let x = corpus.covariates(i, t);
        let topics = ctx.topics[t];
        let trans = ctx.transitions.stage(t);
        let fact = &st.moments[0];
        let mut d_moments: Vec<MomentsGrad> = carry_mu
            .iter()
            .map(|c| MomentsGrad {
                mu: c.clone(),
                sigma: vec![0.0; k],
            })
            .collect();
        let mut next_carry_eta = vec![vec![0.0; k]; m];
        for j in 0..m {
            let e = &eps[(t * m + j) * k..(t * m + j + 1) * k];
            let mut g_eta = if pos + 1 < n_tape { carry_eta[j].clone() } else { vec![0.0; k] };
            let mut d_mu0 = vec![0.0; k];
            for d in 0..k {
                let g = kl1_grad(fact.mu[d], fact.sigma[d], st.mu0[j][d], sigma0);
                d_moments[0].mu[d] += s * g[0];
                d_moments[0].sigma[d] += s * g[1];
                d_mu0[d] = s * g[2];
            }
            let d_eta_prev = if first { None } else { Some(next_carry_eta[j].as_mut_slice()) };
            trans.backward(
                acc.grad_transitions.stage_mut(t),
                &st.eta_prev[j],
                x,
                &ys[0],
                &st.trans_hidden[j],
                &d_mu0,
                d_eta_prev,
            );
            let theta = &st.theta[j];
            let mut g_theta = vec![0.0; k];
            let gt = &mut acc.grad_topics[t];
            for (&(v, c), &p) in doc.entries().iter().zip(&st.probs[j]) {
                if p < PROB_FLOOR {
                    continue;
                }
                let dp = -s * c as f64 / p;
                axpy(dp, topics.row(v), &mut g_theta);
                axpy(dp, theta, gt.row_mut(v));
            }
            softmax_backward(theta, &g_theta, &mut g_eta);
            for d in 0..k {
                d_moments[0].mu[d] += g_eta[d];
                d_moments[0].sigma[d] += g_eta[d] * e[d];
            }
        }
        if let Some((gf, gc)) = &st.d_distance {
            let w = -ctx.dist_weight * norm;
            for (dm, g) in d_moments.iter_mut().zip(std::iter::once(gf).chain(gc.iter())) {
                axpy(w, &g.mu, &mut dm.mu);
                axpy(w, &g.sigma, &mut dm.sigma);
            }
        }
        let mut d_prevs = vec![vec![0.0; k]; groups.len()];
        let prev_refs: Vec<&[f64]> = st.prevs.iter().map(|p| p.as_slice()).collect();
        ctx.encoder.backward_groups(
            &mut acc.grad_encoder,
            t,
            EncoderInput { bow: &st.bow, x },
            &y_refs,
            &prev_refs,
            &st.cache,
            &d_moments,
            &mut d_prevs,
        );
        carry_mu = d_prevs;
        carry_eta = next_carry_eta;
    }
}

/// Evaluates the batch loss (normalized by `1/(b·M)`) and optionally its
/// gradient with respect to the per-stage topic matrices, transitions and
/// encoder. `eps[n]` is the noise of `batch[n]`.
pub(crate) fn evaluate(ctx: &LossContext<'_>, batch: &[usize], eps: &[Vec<f64>], want_grad: bool) -> Accum {
    let norm = 1.0 / batch.len() as f64;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts: Vec<Accum> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accum::new(ctx, want_grad);
            for &n in chunk {
                subject_pass(ctx, batch[n], &eps[n], norm, want_grad, &mut acc);
            }
            acc
        })
        .collect();
    let mut iter = parts.into_iter();
    let mut total = iter.next().unwrap_or_else(|| Accum::new(ctx, want_grad));
    for p in iter {
        total.merge(p);
    }
    total
}

/// Chain rule through the column softmax: `G` is the gradient with respect
/// to the normalized topics `softmax_cols(β)`.
pub(crate) fn beta_gradient(topics: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(topics.rows(), topics.cols());
    for c in 0..topics.cols() {
        let p = topics.column(c);
        let d = g.column(c);
        let mut col = vec![0.0; p.len()];
        softmax_backward(&p, &d, &mut col);
        for (r, v) in col.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    out
}

pub(crate) fn check_inputs(corpus: &Corpus, gen: &GenerativeParams, enc: &EncoderParams, topics: usize) -> Result<()> {
    let dims = Dims::of(corpus, topics);
    gen.validate(&dims)?;
    if enc.vocab != dims.vocab
        || enc.features != dims.features
        || enc.groups != dims.groups
        || enc.topics != dims.topics
        || enc.stages.len() != dims.stages
    {
        return Err(Error::ShapeError("encoder does not match the corpus dimensions".into()));
    }
    if !(gen.a2 > 0.0) {
        return Err(Error::ConfigError("proportion prior variance must be positive".into()));
    }
    Ok(())
}

/// Minibatch negative ELBO over the subjects in `batch` with the given noise
/// (`eps[n]` from [`draw_noise`] for `batch[n]`), normalized by `1/(b·M)`,
/// with exact gradients for β, the transitions and the encoder.
pub fn longitudinal_loss(
    corpus: &Corpus,
    batch: &[usize],
    gen: &GenerativeParams,
    enc: &EncoderParams,
    cfg: &TrainConfig,
    eps: &[Vec<f64>],
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::ShapeError("empty batch".into()));
    }
    if cfg.m == 0 {
        return Err(Error::ConfigError("M must be at least 1".into()));
    }
    let k = gen.beta.cols();
    check_inputs(corpus, gen, enc, k)?;
    if eps.len() != batch.len() || eps.iter().any(|e| e.len() != corpus.n_stages() * cfg.m * k) {
        return Err(Error::ShapeError("noise does not match batch layout".into()));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= corpus.n_subjects()) {
        return Err(Error::ShapeError(format!("subject {i} out of range")));
    }
    let topic_word = softmax_columns(&gen.beta);
    let ctx = LossContext {
        corpus,
        topics: vec![&topic_word; corpus.n_stages()],
        transitions: &gen.transitions,
        eta0: &gen.eta0,
        sigma0: gen.sigma0(),
        encoder: enc,
        m: cfg.m,
        dist_kind: cfg.dist_kind,
        dist_weight: cfg.dist_weight,
    };
    let acc = evaluate(&ctx, batch, eps, true);
    let loss = acc.total(cfg.dist_weight);
    if !loss.is_finite() {
        return Err(Error::NumericError(format!("non-finite loss {loss}")));
    }
    let mut g = Matrix::zeros(topic_word.rows(), topic_word.cols());
    for gt in &acc.grad_topics {
        axpy(1.0, gt.as_slice(), g.as_mut_slice());
    }
    Ok(LossOutput {
        loss,
        terms: LossTerms {
            total: loss,
            kl: acc.kl,
            nll: acc.nll,
            distance: acc.distance,
        },
        grad_beta: beta_gradient(&topic_word, &g),
        grad_transitions: acc.grad_transitions,
        grad_encoder: acc.grad_encoder,
    })
}
