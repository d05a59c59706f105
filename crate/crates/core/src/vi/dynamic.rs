//! Evolving topics: each stage gets a Gaussian variational topic matrix
//! `β̃_t = μ_t + σ_t·ε_t` linked by the random walk `β_t ~ N(β_{t-1}, σ₀²)`.

use rand_distr::{Distribution, StandardNormal};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{axpy, sigmoid, softmax_columns, softplus, Matrix};
use crate::model::GenerativeParams;
use crate::rng;
use crate::vi::encoder::EncoderParams;
use crate::vi::loss::{beta_gradient, check_inputs, evaluate, LossContext, LossTerms};
use crate::vi::terms::{kl1, kl1_grad};
use crate::vi::train::{fit, init_params, run_epochs, subject_noise, FittedModel, Objective, TrainConfig, TAG_EVAL, TAG_TRAIN};

const TOPIC_SIGMA_MIN: f64 = 1e-6;
const TOPIC_SIGMA_INIT: f64 = 0.05;
const TAG_TOPICS: u64 = 6;

/// Sum over stages of the topic KL terms: stage one against
/// `N(beta0_mean, delta2)`, later stages against `N(β̃_{t-1}, sigma0_sq)`.
pub fn topic_kl_chain(
    mu: &[Matrix],
    sigma: &[Matrix],
    beta_tilde: &[Matrix],
    beta0_mean: &Matrix,
    delta2: f64,
    sigma0_sq: f64,
) -> Result<f64> {
    if mu.len() != sigma.len() || mu.len() != beta_tilde.len() || mu.is_empty() {
        return Err(Error::ShapeError("topic chain inputs differ in length".into()));
    }
    if !(delta2 > 0.0 && sigma0_sq > 0.0) {
        return Err(Error::NumericError("topic prior variances must be positive".into()));
    }
    if sigma.iter().flat_map(|s| s.as_slice()).any(|&s| !(s > 0.0)) {
        return Err(Error::NumericError("topic scales must be positive".into()));
    }
    Ok(chain_with_grad(mu, sigma, beta_tilde, beta0_mean, delta2, sigma0_sq, None))
}

struct ChainGrad<'a> {
    mu: &'a mut [Matrix],
    sigma: &'a mut [Matrix],
    beta_tilde: &'a mut [Matrix],
}

fn chain_with_grad(
    mu: &[Matrix],
    sigma: &[Matrix],
    beta_tilde: &[Matrix],
    beta0_mean: &Matrix,
    delta2: f64,
    sigma0_sq: f64,
    mut grad: Option<ChainGrad<'_>>,
) -> f64 {
    let mut total = 0.0;
    for t in 0..mu.len() {
        let (prior, scale) = if t == 0 {
            (beta0_mean, delta2.sqrt())
        } else {
            (&beta_tilde[t - 1], sigma0_sq.sqrt())
        };
        for idx in 0..mu[t].as_slice().len() {
            let (m, s, p) = (mu[t].as_slice()[idx], sigma[t].as_slice()[idx], prior.as_slice()[idx]);
            total += kl1(m, s, p, scale);
            if let Some(g) = grad.as_mut() {
                let d = kl1_grad(m, s, p, scale);
                g.mu[t].as_mut_slice()[idx] += d[0];
                g.sigma[t].as_mut_slice()[idx] += d[1];
                if t > 0 {
                    g.beta_tilde[t - 1].as_mut_slice()[idx] += d[2];
                }
            }
        }
    }
    total
}

struct Evolving<'a> {
    corpus: &'a Corpus,
    cfg: &'a TrainConfig,
    sigma0_sq: f64,
    gen: GenerativeParams,
    enc: EncoderParams,
    mu: Vec<Matrix>,
    rho: Vec<Matrix>,
    all: Vec<usize>,
}

impl Evolving<'_> {
    fn sigma(&self) -> Vec<Matrix> {
        self.rho
            .iter()
            .map(|r| {
                let mut s = r.clone();
                s.as_mut_slice().iter_mut().for_each(|x| *x = softplus(*x).max(TOPIC_SIGMA_MIN));
                s
            })
            .collect()
    }

    fn context<'b>(&'b self, topics: &'b [Matrix]) -> LossContext<'b> {
        LossContext {
            corpus: self.corpus,
            topics: topics.iter().collect(),
            transitions: &self.gen.transitions,
            eta0: &self.gen.eta0,
            sigma0: self.gen.sigma0(),
            encoder: &self.enc,
            m: self.cfg.m,
            dist_kind: self.cfg.dist_kind,
            dist_weight: self.cfg.dist_weight,
        }
    }

    fn topic_kl(&self, sigma: &[Matrix], beta_tilde: &[Matrix], grad: Option<ChainGrad<'_>>) -> f64 {
        chain_with_grad(&self.mu, sigma, beta_tilde, &self.gen.beta0_mean, self.gen.delta2, self.sigma0_sq, grad)
    }
}

impl Objective for Evolving<'_> {
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for st in self.gen.transitions.stages.iter_mut() {
            v.extend(st.slices_mut());
        }
        v.extend(self.enc.slices_mut());
        v.extend(self.mu.iter_mut().map(|m| m.as_mut_slice()));
        v.extend(self.rho.iter_mut().map(|m| m.as_mut_slice()));
        v
    }

    fn batch(&self, batch: &[usize], epoch: usize) -> (f64, Vec<Vec<f64>>) {
        let n_stages = self.mu.len();
        let (v, k) = (self.mu[0].rows(), self.mu[0].cols());
        let sigma = self.sigma();
        let mut r = rng::stream(self.cfg.seed, &[TAG_TOPICS, epoch as u64, batch[0] as u64]);
        let eps: Vec<Matrix> = (0..n_stages).map(|_| Matrix::from_fn(v, k, |_, _| StandardNormal.sample(&mut r))).collect();
        let beta_tilde: Vec<Matrix> = (0..n_stages)
            .map(|t| {
                let mut b = self.mu[t].clone();
                for ((bi, s), e) in b.as_mut_slice().iter_mut().zip(sigma[t].as_slice()).zip(eps[t].as_slice()) {
                    *bi += s * e;
                }
                b
            })
            .collect();
        let topics: Vec<Matrix> = beta_tilde.iter().map(softmax_columns).collect();
        let noise = subject_noise(self.corpus, self.cfg, k, TAG_TRAIN, epoch, batch);
        let acc = evaluate(&self.context(&topics), batch, &noise, true);

        let zeros = || vec![Matrix::zeros(v, k); n_stages];
        let (mut g_mu, mut g_sigma, mut g_bt) = (zeros(), zeros(), zeros());
        let n = self.corpus.n_subjects() as f64;
        let topic_kl = self.topic_kl(
            &sigma,
            &beta_tilde,
            Some(ChainGrad {
                mu: &mut g_mu,
                sigma: &mut g_sigma,
                beta_tilde: &mut g_bt,
            }),
        );
        for t in 0..n_stages {
            g_mu[t].as_mut_slice().iter_mut().for_each(|x| *x /= n);
            g_sigma[t].as_mut_slice().iter_mut().for_each(|x| *x /= n);
            g_bt[t].as_mut_slice().iter_mut().for_each(|x| *x /= n);
            let recon = beta_gradient(&topics[t], &acc.grad_topics[t]);
            axpy(1.0, recon.as_slice(), g_bt[t].as_mut_slice());
            axpy(1.0, g_bt[t].as_slice(), g_mu[t].as_mut_slice());
            for ((gs, gb), e) in g_sigma[t].as_mut_slice().iter_mut().zip(g_bt[t].as_slice()).zip(eps[t].as_slice()) {
                *gs += gb * e;
            }
        }
        let mut grads: Vec<Vec<f64>> = Vec::new();
        for st in &acc.grad_transitions.stages {
            grads.extend(st.slices().into_iter().map(|s| s.to_vec()));
        }
        grads.extend(acc.grad_encoder.slices().into_iter().map(|s| s.to_vec()));
        grads.extend(g_mu.iter().map(|m| m.as_slice().to_vec()));
        for t in 0..n_stages {
            let g: Vec<f64> = g_sigma[t]
                .as_slice()
                .iter()
                .zip(self.rho[t].as_slice())
                .map(|(&gs, &r)| if softplus(r) > TOPIC_SIGMA_MIN { gs * sigmoid(r) } else { 0.0 })
                .collect();
            grads.push(g);
        }
        (acc.total(self.cfg.dist_weight) + topic_kl / n, grads)
    }

    fn full_loss(&self) -> LossTerms {
        let sigma = self.sigma();
        let topics: Vec<Matrix> = self.mu.iter().map(softmax_columns).collect();
        let noise = subject_noise(self.corpus, self.cfg, self.mu[0].cols(), TAG_EVAL, 0, &self.all);
        let acc = evaluate(&self.context(&topics), &self.all, &noise, false);
        let kl = acc.kl + self.topic_kl(&sigma, &self.mu, None) / self.corpus.n_subjects() as f64;
        LossTerms {
            total: kl + acc.nll - self.cfg.dist_weight * acc.distance,
            kl,
            nll: acc.nll,
            distance: acc.distance,
        }
    }
}

/// Fits per-stage topics. A zero random-walk variance pins all stages to one
/// topic matrix, which is exactly the consistent-topic trainer.
pub fn fit_dynamic_topics(corpus: &Corpus, k: usize, cfg: &TrainConfig, sigma0_sq_topic: f64) -> Result<FittedModel> {
    if !(sigma0_sq_topic >= 0.0 && sigma0_sq_topic.is_finite()) {
        return Err(Error::ConfigError("topic random-walk variance must be nonnegative".into()));
    }
    if sigma0_sq_topic == 0.0 {
        let mut fitted = fit(corpus, k, cfg)?;
        fitted.stage_beta = Some(vec![fitted.generative.beta.clone(); corpus.n_stages()]);
        fitted.topic_drift_variance = Some(0.0);
        return Ok(fitted);
    }
    let (gen, enc) = init_params(corpus, k, cfg)?;
    if !(gen.delta2 > 0.0) {
        return Err(Error::ConfigError("evolving topics need a positive topic prior variance".into()));
    }
    check_inputs(corpus, &gen, &enc, k)?;
    let rho0 = TOPIC_SIGMA_INIT.exp_m1().ln();
    let t_count = corpus.n_stages();
    let mut obj = Evolving {
        corpus,
        cfg,
        sigma0_sq: sigma0_sq_topic,
        mu: vec![gen.beta.clone(); t_count],
        rho: vec![Matrix::from_fn(gen.beta.rows(), k, |_, _| rho0); t_count],
        gen,
        enc,
        all: (0..corpus.n_subjects()).collect(),
    };
    let log = run_epochs(&mut obj, corpus.n_subjects(), cfg)?;
    let mut mean = Matrix::zeros(obj.mu[0].rows(), k);
    for m in &obj.mu {
        axpy(1.0 / t_count as f64, m.as_slice(), mean.as_mut_slice());
    }
    obj.gen.beta = mean;
    Ok(FittedModel {
        config: cfg.clone(),
        vocab: corpus.vocab().to_vec(),
        n_groups: corpus.n_groups(),
        standardization: corpus.standardization().cloned(),
        generative: obj.gen,
        encoder: obj.enc,
        stage_beta: Some(obj.mu),
        topic_drift_variance: Some(sigma0_sq_topic),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::vi::terms::gaussian_kl_diag;

    fn corpus() -> Corpus {
        let docs = vec![
            Some(Document::from_counts([(0, 4), (1, 2)])),
            Some(Document::from_counts([(2, 3)])),
            Some(Document::from_counts([(1, 1), (3, 5)])),
            Some(Document::from_counts([(0, 2), (3, 2)])),
        ];
        let vocab = (0..4).map(|v| format!("w{v}")).collect();
        Corpus::new(vocab, 2, docs, 1, vec![0.1, -0.3, 1.0, 0.4], vec![0, 1], 2, false).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            t_max: 4,
            batch_size: 1,
            encoder_hidden: 3,
            m: 2,
            ..Default::default()
        }
    }

    #[test]
    fn chain_matches_composed_gaussian_kls() {
        let mu = vec![Matrix::from_fn(2, 1, |r, _| 0.3 * r as f64), Matrix::from_fn(2, 1, |r, _| -0.2 + r as f64)];
        let sigma = vec![Matrix::from_fn(2, 1, |r, _| 0.5 + r as f64), Matrix::from_fn(2, 1, |_, _| 0.7)];
        let bt = vec![Matrix::from_fn(2, 1, |r, _| 1.0 - r as f64), Matrix::zeros(2, 1)];
        let prior = Matrix::from_fn(2, 1, |r, _| 0.1 * r as f64);
        let v = topic_kl_chain(&mu, &sigma, &bt, &prior, 2.0, 0.5).unwrap();
        let expected = gaussian_kl_diag(mu[0].as_slice(), sigma[0].as_slice(), prior.as_slice(), &[2f64.sqrt(); 2]).unwrap()
            + gaussian_kl_diag(mu[1].as_slice(), sigma[1].as_slice(), bt[0].as_slice(), &[0.5f64.sqrt(); 2]).unwrap();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_variance_pins_stage_topics() {
        let fitted = fit_dynamic_topics(&corpus(), 2, &quick(), 0.0).unwrap();
        let b = fitted.stage_beta.as_ref().unwrap();
        assert!(b.iter().all(|m| m == &b[0]));
        let plain = fit(&corpus(), 2, &quick()).unwrap();
        assert_eq!(plain.generative.beta, b[0]);
    }

    #[test]
    fn evolving_topics_train_and_differ_by_stage() {
        let cfg = TrainConfig { t_max: 20, ..quick() };
        let fitted = fit_dynamic_topics(&corpus(), 2, &cfg, 0.5).unwrap();
        let b = fitted.stage_beta.as_ref().unwrap();
        assert_eq!(b.len(), 2);
        assert_ne!(b[0], b[1]);
        assert!(fitted.log.iter().all(|l| l.loss.is_finite()));
    }

    #[test]
    fn evolving_gradients_match_finite_differences() {
        let c = corpus();
        let cfg = TrainConfig {
            dist_weight: 0.5,
            ..quick()
        };
        let (gen, enc) = init_params(&c, 2, &cfg).unwrap();
        let rho = vec![Matrix::from_fn(4, 2, |r, k| -1.0 + 0.1 * (r + k) as f64); 2];
        let mu = vec![Matrix::from_fn(4, 2, |r, k| 0.2 * r as f64 - 0.3 * k as f64), gen.beta.clone()];
        let mut obj = Evolving {
            corpus: &c,
            cfg: &cfg,
            sigma0_sq: 0.3,
            gen,
            enc,
            mu,
            rho,
            all: vec![0, 1],
        };
        let (_, grads) = obj.batch(&[0, 1], 3);
        let n_slices = grads.len();
        let h = 1e-5;
        for sl in [n_slices - 4, n_slices - 3, n_slices - 2, n_slices - 1, 0] {
            for idx in 0..grads[sl].len() {
                obj.params_mut()[sl][idx] += h;
                let up = obj.batch(&[0, 1], 3).0;
                obj.params_mut()[sl][idx] -= 2.0 * h;
                let down = obj.batch(&[0, 1], 3).0;
                obj.params_mut()[sl][idx] += h;
                let fd = (up - down) / (2.0 * h);
                let a = grads[sl][idx];
                assert!((fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-3), "slice {sl} idx {idx}: {fd} vs {a}");
            }
        }
    }
}
