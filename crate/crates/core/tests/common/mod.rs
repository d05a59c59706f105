#![allow(dead_code)]

use cftm::model::GenerativeParams;
use cftm::rng;
use cftm::vi::{draw_noise, EncoderParams};
use cftm::{Corpus, Dims, Document, GenerativeConfig};
use rand::Rng;

/// Small random corpus with uniform covariates and round-robin groups.
pub fn toy_corpus(n: usize, t: usize, v: usize, p: usize, g: usize, seed: u64) -> Corpus {
    let mut r = rng::stream(seed, &[99]);
    let mut docs = Vec::new();
    let mut cov = Vec::new();
    for _ in 0..n * t {
        let counts: Vec<u32> = (0..v).map(|_| r.random_range(0..4)).collect();
        let mut d = Document::from_dense(&counts);
        if d.is_empty() {
            d = Document::from_counts([(0, 1)]);
        }
        docs.push(Some(d));
        for _ in 0..p {
            cov.push(r.random_range(-1.0..1.0));
        }
    }
    let groups = (0..n).map(|i| i % g).collect();
    let vocab = (0..v).map(|w| format!("w{w}")).collect();
    Corpus::new(vocab, t, docs, p, cov, groups, g, false).unwrap()
}

/// Random, non-degenerate parameters for loss checks.
pub fn random_params(corpus: &Corpus, k: usize, hidden: Option<usize>, seed: u64) -> (GenerativeParams, EncoderParams) {
    let dims = Dims::of(corpus, k);
    let mut r = rng::stream(seed, &[7]);
    let cfg = GenerativeConfig {
        a2: 0.8,
        transition_hidden: hidden,
        ..Default::default()
    };
    let mut gen = GenerativeParams::random(&dims, &cfg, 0.5, &mut r).unwrap();
    for t in gen.transitions.stages.iter_mut() {
        for s in t.slices_mut() {
            s.iter_mut().for_each(|x| *x += r.random_range(-0.3..0.3));
        }
    }
    gen.eta0 = (0..k).map(|_| r.random_range(-0.5..0.5)).collect();
    let mut enc = EncoderParams::random(&dims, 3, 0.5, &mut r).unwrap();
    for s in enc.slices_mut() {
        s.iter_mut().for_each(|x| *x += r.random_range(-0.2..0.2));
    }
    (gen, enc)
}

pub fn noise(corpus: &Corpus, batch: &[usize], m: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    batch.iter().map(|&i| draw_noise(seed, &[i as u64], corpus.n_stages(), m, k)).collect()
}

/// Two topics on disjoint halves of the vocabulary. Subject `i` writes from
/// topic `i % 2` at every stage. Returns the corpus and the source topic of
/// each subject.
pub fn separable_corpus(n: usize, t: usize, v: usize, seed: u64) -> (Corpus, Vec<usize>) {
    let mut r = rng::stream(seed, &[42]);
    let half = v / 2;
    let mut docs = Vec::new();
    let mut cov = Vec::new();
    let mut source = Vec::new();
    for i in 0..n {
        let topic = i % 2;
        source.push(topic);
        for _ in 0..t {
            let mut counts = vec![0u32; v];
            for _ in 0..30 {
                counts[topic * half + r.random_range(0..half)] += 1;
            }
            docs.push(Some(Document::from_dense(&counts)));
            cov.push(r.random_range(-1.0..1.0));
        }
    }
    let groups = (0..n).map(|i| (i / 2) % 2).collect();
    let vocab = (0..v).map(|w| format!("w{w}")).collect();
    (Corpus::new(vocab, t, docs, 1, cov, groups, 2, false).unwrap(), source)
}

/// Closed-form normal density.
pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `∫ q log(q/p)` for 1-d normals by composite Simpson quadrature over
/// `μ_q ± 12σ_q`.
pub fn quadrature_kl(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (mq - 12.0 * sq, mq + 12.0 * sq);
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let q = normal_pdf(x, mq, sq);
        q * (log_normal_pdf(x, mq, sq) - log_normal_pdf(x, mp, sp))
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    s * h / 3.0
}
