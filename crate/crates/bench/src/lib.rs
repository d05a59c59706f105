//! Shared fixtures for the benchmarks.

use cftm::vi::{draw_noise, init_params, EncoderParams};
use cftm::{simulate, Corpus, GenerativeParams, SimConfig, TrainConfig};

pub struct Fixture {
    pub corpus: Corpus,
    pub gen: GenerativeParams,
    pub enc: EncoderParams,
    pub cfg: TrainConfig,
    pub batch: Vec<usize>,
    pub eps: Vec<Vec<f64>>,
}

/// A simulated corpus with freshly initialized parameters and one
/// minibatch worth of noise.
pub fn fixture(n_subjects: usize, n_stages: usize, n_topics: usize, batch: usize) -> Fixture {
    let sim = SimConfig {
        n_subjects,
        n_stages,
        n_topics,
        ..Default::default()
    };
    let (corpus, _) = simulate(&sim).expect("valid simulation config");
    let cfg = TrainConfig {
        batch_size: batch,
        ..Default::default()
    };
    let (gen, enc) = init_params(&corpus, n_topics, &cfg).expect("valid training config");
    let batch: Vec<usize> = (0..batch.min(n_subjects)).collect();
    let eps = batch
        .iter()
        .map(|&i| draw_noise(1, &[i as u64], n_stages, cfg.m, n_topics))
        .collect();
    Fixture {
        corpus,
        gen,
        enc,
        cfg,
        batch,
        eps,
    }
}
