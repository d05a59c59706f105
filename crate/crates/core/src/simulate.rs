//! Synthetic longitudinal corpora with known topics and proportions.
//!
//! Covariates follow a Gaussian random walk over stages, proportions are a
//! softmax of covariate, carry-over and group effects, and documents are
//! multinomial draws from the resulting word distribution.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{mix_topics, sample_multinomial, CountRange};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Linear,
    Nonlinear,
}

/// Elementwise transforms applied to covariates in the nonlinear prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    X,
    X2,
    X3,
    Arctan,
    Sign,
}

impl Basis {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Basis::X => x,
            Basis::X2 => x * x,
            Basis::X3 => x * x * x,
            Basis::Arctan => x.atan(),
            Basis::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn default_set() -> Vec<Basis> {
        vec![Basis::X, Basis::X2, Basis::X3, Basis::Arctan, Basis::Sign]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub n_stages: usize,
    pub vocab_size: usize,
    pub n_topics: usize,
    pub n_features: usize,
    pub n_groups: usize,
    pub prior_kind: PriorKind,
    pub basis: Vec<Basis>,
    /// Topic drift magnitude; zero keeps topics identical across stages.
    pub phi_drift: f64,
    pub group_effect: bool,
    pub count_range: CountRange,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_subjects: 1000,
            n_stages: 3,
            vocab_size: 200,
            n_topics: 3,
            n_features: 20,
            n_groups: 2,
            prior_kind: PriorKind::Nonlinear,
            basis: Basis::default_set(),
            phi_drift: 0.0,
            group_effect: true,
            count_range: CountRange::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if self.n_topics < 1 {
            return bad("n_topics must be >= 1".into());
        }
        if self.vocab_size < self.n_topics {
            return bad(format!("vocab_size {} < n_topics {}", self.vocab_size, self.n_topics));
        }
        if self.n_stages < 1 || self.n_subjects < 1 {
            return bad("n_stages and n_subjects must be >= 1".into());
        }
        if self.n_groups < 2 {
            return bad("n_groups must be >= 2".into());
        }
        if !(self.phi_drift >= 0.0 && self.phi_drift.is_finite()) {
            return bad("phi_drift must be finite and >= 0".into());
        }
        if self.prior_kind == PriorKind::Nonlinear && self.basis.is_empty() {
            return bad("nonlinear prior needs a nonempty basis".into());
        }
        self.count_range.validate()
    }

    /// Number of transformed covariate features entering the proportions.
    pub fn basis_width(&self) -> usize {
        match self.prior_kind {
            PriorKind::Linear => self.n_features,
            PriorKind::Nonlinear => self.n_features * self.basis.len(),
        }
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        match self.prior_kind {
            PriorKind::Linear => x.to_vec(),
            PriorKind::Nonlinear => self
                .basis
                .iter()
                .flat_map(|b| x.iter().map(move |&v| b.apply(v)))
                .collect(),
        }
    }
}

/// Regression coefficients of the proportion generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gamma {
    /// Covariate main effect, `[stage][topic][feature]`.
    pub main: Vec<Vec<Vec<f64>>>,
    /// Carry-over weight on the previous proportions, one per stage.
    pub theta: Vec<f64>,
    /// Group effect, `[stage][topic][group][feature]`. With two groups there
    /// is a single coefficient vector multiplied by `Y = ±1`; with more groups
    /// one vector per group, centered to sum to zero over groups.
    pub group: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Ground truth emitted alongside a simulated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Topic-word simplices per stage, each `V × K`.
    pub beta: Vec<Matrix>,
    /// Proportions `[stage][subject][topic]`.
    pub theta: Vec<Vec<Vec<f64>>>,
    pub gamma: Gamma,
}

/// Word-axis centers `⌊k·V/K⌋` for `k = 1..K` (1-based word positions).
pub fn topic_centers(vocab_size: usize, n_topics: usize) -> Vec<usize> {
    (1..=n_topics).map(|k| k * vocab_size / n_topics).collect()
}

/// Logit mean inside a topic's band of words and outside it.
const BAND_MEAN: f64 = 1.0;
const OFF_BAND_MEAN: f64 = -4.0;

pub fn sample_topics(cfg: &SimConfig, rng: &mut impl Rng) -> Vec<Matrix> {
    let (v, k, t_max) = (cfg.vocab_size, cfg.n_topics, cfg.n_stages);
    let centers = topic_centers(v, k);
    if cfg.phi_drift == 0.0 {
        let half_width = v as f64 / (2.0 * k as f64);
        let mut logits = Matrix::from_fn(v, k, |row, col| {
            let pos = (row + 1) as f64;
            let m = if (pos - centers[col] as f64).abs() <= half_width {
                BAND_MEAN
            } else {
                OFF_BAND_MEAN
            };
            let z: f64 = StandardNormal.sample(rng);
            m + z
        });
        logits = linalg::softmax_columns(&logits);
        return vec![logits; t_max];
    }
    (1..=t_max)
        .map(|t| {
            let sd = 1.0 + t as f64 / t_max as f64 * cfg.phi_drift;
            let mut m = Matrix::from_fn(v, k, |row, col| {
                let d = ((row + 1) as f64 - centers[col] as f64) / sd;
                (-0.5 * d * d).exp()
            });
            for col in 0..k {
                let s: f64 = (0..v).map(|r| m.get(r, col)).sum();
                for r in 0..v {
                    m.set(r, col, m.get(r, col) / s);
                }
            }
            m
        })
        .collect()
}

/// Random-walk covariates (laid out `(subject, stage, feature)`) and uniform
/// group labels.
pub fn sample_metadata(cfg: &SimConfig, rng: &mut impl Rng) -> (Vec<f64>, Vec<usize>) {
    let (n, t_max, p) = (cfg.n_subjects, cfg.n_stages, cfg.n_features);
    let mut x = vec![0.0; n * t_max * p];
    for i in 0..n {
        for t in 0..t_max {
            for f in 0..p {
                let z: f64 = StandardNormal.sample(rng);
                let prev = if t == 0 { 0.0 } else { x[(i * t_max + t - 1) * p + f] };
                x[(i * t_max + t) * p + f] = prev + z;
            }
        }
    }
    let labels = Uniform::new(0, cfg.n_groups).expect("n_groups >= 2");
    let groups = (0..n).map(|_| labels.sample(rng)).collect();
    (x, groups)
}

pub fn sample_gamma(cfg: &SimConfig, rng: &mut impl Rng) -> Gamma {
    let width = cfg.basis_width();
    let (k, t_max, g) = (cfg.n_topics, cfg.n_stages, cfg.n_groups);
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(rng)).collect() };
    let main = (0..t_max).map(|_| (0..k).map(|_| normal(width)).collect()).collect();
    let theta = normal(t_max);
    let group = (0..t_max)
        .map(|_| {
            (0..k)
                .map(|_| {
                    if g == 2 {
                        vec![normal(width)]
                    } else {
                        let mut per_group: Vec<Vec<f64>> = (0..g).map(|_| normal(width)).collect();
                        for f in 0..width {
                            let mean = per_group.iter().map(|v| v[f]).sum::<f64>() / g as f64;
                            per_group.iter_mut().for_each(|v| v[f] -= mean);
                        }
                        per_group
                    }
                })
                .collect()
        })
        .collect();
    Gamma { main, theta, group }
}

/// Proportions `[stage][subject][topic]` as the softmax over topics of
/// covariate, carry-over and (optionally) group effects. The carry-over at
/// the first stage uses uniform proportions.
pub fn simulate_proportions(
    cfg: &SimConfig,
    covariates: &[f64],
    groups: &[usize],
    gamma: &Gamma,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let (n, t_max, p, k) = (cfg.n_subjects, cfg.n_stages, cfg.n_features, cfg.n_topics);
    let width = cfg.basis_width();
    if covariates.len() != n * t_max * p || groups.len() != n {
        return Err(Error::ShapeError("metadata does not match the configuration".into()));
    }
    let gamma_ok = gamma.main.len() == t_max
        && gamma.theta.len() == t_max
        && gamma.group.len() == t_max
        && gamma.main.iter().all(|s| s.len() == k && s.iter().all(|v| v.len() == width))
        && gamma.group.iter().all(|s| {
            s.len() == k
                && s.iter().all(|per| {
                    per.len() == if cfg.n_groups == 2 { 1 } else { cfg.n_groups } && per.iter().all(|v| v.len() == width)
                })
        });
    if !gamma_ok {
        return Err(Error::ShapeError("gamma does not match the configuration".into()));
    }
    let mut theta = vec![vec![vec![0.0; k]; n]; t_max];
    for i in 0..n {
        let mut prev = vec![1.0 / k as f64; k];
        for t in 0..t_max {
            let phi = cfg.expand(&covariates[(i * t_max + t) * p..(i * t_max + t + 1) * p]);
            let mut f = vec![0.0; k];
            for (kk, fk) in f.iter_mut().enumerate() {
                *fk = linalg::dot(&gamma.main[t][kk], &phi) + gamma.theta[t] * prev[kk];
                if cfg.group_effect {
                    *fk += if cfg.n_groups == 2 {
                        let y = if groups[i] == 0 { -1.0 } else { 1.0 };
                        y * linalg::dot(&gamma.group[t][kk][0], &phi)
                    } else {
                        linalg::dot(&gamma.group[t][kk][groups[i]], &phi)
                    };
                }
            }
            linalg::softmax_in_place(&mut f);
            prev.copy_from_slice(&f);
            theta[t][i] = f;
        }
    }
    Ok(theta)
}

/// Draws every (subject, stage) document. Each subject uses its own
/// substream of `seed`.
pub fn sample_documents(
    cfg: &SimConfig,
    theta: &[Vec<Vec<f64>>],
    beta: &[Matrix],
    covariates: Vec<f64>,
    groups: Vec<usize>,
    seed: u64,
) -> Result<Corpus> {
    let (n, t_max) = (cfg.n_subjects, cfg.n_stages);
    cfg.count_range.validate()?;
    let lengths = Uniform::new_inclusive(cfg.count_range.min, cfg.count_range.max).expect("validated range");
    let mut docs = Vec::with_capacity(n * t_max);
    for i in 0..n {
        let mut rng = rng::stream(seed, &[4, i as u64]);
        for t in 0..t_max {
            let word_probs = mix_topics(&theta[t][i], &beta[t]);
            let len = lengths.sample(&mut rng);
            docs.push(Some(sample_multinomial(&word_probs, len, &mut rng)));
        }
    }
    let vocab = (0..cfg.vocab_size).map(|v| format!("w{v}")).collect();
    Corpus::new(vocab, t_max, docs, cfg.n_features, covariates, groups, cfg.n_groups, false)
}

/// Full simulation: topics, metadata, coefficients, proportions, documents.
/// `(cfg, cfg.seed)` determines the output exactly.
pub fn simulate(cfg: &SimConfig) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let beta = sample_topics(cfg, &mut rng::stream(cfg.seed, &[1]));
    let (covariates, groups) = sample_metadata(cfg, &mut rng::stream(cfg.seed, &[2]));
    let gamma = sample_gamma(cfg, &mut rng::stream(cfg.seed, &[3]));
    let theta = simulate_proportions(cfg, &covariates, &groups, &gamma)?;
    let corpus = sample_documents(cfg, &theta, &beta, covariates, groups, cfg.seed)?;
    Ok((corpus, GroundTruth { beta, theta, gamma }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_subjects: 20,
            n_stages: 3,
            vocab_size: 30,
            n_topics: 3,
            n_features: 4,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn centers_follow_floor_rule() {
        assert_eq!(topic_centers(200, 3), vec![66, 133, 200]);
        assert_eq!(topic_centers(17, 1), vec![17]);
    }

    #[test]
    fn static_topics_are_replicated_simplices() {
        let cfg = SimConfig {
            n_stages: 5,
            ..small()
        };
        let beta = sample_topics(&cfg, &mut rng::stream(1, &[]));
        assert_eq!(beta.len(), 5);
        for b in &beta[1..] {
            assert_eq!(b, &beta[0]);
        }
        for k in 0..3 {
            let s: f64 = beta[0].column(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_topic_column_sums_to_one() {
        let cfg = SimConfig {
            n_topics: 1,
            vocab_size: 13,
            ..small()
        };
        let beta = sample_topics(&cfg, &mut rng::stream(2, &[]));
        assert!((beta[0].column(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drifting_topics_widen_over_stages() {
        let cfg = SimConfig {
            phi_drift: 2.0,
            vocab_size: 60,
            ..small()
        };
        let beta = sample_topics(&cfg, &mut rng::stream(3, &[]));
        for b in &beta {
            for k in 0..3 {
                assert!((b.column(k).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        // The peak mass at the center shrinks as the spread grows.
        let peak = |t: usize| beta[t].get(19, 0);
        assert!(peak(0) > peak(1) && peak(1) > peak(2));
    }

    #[test]
    fn zero_coefficients_give_uniform_proportions() {
        let cfg = small();
        let (x, g) = sample_metadata(&cfg, &mut rng::stream(1, &[]));
        let mut gamma = sample_gamma(&cfg, &mut rng::stream(2, &[]));
        zero_gamma(&mut gamma);
        let theta = simulate_proportions(&cfg, &x, &g, &gamma).unwrap();
        for stage in &theta {
            for row in stage {
                for &v in row {
                    assert_eq!(v, 1.0 / 3.0);
                }
            }
        }
    }

    fn zero_gamma(g: &mut Gamma) {
        g.main.iter_mut().flatten().flatten().for_each(|v| *v = 0.0);
        g.theta.iter_mut().for_each(|v| *v = 0.0);
        g.group.iter_mut().flatten().flatten().flatten().for_each(|v| *v = 0.0);
    }

    #[test]
    fn hand_evaluated_main_effect() {
        let cfg = SimConfig {
            n_subjects: 1,
            n_stages: 1,
            n_topics: 2,
            n_features: 1,
            prior_kind: PriorKind::Linear,
            ..small()
        };
        let gamma = Gamma {
            main: vec![vec![vec![1.0], vec![0.0]]],
            theta: vec![0.0],
            group: vec![vec![vec![vec![0.0]], vec![vec![0.0]]]],
        };
        let theta = simulate_proportions(&cfg, &[1.0], &[0], &gamma).unwrap();
        assert!((theta[0][0][0] - 0.7311).abs() < 1e-4);
        assert!((theta[0][0][1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn group_flip_negates_group_only_logits() {
        let cfg = SimConfig {
            n_subjects: 2,
            n_stages: 1,
            n_topics: 3,
            n_features: 2,
            ..small()
        };
        let mut gamma = sample_gamma(&cfg, &mut rng::stream(8, &[]));
        gamma.main.iter_mut().flatten().flatten().for_each(|v| *v = 0.0);
        gamma.theta.iter_mut().for_each(|v| *v = 0.0);
        let x = [0.3, -1.1, 0.3, -1.1];
        let theta = simulate_proportions(&cfg, &x, &[0, 1], &gamma).unwrap();
        let logit = |th: &Vec<f64>| -> Vec<f64> {
            let l: Vec<f64> = th.iter().map(|p| p.ln()).collect();
            let m = l.iter().sum::<f64>() / l.len() as f64;
            l.iter().map(|v| v - m).collect()
        };
        let (a, b) = (logit(&theta[0][0]), logit(&theta[0][1]));
        for (u, v) in a.iter().zip(&b) {
            assert!((u + v).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let cfg = small();
        let gamma = sample_gamma(&cfg, &mut rng::stream(2, &[]));
        assert!(matches!(simulate_proportions(&cfg, &[0.0; 3], &[0; 20], &gamma), Err(Error::ShapeError(_))));
        let other = SimConfig {
            n_topics: 2,
            ..cfg.clone()
        };
        let (x, g) = sample_metadata(&cfg, &mut rng::stream(1, &[]));
        assert!(matches!(simulate_proportions(&other, &x, &g, &gamma), Err(Error::ShapeError(_))));
    }

    #[test]
    fn multi_group_effects_are_centered() {
        let cfg = SimConfig {
            n_groups: 4,
            ..small()
        };
        let gamma = sample_gamma(&cfg, &mut rng::stream(2, &[]));
        for per in gamma.group.iter().flatten() {
            assert_eq!(per.len(), 4);
            for f in 0..per[0].len() {
                assert!(per.iter().map(|v| v[f]).sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn documents_respect_count_range_and_seed() {
        let cfg = small();
        let (a, ta) = simulate(&cfg).unwrap();
        let (b, tb) = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for i in 0..cfg.n_subjects {
            for t in 0..cfg.n_stages {
                assert!((50..=150).contains(&a.doc(i, t).unwrap().total()));
            }
        }
        for stage in &ta.theta {
            for row in stage {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let c = simulate(&SimConfig { seed: 6, ..cfg }).unwrap().0;
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SimConfig { n_topics: 0, ..small() },
            SimConfig { vocab_size: 2, ..small() },
            SimConfig { n_groups: 1, ..small() },
            SimConfig {
                count_range: CountRange { min: 0, max: 3 },
                ..small()
            },
            SimConfig {
                count_range: CountRange { min: 5, max: 3 },
                ..small()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::ConfigError(_))));
        }
    }
}
