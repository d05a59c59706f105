use cftm::rng;
use cftm::simulate::{sample_metadata, sample_topics};
use cftm::{simulate, SimConfig};
use proptest::prelude::*;

fn cfg(n: usize, t: usize, p: usize) -> SimConfig {
    SimConfig {
        n_subjects: n,
        n_stages: t,
        n_features: p,
        ..Default::default()
    }
}

#[test]
fn covariate_random_walk_variance_grows_with_stage() {
    let c = cfg(100_000, 3, 1);
    let (x, _) = sample_metadata(&c, &mut rng::stream(11, &[1]));
    for t in 0..3 {
        let vals: Vec<f64> = (0..c.n_subjects).map(|i| x[i * 3 + t]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = (t + 1) as f64;
        assert!((var - expected).abs() / expected < 0.05, "stage {t}: variance {var}");
        if t == 0 {
            assert!(mean.abs() < 3.0 / n.sqrt(), "stage 1 mean {mean}");
        }
    }
}

#[test]
fn two_groups_are_balanced() {
    let c = cfg(100_000, 1, 1);
    let (_, groups) = sample_metadata(&c, &mut rng::stream(12, &[1]));
    let share = groups.iter().filter(|&&g| g == 0).count() as f64 / groups.len() as f64;
    assert!((share - 0.5).abs() < 0.01, "share {share}");
}

#[test]
fn single_topic_word_frequencies_are_uniform() {
    let c = SimConfig {
        n_subjects: 10_000,
        n_stages: 1,
        vocab_size: 4,
        n_topics: 1,
        n_features: 1,
        ..Default::default()
    };
    let (corpus, truth) = simulate(&c).unwrap();
    let beta = truth.beta[0].column(0);
    let mut counts = [0u64; 4];
    for i in 0..corpus.n_subjects() {
        for &(w, n) in corpus.doc(i, 0).unwrap().entries() {
            counts[w] += n as u64;
        }
    }
    let total = counts.iter().sum::<u64>() as f64;
    for w in 0..4 {
        let f = counts[w] as f64 / total;
        assert!((f - beta[w]).abs() < 0.02, "word {w}: {f} vs {}", beta[w]);
    }
}

#[test]
fn group_effect_shifts_first_topic_share() {
    let c = SimConfig {
        n_subjects: 1000,
        seed: 5,
        ..Default::default()
    };
    let (corpus, truth) = simulate(&c).unwrap();
    let mut by_group = [Vec::new(), Vec::new()];
    for t in 0..c.n_stages {
        for i in 0..c.n_subjects {
            by_group[corpus.group(i)].push(truth.theta[t][i][0]);
        }
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0), n)
    };
    let (m0, v0, n0) = stats(&by_group[0]);
    let (m1, v1, n1) = stats(&by_group[1]);
    let welch = (m0 - m1) / (v0 / n0 + v1 / n1).sqrt();
    assert!(welch.abs() > 2.576, "t statistic {welch}");
}

#[test]
fn simulation_is_deterministic() {
    let c = SimConfig {
        n_subjects: 30,
        vocab_size: 40,
        seed: 9,
        ..Default::default()
    };
    let (a, ta) = simulate(&c).unwrap();
    let (b, tb) = simulate(&c).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn emitted_simplices_sum_to_one(
        seed in 0u64..1000,
        k in 1usize..5,
        t in 1usize..4,
        drift in prop_oneof![Just(0.0), 0.1f64..3.0],
    ) {
        let c = SimConfig {
            n_subjects: 12,
            n_stages: t,
            vocab_size: 30,
            n_topics: k,
            n_features: 3,
            phi_drift: drift,
            seed,
            ..Default::default()
        };
        let (corpus, truth) = simulate(&c).unwrap();
        for b in &truth.beta {
            for j in 0..k {
                prop_assert!((b.column(j).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for stage in &truth.theta {
            for row in stage {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for i in 0..corpus.n_subjects() {
            for s in 0..t {
                let n = corpus.doc(i, s).unwrap().total();
                prop_assert!((50..=150).contains(&n));
            }
        }
        let topics = sample_topics(&c, &mut rng::stream(seed, &[3]));
        prop_assert_eq!(topics.len(), t);
    }
}
