use cftm::eval::{
    align_topics, apply_alignment, dominant_accuracy, empirical_kl, group_accuracy, perplexity, report, top_word_indices,
    umass_coherence,
};
use cftm::linalg::softmax_columns;
use cftm::rng;
use cftm::vi::{infer_proportions, Proportions};
use cftm::{fit, full_report, simulate, Corpus, Document, GroundTruth, Matrix, SimConfig, TrainConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_simplex_matrix(v: usize, k: usize, r: &mut impl Rng) -> Matrix {
    let logits = Matrix::from_fn(v, k, |_, _| { let z: f64 = StandardNormal.sample(r); 2.0 * z });
    softmax_columns(&logits)
}

fn random_simplex(k: usize, r: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for c in 0..k {
            if !prefix.contains(&c) {
                prefix.push(c);
                rec(prefix, k, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), k, &mut out);
    out
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b.max(1e-12)).ln()).sum()
}

/// Exhaustive search written independently of the library's enumeration.
fn brute_force_alignment(hat: &Matrix, truth: &Matrix) -> Vec<usize> {
    let k = truth.cols();
    let mut perms = all_permutations(k);
    perms.sort();
    let cost = |p: &Vec<usize>| (0..k).map(|c| kl(&hat.column(p[c]), &truth.column(c))).sum::<f64>();
    let mut best = perms[0].clone();
    let mut best_cost = cost(&best);
    for p in &perms[1..] {
        let c = cost(p);
        if c < best_cost {
            best_cost = c;
            best = p.clone();
        }
    }
    best
}

fn corpus_from(docs: Vec<Document>, stages: usize, vocab: usize, groups: Vec<usize>, n_groups: usize) -> Corpus {
    let vocab = (0..vocab).map(|w| format!("w{w}")).collect();
    Corpus::new(vocab, stages, docs.into_iter().map(Some).collect(), 0, vec![], groups, n_groups, false).unwrap()
}

fn full_props(theta: Vec<Vec<Vec<f64>>>) -> Proportions {
    theta.into_iter().map(|s| s.into_iter().map(Some).collect()).collect()
}

#[test]
fn alignment_matches_brute_force_for_four_topics() {
    let mut r = rng::stream(1, &[]);
    for _ in 0..20 {
        let hat = random_simplex_matrix(12, 4, &mut r);
        let truth = random_simplex_matrix(12, 4, &mut r);
        let got = align_topics(&[hat.clone()], &[truth.clone()]).unwrap();
        assert_eq!(got[0], brute_force_alignment(&hat, &truth));
    }
}

#[test]
fn swapped_pair_aligns_with_zero_kl() {
    let truth = Matrix::from_fn(3, 2, |r, c| [[0.7, 0.1], [0.2, 0.3], [0.1, 0.6]][r][c]);
    let hat = truth.permute_columns(&[1, 0]);
    let perms = align_topics(&[hat.clone()], &[truth.clone()]).unwrap();
    assert_eq!(perms[0], vec![1, 0]);
    assert_eq!(empirical_kl(&apply_alignment(&[hat], &perms), &[truth]).unwrap(), 0.0);
}

#[test]
fn perplexity_of_the_generating_model_approaches_entropy() {
    let mut r = rng::stream(2, &[]);
    let probs = [0.1, 0.2, 0.3, 0.4];
    let uniform = Matrix::from_fn(4, 1, |_, _| 0.25);
    let skewed = Matrix::from_fn(4, 1, |w, _| probs[w]);
    let mut docs = Vec::new();
    let mut skewed_docs = Vec::new();
    for _ in 0..10_000 {
        let mut a = vec![0u32; 4];
        let mut b = vec![0u32; 4];
        for _ in 0..20 {
            a[r.random_range(0..4)] += 1;
            let u: f64 = r.random();
            let w = if u < 0.1 { 0 } else if u < 0.3 { 1 } else if u < 0.6 { 2 } else { 3 };
            b[w] += 1;
        }
        docs.push(Document::from_dense(&a));
        skewed_docs.push(Document::from_dense(&b));
    }
    let n = docs.len();
    let theta = full_props(vec![vec![vec![1.0]; n]]);
    let c = corpus_from(docs, 1, 4, vec![0; n], 2);
    let ppl = perplexity(&[uniform], &theta, &c).unwrap();
    assert!((ppl - 4.0).abs() < 1e-9);
    let c = corpus_from(skewed_docs, 1, 4, vec![0; n], 2);
    let ppl = perplexity(&[skewed], &theta, &c).unwrap();
    let entropy: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
    assert!((ppl / entropy.exp() - 1.0).abs() < 0.01, "{ppl} vs {}", entropy.exp());
}

#[test]
fn probe_on_group_independent_proportions_is_at_chance() {
    let mut r = rng::stream(3, &[]);
    let n = 10_000;
    let theta = full_props(vec![(0..n).map(|_| random_simplex(3, &mut r)).collect()]);
    let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let acc = group_accuracy(&theta, &groups, 2).unwrap();
    assert!((0.45..=0.55).contains(&acc), "{acc}");
}

#[test]
fn probe_on_separated_proportions_is_near_perfect() {
    let mut r = rng::stream(4, &[]);
    let n = 400;
    let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let rows = groups
        .iter()
        .map(|&g| {
            let a = if g == 0 { r.random_range(0.9..1.0) } else { r.random_range(0.0..0.1) };
            let b = r.random_range(0.0..1.0 - a);
            vec![a, b, 1.0 - a - b]
        })
        .collect();
    let acc = group_accuracy(&full_props(vec![rows]), &groups, 2).unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn probe_is_invariant_to_topic_relabeling() {
    let mut r = rng::stream(5, &[]);
    let n = 300;
    let groups: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let rows: Vec<Vec<f64>> = groups
        .iter()
        .map(|&g| {
            let mut s = random_simplex(4, &mut r);
            s[g] += 0.5;
            let t: f64 = s.iter().sum();
            s.iter().map(|x| x / t).collect()
        })
        .collect();
    let perm = [2, 0, 3, 1];
    let permuted: Vec<Vec<f64>> = rows.iter().map(|x| perm.iter().map(|&p| x[p]).collect()).collect();
    let a = group_accuracy(&full_props(vec![rows]), &groups, 3).unwrap();
    let b = group_accuracy(&full_props(vec![permuted]), &groups, 3).unwrap();
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}

/// UMass coherence counted straight from the documents.
fn coherence_oracle(topics: &Matrix, docs: &[Vec<u32>], top_n: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..topics.cols() {
        let col = topics.column(k);
        let mut idx: Vec<usize> = (0..col.len()).collect();
        idx.sort_by(|&a, &b| col[b].partial_cmp(&col[a]).unwrap().then(a.cmp(&b)));
        let top = &idx[..top_n];
        for &i in top {
            for &j in top {
                if i == j {
                    continue;
                }
                let dj = docs.iter().filter(|d| d[j] > 0).count() as f64;
                let dij = docs.iter().filter(|d| d[i] > 0 && d[j] > 0).count() as f64;
                if dj > 0.0 {
                    total += ((dij + 1.0) / dj).ln();
                }
            }
        }
    }
    total / topics.cols() as f64
}

#[test]
fn coherence_under_document_duplication() {
    let mut r = rng::stream(6, &[]);
    let v = 10;
    let dense: Vec<Vec<u32>> = (0..30)
        .map(|_| (0..v).map(|_| if r.random::<f64>() < 0.3 { r.random_range(1..3) } else { 0 }).collect())
        .collect();
    let mut doubled = dense.clone();
    doubled.extend(dense.iter().cloned());
    let dense: Vec<Vec<u32>> = dense.into_iter().map(|d| if d.iter().all(|&c| c == 0) { vec![1; v] } else { d }).collect();
    let doubled: Vec<Vec<u32>> = doubled.into_iter().map(|d| if d.iter().all(|&c| c == 0) { vec![1; v] } else { d }).collect();
    let topics = random_simplex_matrix(v, 2, &mut r);
    let make = |docs: &[Vec<u32>]| {
        let n = docs.len();
        corpus_from(docs.iter().map(|d| Document::from_dense(d)).collect(), 1, v, vec![0; n], 2)
    };
    let once = umass_coherence(&[topics.clone()], &make(&dense), 5).unwrap();
    let twice = umass_coherence(&[topics.clone()], &make(&doubled), 5).unwrap();
    assert!((once - coherence_oracle(&topics, &dense, 5)).abs() < 1e-10);
    assert!((twice - coherence_oracle(&topics, &doubled, 5)).abs() < 1e-10);
    assert!(twice <= once);
}

#[test]
fn report_without_truth_and_against_itself() {
    let sim = SimConfig {
        n_subjects: 40,
        vocab_size: 30,
        n_features: 2,
        seed: 3,
        ..Default::default()
    };
    let (corpus, truth) = simulate(&sim).unwrap();
    let cfg = TrainConfig {
        t_max: 3,
        dist_weight: 0.01,
        encoder_hidden: 8,
        ..Default::default()
    };
    let fitted = fit(&corpus, 3, &cfg).unwrap();
    let partial = full_report(&fitted, &corpus, None).unwrap();
    assert!(partial.kl_topics.is_none() && partial.dominant_acc.is_none() && partial.permutations.is_none());
    assert!(partial.perplexity >= 1.0 && (0.0..=1.0).contains(&partial.group_acc));

    let theta = infer_proportions(&fitted, &corpus).unwrap();
    let own = GroundTruth {
        beta: fitted.topic_words(),
        theta: theta.iter().map(|s| s.iter().map(|c| c.clone().unwrap()).collect()).collect(),
        gamma: truth.gamma.clone(),
    };
    let selfrep = report(&fitted.topic_words(), &theta, &corpus, Some(&own)).unwrap();
    assert_eq!(selfrep.kl_topics, Some(0.0));
    assert_eq!(selfrep.dominant_acc, Some(1.0));
    assert_eq!(full_report(&fitted, &corpus, Some(&truth)).unwrap(), full_report(&fitted, &corpus, Some(&truth)).unwrap());
}

#[test]
fn uniform_estimates_against_uniform_truth_count_as_hits() {
    let theta = vec![vec![vec![0.25; 4]; 5]; 2];
    assert_eq!(dominant_accuracy(&full_props(theta.clone()), &theta).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn aligned_kl_ignores_column_order(seed in 0u64..10_000, k in 1usize..6, shift in 0usize..720) {
        let mut r = rng::stream(seed, &[]);
        let hat = random_simplex_matrix(15, k, &mut r);
        let truth = random_simplex_matrix(15, k, &mut r);
        let perms = all_permutations(k);
        let shuffled = hat.permute_columns(&perms[shift % perms.len()]);
        let base = empirical_kl(&apply_alignment(&[hat.clone()], &align_topics(&[hat], &[truth.clone()]).unwrap()), &[truth.clone()]).unwrap();
        let moved = empirical_kl(&apply_alignment(&[shuffled.clone()], &align_topics(&[shuffled], &[truth.clone()]).unwrap()), &[truth]).unwrap();
        prop_assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(seed in 0u64..10_000, k in 1usize..5) {
        let mut r = rng::stream(seed, &[1]);
        let a = random_simplex_matrix(10, k, &mut r);
        let b = random_simplex_matrix(10, k, &mut r);
        prop_assert!(empirical_kl(&[a.clone()], &[b]).unwrap() >= 0.0);
        prop_assert_eq!(empirical_kl(&[a.clone()], &[a]).unwrap(), 0.0);
    }

    #[test]
    fn perplexity_is_at_least_one(seed in 0u64..10_000, k in 1usize..4) {
        let mut r = rng::stream(seed, &[2]);
        let v = 8;
        let topics = random_simplex_matrix(v, k, &mut r);
        let docs: Vec<Document> = (0..6).map(|_| {
            let mut c = vec![0u32; v];
            c[r.random_range(0..v)] += 1 + r.random_range(0..5);
            Document::from_dense(&c)
        }).collect();
        let theta = full_props(vec![(0..6).map(|_| random_simplex(k, &mut r)).collect()]);
        let c = corpus_from(docs, 1, v, vec![0; 6], 2);
        prop_assert!(perplexity(&[topics], &theta, &c).unwrap() >= 1.0);
    }

    #[test]
    fn top_words_are_sorted_by_probability(seed in 0u64..10_000) {
        let mut r = rng::stream(seed, &[3]);
        let m = random_simplex_matrix(20, 2, &mut r);
        let idx = top_word_indices(&m, 1, 15);
        let col = m.column(1);
        prop_assert!(idx.windows(2).all(|w| col[w[0]] >= col[w[1]]));
    }
}
