//! Evaluation metrics: topic alignment, empirical KL to the true topics,
//! UMass coherence, perplexity, dominant-topic accuracy and a softmax
//! regression probe for group membership.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::linalg::{argmax, softmax_in_place, Matrix};
use crate::model::PROB_FLOOR;
use crate::simulate::GroundTruth;
use crate::vi::{infer_proportions, FittedModel, Proportions};

pub const MAX_ALIGN_TOPICS: usize = 8;
pub const DEFAULT_TOP_N: usize = 15;

/// Settings of the group-membership probe.
pub const PROBE_ITERATIONS: usize = 500;
pub const PROBE_STEP: f64 = 0.1;
pub const PROBE_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kl_topics: Option<f64>,
    pub coherence: f64,
    pub perplexity: f64,
    pub dominant_acc: Option<f64>,
    pub group_acc: f64,
    /// Per-stage orderings: aligned topic `k` is estimated topic `perm[k]`.
    pub permutations: Option<Vec<Vec<usize>>>,
}

fn check_topics(a: &[Matrix], b: &[Matrix]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeError(format!("{} stages vs {}", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if x.rows() != y.rows() || x.cols() != y.cols() {
            return Err(Error::ShapeError(format!(
                "topic matrix {}x{} vs {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
    }
    Ok(())
}

/// `Σ_v p_v log(p_v / max(q_v, floor))`, skipping zero `p_v`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv.max(PROB_FLOOR)).ln())
        .sum()
}

fn column_kl(hat: &Matrix, a: usize, truth: &Matrix, k: usize) -> f64 {
    kl_divergence(&hat.column(a), &truth.column(k))
}

/// Advances `perm` to the next permutation in lexicographic order; returns
/// false after the last one.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Per stage, the ordering of estimated topics minimizing the summed KL to
/// the true topics. Ties go to the lexicographically smallest ordering.
pub fn align_topics(beta_hat: &[Matrix], beta_true: &[Matrix]) -> Result<Vec<Vec<usize>>> {
    check_topics(beta_hat, beta_true)?;
    let k = beta_true.first().map_or(0, |m| m.cols());
    if k > MAX_ALIGN_TOPICS {
        return Err(Error::TooManyTopics(k));
    }
    Ok(beta_hat
        .iter()
        .zip(beta_true)
        .map(|(hat, truth)| {
            let cost: Vec<Vec<f64>> = (0..k).map(|a| (0..k).map(|c| column_kl(hat, a, truth, c)).collect()).collect();
            let mut perm: Vec<usize> = (0..k).collect();
            let mut best = perm.clone();
            let mut best_cost = f64::INFINITY;
            loop {
                let c: f64 = perm.iter().enumerate().map(|(kk, &a)| cost[a][kk]).sum();
                if c < best_cost {
                    best_cost = c;
                    best.clone_from(&perm);
                }
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            best
        })
        .collect())
}

/// Reorders the columns of each stage's topics by its permutation.
pub fn apply_alignment(beta_hat: &[Matrix], perms: &[Vec<usize>]) -> Vec<Matrix> {
    beta_hat.iter().zip(perms).map(|(m, p)| m.permute_columns(p)).collect()
}

/// Reorders proportions so entry `k` is the estimate's topic `perm_t[k]`.
pub fn align_proportions(theta: &Proportions, perms: &[Vec<usize>]) -> Proportions {
    theta
        .iter()
        .zip(perms)
        .map(|(row, p)| row.iter().map(|c| c.as_ref().map(|th| p.iter().map(|&a| th[a]).collect())).collect())
        .collect()
}

/// Mean over stages and topics of `KL(β̂_{t,·,k} || β_{t,·,k})`.
pub fn empirical_kl(beta_hat: &[Matrix], beta_true: &[Matrix]) -> Result<f64> {
    check_topics(beta_hat, beta_true)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (hat, truth) in beta_hat.iter().zip(beta_true) {
        for k in 0..hat.cols() {
            total += column_kl(hat, k, truth, k);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::ShapeError("no topics to compare".into()));
    }
    Ok(total / n as f64)
}

/// Indices of the `n` most probable words of column `k`, ties to the lower
/// word index.
pub fn top_word_indices(topics: &Matrix, k: usize, n: usize) -> Vec<usize> {
    let col = topics.column(k);
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Top words per `[stage][topic]`.
pub fn top_words(topics: &[Matrix], vocab: &[String], n: usize) -> Vec<Vec<Vec<String>>> {
    topics
        .iter()
        .map(|m| {
            (0..m.cols())
                .map(|k| top_word_indices(m, k, n).into_iter().map(|v| vocab[v].clone()).collect())
                .collect()
        })
        .collect()
}

/// UMass coherence averaged over stages and topics; document frequencies are
/// counted within each stage.
pub fn umass_coherence(topics: &[Matrix], corpus: &Corpus, top_n: usize) -> Result<f64> {
    if topics.len() != corpus.n_stages() {
        return Err(Error::ShapeError("one topic matrix per stage required".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, m) in topics.iter().enumerate() {
        if m.rows() != corpus.vocab_size() {
            return Err(Error::ShapeError("topic rows differ from vocabulary".into()));
        }
        let docs: Vec<HashSet<usize>> = (0..corpus.n_subjects())
            .filter_map(|i| corpus.doc(i, t))
            .map(|d| d.entries().iter().map(|&(w, _)| w).collect())
            .collect();
        for k in 0..m.cols() {
            let top = top_word_indices(m, k, top_n);
            let df: Vec<usize> = top.iter().map(|w| docs.iter().filter(|d| d.contains(w)).count()).collect();
            let mut score = 0.0;
            for (i, wi) in top.iter().enumerate() {
                for (j, wj) in top.iter().enumerate() {
                    if i == j || df[j] == 0 {
                        continue;
                    }
                    let co = docs.iter().filter(|d| d.contains(wi) && d.contains(wj)).count();
                    score += ((co + 1) as f64 / df[j] as f64).ln();
                }
            }
            total += score;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::ShapeError("no topics to score".into()));
    }
    Ok(total / count as f64)
}

/// Mean over stages of the exponentiated per-word negative log-likelihood,
/// averaged over the documents present at each stage.
pub fn perplexity(topics: &[Matrix], theta: &Proportions, corpus: &Corpus) -> Result<f64> {
    if topics.len() != corpus.n_stages() || theta.len() != corpus.n_stages() {
        return Err(Error::ShapeError("one topic matrix and proportion row per stage required".into()));
    }
    let mut total = 0.0;
    let mut stages = 0usize;
    for t in 0..corpus.n_stages() {
        let m = &topics[t];
        if m.rows() != corpus.vocab_size() || theta[t].len() != corpus.n_subjects() {
            return Err(Error::ShapeError("topics or proportions do not match the corpus".into()));
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..corpus.n_subjects() {
            let Some(doc) = corpus.doc(i, t) else { continue };
            let th = theta[t][i]
                .as_ref()
                .ok_or_else(|| Error::ShapeError(format!("no proportions for subject {i}, stage {t}")))?;
            if th.len() != m.cols() {
                return Err(Error::ShapeError("proportion length differs from topic count".into()));
            }
            let ll: f64 = doc
                .entries()
                .iter()
                .map(|&(v, c)| {
                    let p: f64 = m.row(v).iter().zip(th).map(|(b, a)| a * b).sum();
                    c as f64 * p.max(PROB_FLOOR).ln()
                })
                .sum();
            sum += -ll / doc.total() as f64;
            n += 1;
        }
        if n > 0 {
            total += (sum / n as f64).exp();
            stages += 1;
        }
    }
    if stages == 0 {
        return Err(Error::ShapeError("corpus has no documents".into()));
    }
    Ok(total / stages as f64)
}

/// Fraction of observed cells whose most probable topic agrees; `theta_hat`
/// must already be aligned.
pub fn dominant_accuracy(theta_hat: &Proportions, theta_true: &[Vec<Vec<f64>>]) -> Result<f64> {
    if theta_hat.len() != theta_true.len() {
        return Err(Error::ShapeError("stage counts differ".into()));
    }
    let mut hits = 0usize;
    let mut n = 0usize;
    for (row_hat, row_true) in theta_hat.iter().zip(theta_true) {
        if row_hat.len() != row_true.len() {
            return Err(Error::ShapeError("subject counts differ".into()));
        }
        for (cell, truth) in row_hat.iter().zip(row_true) {
            let Some(th) = cell else { continue };
            if th.len() != truth.len() {
                return Err(Error::ShapeError("topic counts differ".into()));
            }
            hits += usize::from(argmax(th) == argmax(truth));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::ShapeError("no observed cells".into()));
    }
    Ok(hits as f64 / n as f64)
}

/// In-sample accuracy of a softmax regression of group on the proportions,
/// pooled over all observed (stage, subject) cells. Full-batch gradient
/// descent from zero with a fixed schedule; the intercept is not penalized.
pub fn group_accuracy(theta: &Proportions, groups: &[usize], n_groups: usize) -> Result<f64> {
    let mut xs: Vec<&[f64]> = Vec::new();
    let mut ys: Vec<usize> = Vec::new();
    for row in theta {
        if row.len() != groups.len() {
            return Err(Error::ShapeError("proportions and labels differ in subject count".into()));
        }
        for (i, cell) in row.iter().enumerate() {
            if let Some(th) = cell {
                xs.push(th);
                ys.push(groups[i]);
            }
        }
    }
    let k = xs.first().map_or(0, |x| x.len());
    if xs.iter().any(|x| x.len() != k) || ys.iter().any(|&g| g >= n_groups) {
        return Err(Error::ShapeError("inconsistent probe inputs".into()));
    }
    if xs.len() < n_groups * k || xs.is_empty() {
        return Err(Error::DegenerateDesign(format!(
            "{} samples for {} groups and {} features",
            xs.len(),
            n_groups,
            k
        )));
    }
    let n = xs.len() as f64;
    let d = k + 1;
    let mut w = vec![vec![0.0; d]; n_groups];
    let mut probs = vec![0.0; n_groups];
    for _ in 0..PROBE_ITERATIONS {
        let mut grad = vec![vec![0.0; d]; n_groups];
        for (x, &y) in xs.iter().zip(&ys) {
            for (g, p) in probs.iter_mut().enumerate() {
                *p = w[g][k] + w[g][..k].iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax_in_place(&mut probs);
            for g in 0..n_groups {
                let r = probs[g] - f64::from(u8::from(g == y));
                for (gj, xj) in grad[g][..k].iter_mut().zip(x.iter()) {
                    *gj += r * xj;
                }
                grad[g][k] += r;
            }
        }
        for g in 0..n_groups {
            for j in 0..d {
                let penalty = if j < k { PROBE_L2 * w[g][j] } else { 0.0 };
                w[g][j] -= PROBE_STEP * (grad[g][j] / n + penalty);
            }
        }
    }
    let mut hits = 0usize;
    for (x, &y) in xs.iter().zip(&ys) {
        let scores: Vec<f64> = w
            .iter()
            .map(|wg| wg[k] + wg[..k].iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        hits += usize::from(argmax(&scores) == y);
    }
    Ok(hits as f64 / n)
}

/// All metrics from topics and proportions; truth-dependent fields are
/// `None` without ground truth.
pub fn report(topics: &[Matrix], theta: &Proportions, corpus: &Corpus, truth: Option<&GroundTruth>) -> Result<MetricsReport> {
    let coherence = umass_coherence(topics, corpus, DEFAULT_TOP_N)?;
    let perplexity = perplexity(topics, theta, corpus)?;
    let group_acc = group_accuracy(theta, corpus.groups(), corpus.n_groups())?;
    let (kl_topics, dominant_acc, permutations) = match truth {
        Some(truth) => {
            let perms = align_topics(topics, &truth.beta)?;
            let kl = empirical_kl(&apply_alignment(topics, &perms), &truth.beta)?;
            let dom = dominant_accuracy(&align_proportions(theta, &perms), &truth.theta)?;
            (Some(kl), Some(dom), Some(perms))
        }
        None => (None, None, None),
    };
    Ok(MetricsReport {
        kl_topics,
        coherence,
        perplexity,
        dominant_acc,
        group_acc,
        permutations,
    })
}

/// Infers proportions from a fitted model and evaluates everything.
pub fn full_report(fitted: &FittedModel, corpus: &Corpus, truth: Option<&GroundTruth>) -> Result<MetricsReport> {
    let theta = infer_proportions(fitted, corpus)?;
    report(&fitted.topic_words(), &theta, corpus, truth)
}
