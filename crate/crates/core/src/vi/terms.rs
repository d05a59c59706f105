//! Closed-form pieces of the objective: Gaussian KL, the two-group mutual
//! information term, the multi-group distances, and reparameterization. Every
//! term comes with its analytic gradient so the trainer can chain them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal Gaussian moments of one (document, stage) posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PosteriorMoments {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Gradient with respect to a [`PosteriorMoments`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentsGrad {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MomentsGrad {
    pub fn zeros(k: usize) -> Self {
        MomentsGrad {
            mu: vec![0.0; k],
            sigma: vec![0.0; k],
        }
    }
}

/// A reparameterized draw `η = μ + ε·σ` together with its noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub eta: Vec<f64>,
    pub eps: Vec<f64>,
}

pub fn reparameterize(moments: &PosteriorMoments, eps: &[f64]) -> Result<PosteriorSample> {
    if eps.len() != moments.dim() {
        return Err(Error::ShapeError("noise and moments differ in dimension".into()));
    }
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::NumericError("non-finite reparameterization noise".into()));
    }
    let eta = moments
        .mu
        .iter()
        .zip(&moments.sigma)
        .zip(eps)
        .map(|((m, s), e)| m + e * s)
        .collect();
    Ok(PosteriorSample {
        eta,
        eps: eps.to_vec(),
    })
}

fn check_scales(sigmas: &[f64]) -> Result<()> {
    match sigmas.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        Some(s) => Err(Error::NumericError(format!("scale must be positive and finite, got {s}"))),
        None => Ok(()),
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeError(format!("dimension {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `KL(N(μ_q, σ_q²) || N(μ_p, σ_p²))` for one dimension.
#[inline]
pub(crate) fn kl1(mu_q: f64, s_q: f64, mu_p: f64, s_p: f64) -> f64 {
    let d = mu_q - mu_p;
    (s_p / s_q).ln() + (s_q * s_q + d * d) / (2.0 * s_p * s_p) - 0.5
}

/// Partial derivatives of [`kl1`] with respect to `(μ_q, σ_q, μ_p, σ_p)`.
#[inline]
pub(crate) fn kl1_grad(mu_q: f64, s_q: f64, mu_p: f64, s_p: f64) -> [f64; 4] {
    let d = mu_q - mu_p;
    let vp = s_p * s_p;
    [d / vp, -1.0 / s_q + s_q / vp, -d / vp, 1.0 / s_p - (s_q * s_q + d * d) / (vp * s_p)]
}

/// Gaussian KL between the diagonal posterior and an isotropic prior with
/// standard deviation `sigma0`, summed over dimensions.
pub fn gaussian_kl_term(mu_q: &[f64], sigma_q: &[f64], mu0: &[f64], sigma0: f64) -> Result<f64> {
    check_dims(mu_q, sigma_q)?;
    check_dims(mu_q, mu0)?;
    check_scales(sigma_q)?;
    check_scales(&[sigma0])?;
    Ok(mu_q
        .iter()
        .zip(sigma_q)
        .zip(mu0)
        .map(|((&m, &s), &m0)| kl1(m, s, m0, sigma0))
        .sum())
}

/// KL between two diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl_diag(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> Result<f64> {
    check_dims(mu_q, sigma_q)?;
    check_dims(mu_q, mu_p)?;
    check_dims(mu_q, sigma_p)?;
    check_scales(sigma_q)?;
    check_scales(sigma_p)?;
    Ok((0..mu_q.len()).map(|k| kl1(mu_q[k], sigma_q[k], mu_p[k], sigma_p[k])).sum())
}

#[inline]
fn mi1(m: f64, s: f64, mc: f64, sc: f64) -> f64 {
    let d = m - mc;
    0.5 * (((s + sc) / (4.0 * s * sc)).ln() + d * d / (s + sc) + 0.5)
}

/// Gradient of [`mi1`] with respect to `(μ, σ, μ̃, σ̃)`.
#[inline]
fn mi1_grad(m: f64, s: f64, mc: f64, sc: f64) -> [f64; 4] {
    let d = m - mc;
    let sum = s + sc;
    let common = 1.0 / sum - d * d / (sum * sum);
    [d / sum, 0.5 * (common - 1.0 / s), -d / sum, 0.5 * (common - 1.0 / sc)]
}

/// Two-group mutual information term between the factual and one
/// counterfactual posterior, summed over dimensions. Scales are standard
/// deviations.
pub fn mi_term(mu_q: &[f64], sigma_q: &[f64], mu_cf: &[f64], sigma_cf: &[f64]) -> Result<f64> {
    check_dims(mu_q, sigma_q)?;
    check_dims(mu_q, mu_cf)?;
    check_dims(mu_q, sigma_cf)?;
    check_scales(sigma_q)?;
    check_scales(sigma_cf)?;
    Ok((0..mu_q.len()).map(|k| mi1(mu_q[k], sigma_q[k], mu_cf[k], sigma_cf[k])).sum())
}

/// Group-separation distance between the factual posterior and its
/// counterfactuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    None,
    #[default]
    MiJsd,
    InfoRadius,
    AvgDivergence,
    L1,
    L2,
    Linf,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 7] = [
        DistanceKind::None,
        DistanceKind::MiJsd,
        DistanceKind::InfoRadius,
        DistanceKind::AvgDivergence,
        DistanceKind::L1,
        DistanceKind::L2,
        DistanceKind::Linf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::None => "none",
            DistanceKind::MiJsd => "mi_jsd",
            DistanceKind::InfoRadius => "info_radius",
            DistanceKind::AvgDivergence => "avg_divergence",
            DistanceKind::L1 => "l1",
            DistanceKind::L2 => "l2",
            DistanceKind::Linf => "linf",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistanceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownDistance(s.to_string()))
    }
}

/// Distance between the factual posterior and the counterfactual posteriors
/// of every other group.
pub fn group_distance(kind: DistanceKind, factual: &PosteriorMoments, counterfactuals: &[PosteriorMoments]) -> Result<f64> {
    validate_group(factual, counterfactuals)?;
    Ok(distance_with_grad(kind, factual, counterfactuals, false).0)
}

fn validate_group(factual: &PosteriorMoments, counterfactuals: &[PosteriorMoments]) -> Result<()> {
    if counterfactuals.is_empty() {
        return Err(Error::ShapeError("group distance needs at least one counterfactual".into()));
    }
    check_dims(&factual.mu, &factual.sigma)?;
    check_scales(&factual.sigma)?;
    for cf in counterfactuals {
        check_dims(&factual.mu, &cf.mu)?;
        check_dims(&factual.mu, &cf.sigma)?;
        check_scales(&cf.sigma)?;
    }
    Ok(())
}

/// Value and, when `want_grad`, gradients with respect to the factual and
/// each counterfactual posterior.
pub(crate) fn distance_with_grad(
    kind: DistanceKind,
    factual: &PosteriorMoments,
    cfs: &[PosteriorMoments],
    want_grad: bool,
) -> (f64, MomentsGrad, Vec<MomentsGrad>) {
    let k = factual.dim();
    let c = cfs.len();
    let mut g_f = MomentsGrad::zeros(k);
    let mut g_c: Vec<MomentsGrad> = if want_grad {
        (0..c).map(|_| MomentsGrad::zeros(k)).collect()
    } else {
        Vec::new()
    };
    let mut value = 0.0;
    match kind {
        DistanceKind::None => {}
        DistanceKind::MiJsd => {
            for (ci, cf) in cfs.iter().enumerate() {
                for d in 0..k {
                    let (m, s, mc, sc) = (factual.mu[d], factual.sigma[d], cf.mu[d], cf.sigma[d]);
                    value += mi1(m, s, mc, sc);
                    if want_grad {
                        let g = mi1_grad(m, s, mc, sc);
                        g_f.mu[d] += g[0];
                        g_f.sigma[d] += g[1];
                        g_c[ci].mu[d] += g[2];
                        g_c[ci].sigma[d] += g[3];
                    }
                }
            }
        }
        DistanceKind::InfoRadius => {
            // Mean KL of each member to the moment-matched Gaussian of the
            // equal-weight mixture. Per dimension this reduces to
            // ½·log v̄ − (1/G)·Σ_g log σ_g.
            let g = (c + 1) as f64;
            for d in 0..k {
                let members = std::iter::once(factual).chain(cfs.iter());
                let (mut m1, mut m2) = (0.0, 0.0);
                for q in members.clone() {
                    m1 += q.mu[d];
                    m2 += q.sigma[d] * q.sigma[d] + q.mu[d] * q.mu[d];
                }
                let mean = m1 / g;
                let var = m2 / g - mean * mean;
                value += 0.5 * var.ln() - members.clone().map(|q| q.sigma[d].ln()).sum::<f64>() / g;
                if want_grad {
                    let gm = |mu: f64| (mu - mean) / (g * var);
                    let gs = |s: f64| s / (g * var) - 1.0 / (g * s);
                    g_f.mu[d] += gm(factual.mu[d]);
                    g_f.sigma[d] += gs(factual.sigma[d]);
                    for (ci, cf) in cfs.iter().enumerate() {
                        g_c[ci].mu[d] += gm(cf.mu[d]);
                        g_c[ci].sigma[d] += gs(cf.sigma[d]);
                    }
                }
            }
        }
        DistanceKind::AvgDivergence => {
            let w = 1.0 / c as f64;
            for (ci, cf) in cfs.iter().enumerate() {
                for d in 0..k {
                    let (m, s, mc, sc) = (factual.mu[d], factual.sigma[d], cf.mu[d], cf.sigma[d]);
                    value += w * kl1(m, s, mc, sc);
                    if want_grad {
                        let g = kl1_grad(m, s, mc, sc);
                        g_f.mu[d] += w * g[0];
                        g_f.sigma[d] += w * g[1];
                        g_c[ci].mu[d] += w * g[2];
                        g_c[ci].sigma[d] += w * g[3];
                    }
                }
            }
        }
        DistanceKind::L1 | DistanceKind::L2 | DistanceKind::Linf => {
            let w = 1.0 / c as f64;
            for (ci, cf) in cfs.iter().enumerate() {
                let diff: Vec<f64> = factual.mu.iter().zip(&cf.mu).map(|(a, b)| a - b).collect();
                let (norm, grad): (f64, Vec<f64>) = match kind {
                    DistanceKind::L1 => (diff.iter().map(|x| x.abs()).sum(), diff.iter().map(|x| sign(*x)).collect()),
                    DistanceKind::L2 => {
                        let n = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let g = if n > 0.0 { diff.iter().map(|x| x / n).collect() } else { vec![0.0; k] };
                        (n, g)
                    }
                    _ => {
                        let mut best = 0;
                        for (d, x) in diff.iter().enumerate() {
                            if x.abs() > diff[best].abs() {
                                best = d;
                            }
                        }
                        let mut g = vec![0.0; k];
                        if k > 0 {
                            g[best] = sign(diff[best]);
                        }
                        (diff.get(best).map_or(0.0, |x| x.abs()), g)
                    }
                };
                value += w * norm;
                if want_grad {
                    for d in 0..k {
                        g_f.mu[d] += w * grad[d];
                        g_c[ci].mu[d] -= w * grad[d];
                    }
                }
            }
        }
    }
    (value, g_f, g_c)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
