//! Per-stage amortized encoders for the proportion posterior.
//!
//! Each stage owns a mean net and a scale net with the same layout: one tanh
//! hidden layer over `[relative word frequencies, X_t, group encoding,
//! previous posterior mean]`, then an affine map to `K` outputs. The scale
//! head is `max(softplus(o), SIGMA_MIN)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::linalg::{axpy, sigmoid, softplus, Dense};
use crate::model::{encode_group, group_encoding_dim, Dims};
use crate::vi::terms::{MomentsGrad, PosteriorMoments};

pub const SIGMA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Dense,
    pub out: Dense,
}

impl Mlp {
    fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Mlp {
            hidden: Dense::zeros(inputs, hidden),
            out: Dense::zeros(hidden, outputs),
        }
    }

    fn slices(&self) -> [&[f64]; 4] {
        let [a, b] = self.hidden.slices();
        let [c, d] = self.out.slices();
        [a, b, c, d]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        let [a, b] = self.hidden.slices_mut();
        let [c, d] = self.out.slices_mut();
        [a, b, c, d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderStage {
    pub mean: Mlp,
    pub scale: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub vocab: usize,
    pub features: usize,
    pub groups: usize,
    pub topics: usize,
    pub hidden: usize,
    pub stages: Vec<EncoderStage>,
}

/// Non-group part of one encoder input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderInput<'a> {
    pub bow: &'a [(usize, f64)],
    pub x: &'a [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct GroupCache {
    h_mean: Vec<f64>,
    h_scale: Vec<f64>,
    o_scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct StageCache {
    groups: Vec<GroupCache>,
}

impl EncoderParams {
    pub fn zeros(dims: &Dims, hidden: usize) -> Self {
        let e = group_encoding_dim(dims.groups);
        let inputs = dims.vocab + dims.features + e + dims.topics;
        let stage = EncoderStage {
            mean: Mlp::zeros(inputs, hidden, dims.topics),
            scale: Mlp::zeros(inputs, hidden, dims.topics),
        };
        EncoderParams {
            vocab: dims.vocab,
            features: dims.features,
            groups: dims.groups,
            topics: dims.topics,
            hidden,
            stages: vec![stage; dims.stages],
        }
    }

    /// Gaussian weights with standard deviation `std`, zero biases.
    pub fn random(dims: &Dims, hidden: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(dims, hidden);
        let normal = Normal::new(0.0, std).map_err(|e| Error::ConfigError(e.to_string()))?;
        for stage in p.stages.iter_mut() {
            for mlp in [&mut stage.mean, &mut stage.scale] {
                for w in mlp.hidden.weight.as_mut_slice().iter_mut().chain(mlp.out.weight.as_mut_slice()) {
                    *w = normal.sample(rng);
                }
            }
        }
        Ok(p)
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn group_dim(&self) -> usize {
        group_encoding_dim(self.groups)
    }

    fn y_offset(&self) -> usize {
        self.vocab + self.features
    }

    fn prev_offset(&self) -> usize {
        self.vocab + self.features + self.group_dim()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.stages
            .iter()
            .flat_map(|s| s.mean.slices().into_iter().chain(s.scale.slices()))
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.stages
            .iter_mut()
            .flat_map(|s| {
                let EncoderStage { mean, scale } = s;
                mean.slices_mut().into_iter().chain(scale.slices_mut())
            })
            .collect()
    }

    fn check(&self, doc: &Document, x: &[f64], group: usize, prev_mean: &[f64], t: usize) -> Result<()> {
        if t >= self.stages.len() {
            return Err(Error::ShapeError(format!("stage {t} out of range")));
        }
        if x.len() != self.features {
            return Err(Error::ShapeError(format!("{} covariates, encoder expects {}", x.len(), self.features)));
        }
        if prev_mean.len() != self.topics {
            return Err(Error::ShapeError("previous mean has wrong length".into()));
        }
        if group >= self.groups {
            return Err(Error::ShapeError(format!("group {group} out of range")));
        }
        if let Some(&(w, _)) = doc.entries().iter().find(|(w, _)| *w >= self.vocab) {
            return Err(Error::VocabMismatch {
                index: w,
                vocab_size: self.vocab,
            });
        }
        if x.iter().chain(prev_mean).any(|v| !v.is_finite()) {
            return Err(Error::NumericError("non-finite encoder input".into()));
        }
        Ok(())
    }

    /// Evaluates stage `t` for several group encodings that share the same
    /// words and covariates.
    pub(crate) fn forward_groups(
        &self,
        t: usize,
        input: EncoderInput<'_>,
        ys: &[&[f64]],
        prevs: &[&[f64]],
    ) -> (Vec<PosteriorMoments>, StageCache) {
        let stage = &self.stages[t];
        let base = |mlp: &Mlp| {
            let mut a = mlp.hidden.bias.clone();
            mlp.hidden.accumulate_sparse(0, input.bow, &mut a);
            mlp.hidden.accumulate(self.vocab, input.x, &mut a);
            a
        };
        let base_mean = base(&stage.mean);
        let base_scale = base(&stage.scale);
        let finish = |mlp: &Mlp, base: &[f64], y: &[f64], prev: &[f64]| {
            let mut a = base.to_vec();
            mlp.hidden.accumulate(self.y_offset(), y, &mut a);
            mlp.hidden.accumulate(self.prev_offset(), prev, &mut a);
            a.iter_mut().for_each(|v| *v = v.tanh());
            let mut o = vec![0.0; self.topics];
            mlp.out.forward(&a, &mut o);
            (a, o)
        };
        let mut moments = Vec::with_capacity(ys.len());
        let mut groups = Vec::with_capacity(ys.len());
        for (y, prev) in ys.iter().zip(prevs) {
            let (h_mean, mu) = finish(&stage.mean, &base_mean, y, prev);
            let (h_scale, o_scale) = finish(&stage.scale, &base_scale, y, prev);
            let sigma = o_scale.iter().map(|&o| softplus(o).max(SIGMA_MIN)).collect();
            moments.push(PosteriorMoments { mu, sigma });
            groups.push(GroupCache {
                h_mean,
                h_scale,
                o_scale,
            });
        }
        (moments, StageCache { groups })
    }

    /// Backward pass of [`forward_groups`](Self::forward_groups): accumulates
    /// parameter gradients into `grad` and adds each group's gradient with
    /// respect to its previous mean into `d_prevs`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_groups(
        &self,
        grad: &mut EncoderParams,
        t: usize,
        input: EncoderInput<'_>,
        ys: &[&[f64]],
        prevs: &[&[f64]],
        cache: &StageCache,
        d_moments: &[MomentsGrad],
        d_prevs: &mut [Vec<f64>],
    ) {
        let stage = &self.stages[t];
        let gstage = &mut grad.stages[t];
        let (y_off, prev_off) = (self.y_offset(), self.prev_offset());
        let h = self.hidden;
        let mut shared_mean = vec![0.0; h];
        let mut shared_scale = vec![0.0; h];
        for (g, gc) in cache.groups.iter().enumerate() {
            let d = &d_moments[g];
            let d_o_scale: Vec<f64> = gc
                .o_scale
                .iter()
                .zip(&d.sigma)
                .map(|(&o, &ds)| if softplus(o) > SIGMA_MIN { ds * sigmoid(o) } else { 0.0 })
                .collect();
            for (mlp, gmlp, act, d_o, shared) in [
                (&stage.mean, &mut gstage.mean, &gc.h_mean, &d.mu, &mut shared_mean),
                (&stage.scale, &mut gstage.scale, &gc.h_scale, &d_o_scale, &mut shared_scale),
            ] {
                Dense::grad_weight(&mut gmlp.out, 0, act, d_o);
                axpy(1.0, d_o, &mut gmlp.out.bias);
                let mut d_a = vec![0.0; h];
                mlp.out.input_grad(0, d_o, &mut d_a);
                for (da, a) in d_a.iter_mut().zip(act.iter()) {
                    *da *= 1.0 - a * a;
                }
                Dense::grad_weight(&mut gmlp.hidden, y_off, ys[g], &d_a);
                Dense::grad_weight(&mut gmlp.hidden, prev_off, prevs[g], &d_a);
                mlp.hidden.input_grad(prev_off, &d_a, &mut d_prevs[g]);
                axpy(1.0, &d_a, shared);
            }
        }
        for (gmlp, shared) in [(&mut gstage.mean, &shared_mean), (&mut gstage.scale, &shared_scale)] {
            Dense::grad_weight_sparse(&mut gmlp.hidden, 0, input.bow, shared);
            Dense::grad_weight(&mut gmlp.hidden, self.vocab, input.x, shared);
            axpy(1.0, shared, &mut gmlp.hidden.bias);
        }
    }
}

/// Factual posterior moments of one (document, stage).
pub fn encode(
    params: &EncoderParams,
    doc: &Document,
    x: &[f64],
    group: usize,
    prev_mean: &[f64],
    t: usize,
) -> Result<PosteriorMoments> {
    params.check(doc, x, group, prev_mean, t)?;
    let bow = doc.frequencies();
    let y = encode_group(group, params.groups);
    let (mut m, _) = params.forward_groups(t, EncoderInput { bow: &bow, x }, &[&y], &[prev_mean]);
    Ok(m.remove(0))
}

/// Posterior moments under every group other than `group`, in ascending
/// group order, from the same encoder.
pub fn counterfactual_encode(
    params: &EncoderParams,
    doc: &Document,
    x: &[f64],
    group: usize,
    prev_mean: &[f64],
    t: usize,
) -> Result<Vec<PosteriorMoments>> {
    params.check(doc, x, group, prev_mean, t)?;
    let bow = doc.frequencies();
    let ys: Vec<Vec<f64>> = (0..params.groups).filter(|&g| g != group).map(|g| encode_group(g, params.groups)).collect();
    let y_refs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    let prevs = vec![prev_mean; ys.len()];
    Ok(params.forward_groups(t, EncoderInput { bow: &bow, x }, &y_refs, &prevs).0)
}
