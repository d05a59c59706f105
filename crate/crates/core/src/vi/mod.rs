//! Variational inference: amortized encoders, the longitudinal objective and
//! its training loop.

pub mod dynamic;
pub mod encoder;
pub mod loss;
pub mod optim;
pub mod terms;
pub mod train;

pub use dynamic::{fit_dynamic_topics, topic_kl_chain};
pub use encoder::{counterfactual_encode, encode, EncoderParams, EncoderStage, Mlp, SIGMA_MIN};
pub use loss::{draw_noise, longitudinal_loss, LossOutput, LossTerms};
pub use optim::Optimizer;
pub use terms::{
    gaussian_kl_diag, gaussian_kl_term, group_distance, mi_term, reparameterize, DistanceKind, PosteriorMoments,
    PosteriorSample,
};
pub use train::{fit, infer_proportions, init_params, train, EpochLog, FittedModel, Proportions, TrainConfig};
