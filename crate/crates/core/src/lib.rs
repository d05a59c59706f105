//! Longitudinal topic modeling with counterfactual group separation.
//!
//! Documents are observed per subject over several stages, with covariates
//! and a fixed group label per subject. Topic proportions follow a learned
//! transition over the previous stage, and training pushes each subject's
//! posterior away from its counterfactual posteriors under the other group
//! labels.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod vi;

pub use corpus::{load_corpus, save_corpus, Corpus, Document, LoadOptions, Standardization};
pub use error::{Error, Result};
pub use eval::{full_report, MetricsReport};
pub use experiment::{run_pipeline, run_replicate, ExperimentConfig, Summary};
pub use linalg::Matrix;
pub use model::{Dims, GenerativeConfig, GenerativeParams};
pub use simulate::{simulate, GroundTruth, SimConfig};
pub use vi::{fit, fit_dynamic_topics, infer_proportions, DistanceKind, FittedModel, TrainConfig};
