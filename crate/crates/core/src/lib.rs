//! Score-based sensitivity measures for elicitable functionals.

// Parameter checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod functionals;
pub mod models;
pub mod neural;
pub mod scores;
pub mod sensitivity;
pub mod simulation;
pub mod special;
pub mod sum;

pub use error::{Error, Result};
pub use functionals::{discrete_functional, empirical_functional, FunctionalSpec, Prediction};
pub use models::{ConditionalRule, ModelSpec, Subset};
pub use neural::{NetConfig, TrainConfig, TrainedNet};
pub use scores::{evaluate, ConvexGenerator, IncreasingGenerator, MurphyAxis, MurphyGrid, ScoreSpec};
pub use sensitivity::{estimate_sensitivity, interaction_information, ConditionalModel, SensitivityEstimate};
pub use simulation::{sample_factors, sample_model, CopulaSpec, MarginalSpec, Matrix, SampleSet};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    pub struct Quickstart;
    #[doc = include_str!("../../../book/src/scores.md")]
    pub struct Scores;
    #[doc = include_str!("../../../book/src/murphy.md")]
    pub struct Murphy;
    #[doc = include_str!("../../../book/src/neural.md")]
    pub struct Neural;
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    pub struct Reproducibility;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
