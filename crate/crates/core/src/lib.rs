//! Binary restricted Boltzmann machines trained with contrastive divergence,
//! with exact likelihood evaluation on enumerable state spaces and the
//! neighborhood ratio ξ as a partition-function-free stopping statistic.
//!
//! - [`model`]: parameters, energies, conditionals, Gibbs sampling
//! - [`training`]: CD-n gradients, momentum SGD, the training loop
//! - [`exact`]: partition function, log-likelihood and gradient by enumeration
//! - [`neighborhood`]: Hamming shells around a training set, ξ
//! - [`datasets`]: bars and stripes, labeled shifter, random problems
//! - [`metrics`]: reconstruction errors, monitors, traces, stop detection
//! - [`experiment`]: multi-seed experiment runner, sampling, PBM output

pub mod datasets;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod neighborhood;
pub mod training;

pub use datasets::Dataset;
pub use error::{RbmError, Result};
pub use metrics::{StopDecision, TraceSeries};
pub use model::{BinaryState, RbmParams, RngStream};
pub use neighborhood::NeighborhoodIndex;
pub use training::{GradientEstimate, TrainConfig};
