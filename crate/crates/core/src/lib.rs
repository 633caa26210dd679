//! Local prediction pools.
//!
//! Experts issue predictive distributions; a decision maker combines them in
//! a linear pool whose weights depend on where the forecast is made in a
//! pooling space. Each expert's local predictive ability is estimated by the
//! caliper method, the mean historical log score among past predictions
//! within a standardized distance `rho` of the query point, and turned into
//! weights by a softmax. Equal-weight, globally optimized and locally
//! optimized pools are provided for comparison, together with a rolling
//! evaluation harness and a simulation study with an exact oracle.

pub mod config;
pub mod density;
pub mod elpd;
pub mod error;
pub mod evaluation;
pub mod experts;
pub mod io;
pub mod pools;
pub mod quadrature;
pub mod simulation;
pub mod space;

pub use density::{pooled_log_density, LogDensity, PredictiveDensity};
pub use elpd::{caliper_elpd, true_local_elpd, LocalElpdEstimate};
pub use error::{PoolError, Result};
pub use evaluation::{rolling_evaluate, EvaluationConfig, Observation, Scheme, StepResult};
pub use experts::{ExpertScoreTable, NigPosterior, NigPrior};
pub use pools::{
    assemble_pool, equal_weights, local_opt_weights, optimize_pool_weights, softmax_weights, PoolWeights, ScalingRule,
};
pub use simulation::{generate_dgp, DgpConfig, SimulationConfig};
pub use space::{History, PoolingPoint, PredictionRecord};
