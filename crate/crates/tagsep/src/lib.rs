//! Event-driven simulation and analytics for a driven tagged particle in a
//! one-dimensional symmetric exclusion process with a removal rule.
//!
//! The model: environment particles perform a symmetric range-two exclusion
//! walk (rates `p1`, `p2`), a tagged particle jumps one step to the right at
//! rate `q1`, and an environment particle is deleted once it jumps strictly
//! to the left of the tagged particle. Starting from a Bernoulli(`rho`)
//! environment, the tagged displacement `X_t` obeys a law of large numbers
//! with speed `m = p2*q1/(p2 + rho*q1)`, and a functional CLT whenever `m`
//! exceeds the boundary drift `w = p1 + 3*p2`.
//!
//! Modules:
//!
//! - [`model`]: rates, derived constants, regime checks
//! - [`kernel`]: seeded RNG streams and Gillespie event selection
//! - [`cups`]: truncated labeled-cup reference simulator (distributional oracle)
//! - [`color_one`]: lazy color process driving the LLN/marginal experiments
//! - [`color_two`]: stopped boundary process, regeneration cycles, martingales
//! - [`analytics`]: marginal solver, MGF machinery, regenerative estimators
//! - [`oracle`]: capped finite-state CTMC ground truth (first-passage MGFs,
//!   stationary marginals)
//! - [`config`], [`report`], [`experiments`]: reproducible experiment harness

pub mod analytics;
pub mod color_one;
pub mod color_two;
pub mod config;
pub mod cups;
pub mod experiments;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod report;
pub mod stats;

pub use config::{ExperimentConfig, ExperimentKind};
pub use kernel::{EventCatalog, RngStream};
pub use model::{DerivedConstants, Rates};
pub use report::RunReport;
