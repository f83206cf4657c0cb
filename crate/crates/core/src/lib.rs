//! Rare-event statistical model checking for guarded-command Markov models.
//!
//! Traces of the embedded jump chain are simulated under a per-command tilt
//! `λ`, properties are monitored on the fly, and the tilt is tuned by an
//! iterated cross-entropy update. Small models can be solved exactly with the
//! explicit-state engine in [`oracle`] to check the estimates.
//!
//! All numeric code is generic over [`Real`]; the aliases at the crate root
//! fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ce;
pub mod estimate;
pub mod expr;
pub mod lang;
pub mod model;
pub mod monitor;
pub mod oracle;
pub mod property;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod simulate;

pub use lang::{parse_model, parse_property, print_model, ParseError};
pub use model::{transition_distribution, Deadlock, Model, ModelError, State};
pub use property::PropertyAst;
pub use scalar::Real;

pub type ParamVector = model::ParamVector<f64>;
pub type TraceSummary = simulate::TraceSummary<f64>;
pub type EstimateResult = estimate::EstimateResult<f64>;
pub type CeConfig = ce::CeConfig<f64>;
pub type CeRun = ce::CeRun<f64>;
pub type ExplicitChain = oracle::ExplicitChain<f64>;
pub type ExactResult = oracle::ExactResult<f64>;
pub type CeReference = oracle::CeReference<f64>;
