//! Monte Carlo pricing of generalized multiple stopping problems.
//!
//! The engine prices multiple-exercise contracts (swing options and related
//! cashflows) whose exercise chains are restricted by an integer volume cap per
//! date and a refraction period between exercise dates. It produces a
//! low-biased estimate from a regression-based exercise policy and a
//! high-biased estimate from a pathwise dual built on nested simulation of the
//! policy's value process, and combines both into a confidence interval.
//!
//! Modules, bottom up:
//!
//! * [`model`]: exponential Ornstein-Uhlenbeck price paths with keyed,
//!   thread-count independent random streams.
//! * [`contract`]: cashflow presets, volume profiles, refraction rules and
//!   exercise-chain admissibility.
//! * [`regress`]: least-squares Monte Carlo fit of one-step and
//!   refraction-step continuation values.
//! * [`primal`]: the exercise policy and the lower estimate.
//! * [`dual`]: nested value-process samples, the recursive pathwise maximum,
//!   the upper estimate and the confidence interval.
//! * [`oracle`]: exact solvers on small finite trees.
//! * [`experiment`]: end-to-end runs and result tables.

pub mod contract;
pub mod dual;
mod error;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod primal;
pub mod regress;
mod stats;

pub use contract::{Cashflow, ContractSpec, ExerciseChain, Refraction, VolumeProfile};
pub use dual::{ConfidenceInterval, SnellPath, SnellSample, UpperEstimate};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, PresetKind, ResultRow, VolumeKind};
pub use model::{MarketModel, PathSet, PricePath};
pub use primal::{LowerEstimate, PolicyDecision, PolicyOutcome};
pub use regress::{BasisFunction, BasisSet, ContinuationKind, ContinuationTable};
